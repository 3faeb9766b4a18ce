"""
Spectra service: CSV ingestion, validation, persistence and train/test splits.

File format: one spectrum per row, comma-separated integer counts, optional
single header row. When the header's last column is `label`, each row ends with
a label string (background | injected). Lines starting with `#` before the data
carry `key=value` provenance entries; keys are non-empty and free of `=`, and
neither side spans lines or has surrounding whitespace. Files must be UTF-8.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from ..exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    InsufficientDataError,
    ParameterError,
    SpectrumValidationError,
)
from ..schemas import Label, SpectraSet, Spectrum

logger = logging.getLogger(__name__)

LABEL_COLUMN = 'label'


def _parse_count(cell: str, path: str, row: int, column: int) -> int:
    text = cell.strip()
    try:
        value = int(text)
    except ValueError:
        raise SpectrumValidationError(
            f"non-integer count {text!r}", path=path, row=row, column=column
        ) from None
    if value < 0:
        raise SpectrumValidationError(
            f"negative count {value}", path=path, row=row, column=column
        )
    return value


def _is_numeric(cell: str) -> bool:
    try:
        float(cell.strip())
    except ValueError:
        return False
    return True


def _is_header(cells: List[str]) -> bool:
    """A header row has no numeric cell at all."""
    return not any(_is_numeric(cell) for cell in cells)


def load_spectra(path, expected_bins: Optional[int] = None) -> SpectraSet:
    """
    Load and validate a spectra CSV.

    Rows are numbered from 1 counting data rows only (header and metadata lines
    excluded), columns from 1. bin_count is inferred from the first row unless
    expected_bins is given.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        lines = raw.decode('utf-8').splitlines()
    except UnicodeDecodeError as exc:
        line = raw.count(b'\n', 0, exc.start) + 1
        raise SpectrumValidationError(
            f"not UTF-8 text: byte 0x{raw[exc.start]:02x} on line {line}", path=str(path)
        ) from None

    meta: Dict[str, str] = {}
    body = []
    for line in lines:
        if not body and line.startswith('#'):
            key, _, value = line[1:].strip().partition('=')
            if key:
                meta[key.strip()] = value.strip()
            continue
        if line.strip():
            body.append(line)

    if not body:
        raise EmptyInputError(f"{path} contains no spectra")

    reader = list(csv.reader(body))
    has_labels = False
    if _is_header(reader[0]):
        header = [cell.strip() for cell in reader[0]]
        has_labels = bool(header) and header[-1] == LABEL_COLUMN
        reader = reader[1:]
        if not reader:
            raise EmptyInputError(f"{path} has a header but no spectra")

    bins = expected_bins
    rows: List[List[int]] = []
    labels: List[Label] = []
    for row_number, cells in enumerate(reader, start=1):
        if has_labels:
            if not cells:
                raise DimensionMismatchError(
                    f"{path}: row {row_number} is empty", row=row_number
                )
            raw_label = cells[-1].strip()
            try:
                labels.append(Label(raw_label))
            except ValueError:
                raise SpectrumValidationError(
                    f"unknown label {raw_label!r}", path=str(path),
                    row=row_number, column=len(cells),
                ) from None
            cells = cells[:-1]
        if bins is None:
            bins = len(cells)
        if len(cells) != bins:
            raise DimensionMismatchError(
                f"{path}: row {row_number} has {len(cells)} bins, expected {bins}",
                expected=bins, actual=len(cells), row=row_number,
            )
        rows.append([
            _parse_count(cell, str(path), row_number, column)
            for column, cell in enumerate(cells, start=1)
        ])

    if bins is not None and bins < 1:
        raise DimensionMismatchError(f"{path}: rows have no count columns", expected=bins)

    spectra = SpectraSet(
        counts=np.array(rows, dtype=np.int64),
        labels=tuple(labels) if has_labels else None,
        meta=meta,
    )
    logger.info(f"Loaded {spectra.n_rows} spectra with {spectra.bin_count} bins from {path}")
    return spectra


def _check_meta(key, value) -> None:
    """Reject a provenance entry that a `# key=value` line cannot carry back."""
    key, value = str(key), str(value)
    if not key or '=' in key or key != key.strip():
        raise ParameterError(f"metadata key {key!r} must be non-empty, without '=' or surrounding spaces")
    if len(f'{key}={value}'.splitlines()) != 1 or value != value.strip():
        raise ParameterError(
            f"metadata {key!r} value {value!r} must be one line without surrounding spaces"
        )


def save_spectra(
spectra: SpectraSet, path) -> None:
    """Write a spectra set as CSV; load_spectra reproduces it exactly."""
    path = Path(path)
    header = [f'bin_{j}' for j in range(spectra.bin_count)]
    if spectra.labels is not None:
        header.append(LABEL_COLUMN)
    for key, value in spectra.meta.items():
        _check_meta(key, value)
    try:
        with path.open('w', encoding='utf-8', newline='') as handle:
            for key, value in sorted(spectra.meta.items()):
                handle.write(f'# {key}={value}\n')
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(header)
            for i, row in enumerate(spectra.counts):
                cells = [str(int(v)) for v in row]
                if spectra.labels is not None:
                    cells.append(spectra.labels[i].value)
                writer.writerow(cells)
    except OSError as exc:
        logger.error(f"Error writing spectra to {path}: {exc}")
        raise
    logger.info(f"Saved {spectra.n_rows} spectra to {path}")


def split(spectra: SpectraSet, train_fraction: float, seed: int) -> Tuple[SpectraSet, SpectraSet]:
    """
    Seeded random partition into (train, test).

    The train side gets round(N * train_fraction) rows, clipped so both sides
    keep at least one row.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = spectra.n_rows
    if n < 2:
        raise InsufficientDataError(f"split needs at least 2 spectra, got {n}")

    n_train = int(np.clip(round(n * train_fraction), 1, n - 1))
    order = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return spectra.subset(train_idx), spectra.subset(test_idx)


def as_spectrum(x, bin_count: int) -> Spectrum:
    """Validate one spectrum against a bin count and return it as a float vector."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != bin_count:
        raise DimensionMismatchError(
            f"spectrum has {arr.shape[-1] if arr.ndim else 0} bins, model expects {bin_count}",
            expected=bin_count, actual=arr.shape[-1] if arr.ndim else 0,
        )
    return arr


def as_count_matrix(spectra, bin_count: int) -> np.ndarray:
    """Accept a SpectraSet or a 2-D array and check its bin count."""
    counts = spectra.counts if isinstance(spectra, SpectraSet) else np.asarray(spectra)
    if counts.ndim != 2 or counts.shape[1] != bin_count:
        actual = counts.shape[-1] if counts.ndim else 0
        raise DimensionMismatchError(
            f"spectra have {actual} bins, model expects {bin_count}",
            expected=bin_count, actual=actual,
        )
    return counts.astype(float)


def labeled(spectra: SpectraSet, label: Label) -> SpectraSet:
    """Return a copy of the set with every row carrying label."""
    return SpectraSet(counts=spectra.counts, labels=(label,) * spectra.n_rows, meta=dict(spectra.meta))


def build_spectra(counts, labels=None, meta=None) -> SpectraSet:
    """SpectraSet constructor that reports invariant violations as SpectrumValidationError."""
    try:
        return SpectraSet(counts=counts, labels=labels, meta=meta or {})
    except ValidationError as exc:
        raise SpectrumValidationError(exc.errors()[0]['msg']) from exc
