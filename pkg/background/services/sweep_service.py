"""
Sweep harness: fit, inject, score and compare over (distance, method, k, restart).

A cell is one (method, k, restart) triple: it fits (or reuses) a model, scores
the negative test set once, then for every distance injects the positives,
scores them and records the SKL. Every random draw takes a seed from
derive_seed(master, purpose, coordinates), so cells can run in any order or in
parallel and still give identical results.
"""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError
from scipy import stats

from ..exceptions import BackgroundError, ParameterError, SweepCellError
from ..schemas import (
    BestRecord,
    GaussianPcaModel,
    Method,
    SourceModel,
    SpectraSet,
    SweepConfig,
    SweepRecord,
    SweepResult,
)
from . import gaussian_pca_service, injector_service, poisson_epca_service, skl_service
from .manifest_service import derive_seed
from .model_service import score_spectra

logger = logging.getLogger(__name__)

RAW_COLUMNS = ['distance_m', 'method', 'k', 'restart', 'skl']
SUMMARY_COLUMNS = ['distance_m', 'method', 'k', 'q20', 'median', 'q80']
BEST_COLUMNS = ['distance_m', 'method', 'best_k', 'max_skl']

SPEARMAN_THRESHOLD = -0.8
NEAR_CEILING_FRACTION = 0.9

Cell = Tuple[Method, int, int]
Progress = Callable[[Cell, int, int], None]


def sweep_config(**values) -> SweepConfig:
    """SweepConfig from loose values, reporting bad values as ParameterError."""
    try:
        return SweepConfig(**{key: value for key, value in values.items() if value is not None})
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ParameterError(f"{'.'.join(map(str, error['loc']))}: {error['msg']}") from exc


def _run_cell(cell: Cell, train: SpectraSet, test: SpectraSet, source: SourceModel,
              config: SweepConfig, gaussian_models: Dict[int, GaussianPcaModel]) -> Dict[float, float]:
    method, k, restart = cell
    try:
        if method == Method.GAUSSIAN:
            model = gaussian_models[k]
        else:
            fit_opts = config.fit.model_copy(update={
                'seed': derive_seed(config.seed, 'fit', method.value, k, restart),
                'restarts': 1,
            })
            model = poisson_epca_service.fit_poisson(train, k, fit_opts)
        neg_scores = score_spectra(model, test, config.encode, config.score_kind)
    except Exception as exc:
        raise SweepCellError(exc, method.value, k, restart) from exc

    skl = {}
    for distance in config.distances:
        try:
            positives = injector_service.inject(
                test, source, distance,
                seed=derive_seed(config.seed, 'inject', distance, restart),
                mode=config.injection_mode,
            )
            pos_scores = score_spectra(model, positives, config.encode, config.score_kind)
            skl[distance] = skl_service.skl_divergence(
                neg_scores, pos_scores, config.bins, config.smoothing
            ).value
        except Exception as exc:
            raise SweepCellError(exc, method.value, k, restart, distance) from exc
    return skl


def run_sweep(train: SpectraSet, test_background: SpectraSet, source: SourceModel,
              config: Optional[SweepConfig] = None,
              progress: Optional[Progress] = None) -> SweepResult:
    """
    Full distance x method x k x restart evaluation.

    Gaussian PCA is deterministic, so it is fitted once per k and its restarts
    differ only in the injected positives; Poisson PCA is refitted per restart.

    progress(cell, done, total) is called once per finished (method, k, restart)
    cell, after every distance of that cell has been scored; total is
    methods x k values x restarts.
    """
    config = config or SweepConfig()
    if source.bin_count != train.bin_count or test_background.bin_count != train.bin_count:
        raise ParameterError(
            f"bin counts disagree: train {train.bin_count}, test {test_background.bin_count}, "
            f"source {source.bin_count}"
        )

    gaussian_models: Dict[int, GaussianPcaModel] = {}
    if Method.GAUSSIAN in config.methods:
        for k in config.k_values:
            try:
                gaussian_models[k] = gaussian_pca_service.fit_gaussian(train, k)
            except BackgroundError as exc:
                raise SweepCellError(exc, Method.GAUSSIAN.value, k, 0) from exc

    cells: List[Cell] = [
        (method, k, restart)
        for method in config.methods
        for k in config.k_values
        for restart in range(config.restarts)
    ]
    results: Dict[Cell, Dict[float, float]] = {}
    total = len(cells)

    def finished(cell: Cell, values: Dict[float, float]) -> None:
        results[cell] = values
        logger.info(f"Sweep cell {cell[0].value} k={cell[1]} restart={cell[2]} done")
        if progress:
            progress(cell, len(results), total)

    if config.workers == 1:
        for cell in cells:
            finished(cell, _run_cell(cell, train, test_background, source, config, gaussian_models))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {
                pool.submit(_run_cell, cell, train, test_background, source, config, gaussian_models): cell
                for cell in cells
            }
            try:
                for future in as_completed(futures):
                    finished(futures[future], future.result())
            except BaseException:
                pool.shutdown(wait=True, cancel_futures=True)
                raise

    records = []
    for distance in config.distances:
        for method in config.methods:
            for k in config.k_values:
                runs = [results[(method, k, r)][distance] for r in range(config.restarts)]
                q20, median, q80 = skl_service.quantile_interval(runs, 0.2, 0.8)
                records.append(SweepRecord(
                    distance=distance, method=method, k=k,
                    skl_runs=runs, q20=q20, median=median, q80=q80,
                ))

    result = SweepResult(config=config, records=records, best=best_over_k(records))
    result.trend = trend_report(result, test_background.n_rows, test_background.n_rows)
    return result


def best_over_k(records: List[SweepRecord]) -> List[BestRecord]:
    """Per (distance, method): the k with the largest median SKL (smallest k on ties)."""
    best: Dict[Tuple[float, Method], SweepRecord] = {}
    for record in records:
        key = (record.distance, record.method)
        current = best.get(key)
        if current is None or record.median > current.median or (
            record.median == current.median and record.k < current.k
        ):
            best[key] = record
    return [
        BestRecord(distance=d, method=m, best_k=r.k, max_skl=r.median)
        for (d, m), r in best.items()
    ]


def trend_report(result: SweepResult, n_neg: int, n_pos: int) -> Dict:
    """
    Qualitative checks on the best-over-k curve; reported as flags, never raised.

    - spearman: rank correlation of best median SKL against distance per method
    - ceiling_fraction: best SKL at the nearest distance over the SKL of fully
      separated histograms
    - poisson_advantage_m: distances where Poisson beats Gaussian
    """
    config = result.config
    ceiling = skl_service.skl_ceiling(n_neg, n_pos, config.bins, config.smoothing)
    nearest = min(config.distances)
    curves: Dict[str, Dict[float, float]] = {}
    for record in result.best:
        curves.setdefault(record.method.value, {})[record.distance] = record.max_skl

    report = {'spearman': {}, 'ceiling_fraction': {}, 'poisson_advantage_m': [], 'flags': []}
    for method, curve in curves.items():
        distances = sorted(curve)
        values = [curve[d] for d in distances]
        if len(distances) >= 3 and len(set(values)) > 1:
            rho = float(stats.spearmanr(distances, values).statistic)
        else:
            rho = None
        report['spearman'][method] = rho
        fraction = curve[nearest] / ceiling if ceiling > 0 else None
        report['ceiling_fraction'][method] = fraction
        if rho is not None and rho > SPEARMAN_THRESHOLD:
            report['flags'].append(
                f"{method}: SKL does not fall with distance (spearman {rho:.3f})"
            )
        if fraction is not None and fraction < NEAR_CEILING_FRACTION:
            report['flags'].append(
                f"{method}: separation at {nearest:g} m is {fraction:.2f} of ceiling"
            )

    gaussian = curves.get(Method.GAUSSIAN.value)
    poisson = curves.get(Method.POISSON.value)
    if gaussian and poisson:
        report['poisson_advantage_m'] = [d for d in sorted(poisson) if poisson[d] > gaussian[d]]
        if not report['poisson_advantage_m']:
            report['flags'].append("poisson: no distance where it beats gaussian")
    return report


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def raw_rows(result: SweepResult) -> List[Dict]:
    return [
        {'distance_m': r.distance, 'method': r.method.value, 'k': r.k, 'restart': i, 'skl': skl}
        for r in result.records
        for i, skl in enumerate(r.skl_runs)
    ]


def summary_rows(result: SweepResult) -> List[Dict]:
    return [
        {'distance_m': r.distance, 'method': r.method.value, 'k': r.k,
         'q20': r.q20, 'median': r.median, 'q80': r.q80}
        for r in result.records
    ]


def best_rows(result: SweepResult) -> List[Dict]:
    return [
        {'distance_m': b.distance, 'method': b.method.value, 'best_k': b.best_k, 'max_skl': b.max_skl}
        for b in result.best
    ]


def _write_csv(path: Path, columns: List[str], rows: List[Dict]) -> None:
    with path.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(value) if isinstance(value, float) else value
                             for key, value in row.items()})


def write_sweep_tables(result: SweepResult, out_dir) -> List[Path]:
    """raw.csv, summary.csv, best_k.csv and sweep.json (same content as the CSVs)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / 'raw.csv', out_dir / 'summary.csv', out_dir / 'best_k.csv', out_dir / 'sweep.json']
    raw, summary, best = raw_rows(result), summary_rows(result), best_rows(result)

    _write_csv(paths[0], RAW_COLUMNS, raw)
    _write_csv(paths[1], SUMMARY_COLUMNS, summary)
    _write_csv(paths[2], BEST_COLUMNS, best)
    payload = {
        'config': result.config.model_dump(mode='json'),
        'raw': raw,
        'summary': summary,
        'best_k': best,
        'trend': result.trend,
    }
    paths[3].write_text(json.dumps(payload, indent=2) + '\n', encoding='utf-8')
    logger.info(f"Wrote sweep tables to {out_dir}")
    return paths
