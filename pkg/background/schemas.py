from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from django.conf import settings
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    field_serializer,
    field_validator,
    model_validator,
)


def _default(name: str):
    """Lazy default read from settings.BACKGROUND_DEFAULTS."""
    return lambda: settings.BACKGROUND_DEFAULTS[name]


DEFAULT_DISTANCES = [float(d) for d in range(1, 21)]
DEFAULT_K_VALUES = [1, 2, 3, 4, 5]

# A single spectrum is a 1-D array of D non-negative integer counts.
Spectrum = np.ndarray


class Label(str, Enum):
    BACKGROUND = "background"
    INJECTED = "injected"


class Method(str, Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


class InjectionMode(str, Enum):
    STOCHASTIC = "stochastic"
    EXPECTED = "expected"


class ScoreKind(str, Enum):
    DEVIANCE = "deviance"
    NLL = "nll"


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _float_array(value, ndim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must contain only finite values")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

class SpectraSet(ArrayModel):
    """N spectra sharing one bin count. Immutable once built."""

    counts: np.ndarray
    labels: Optional[Tuple[Label, ...]] = None
    meta: Dict[str, str] = Field(default_factory=dict)

    @field_validator("counts", mode="before")
    @classmethod
    def _as_count_matrix(cls, value):
        arr = np.asarray(value)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"counts must be a non-empty N x D matrix, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            arr = arr.astype(float)
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise ValueError("counts must be integral")
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        arr = np.array(arr, dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _labels_match_rows(self):
        if self.labels is not None and len(self.labels) != self.counts.shape[0]:
            raise ValueError(
                f"{len(self.labels)} labels for {self.counts.shape[0]} rows"
            )
        return self

    @property
    def n_rows(self) -> int:
        return int(self.counts.shape[0])

    @property
    def bin_count(self) -> int:
        return int(self.counts.shape[1])

    def row(self, index: int) -> Spectrum:
        return self.counts[index]

    def subset(self, indices) -> "SpectraSet":
        indices = np.asarray(indices, dtype=int)
        labels = None
        if self.labels is not None:
            labels = tuple(self.labels[i] for i in indices)
        return SpectraSet(counts=self.counts[indices], labels=labels, meta=dict(self.meta))


# ---------------------------------------------------------------------------
# Background models
# ---------------------------------------------------------------------------

class GaussianPcaModel(ArrayModel):
    type: Literal["gaussian_pca"] = "gaussian_pca"
    k: int = Field(..., ge=1)
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    @field_validator("mean", "explained_variance", mode="before")
    @classmethod
    def _vector(cls, value, info):
        return _float_array(value, 1, info.field_name)

    @field_validator("basis", mode="before")
    @classmethod
    def _matrix(cls, value):
        return _float_array(value, 2, "basis")

    @model_validator(mode="after")
    def _shapes(self):
        d = self.mean.shape[0]
        if self.basis.shape != (self.k, d):
            raise ValueError(f"basis has shape {self.basis.shape}, expected {(self.k, d)}")
        if self.explained_variance.shape != (self.k,):
            raise ValueError("explained_variance must have k entries")
        return self

    @field_serializer("mean", "basis", "explained_variance")
    def _to_list(self, value: np.ndarray):
        return value.tolist()

    @property
    def bin_count(self) -> int:
        return int(self.mean.shape[0])


class PoissonEpcaModel(ArrayModel):
    """Natural-parameter factorization theta_i = offset + a_i . basis."""

    type: Literal["poisson_epca"] = "poisson_epca"
    k: int = Field(..., ge=1)
    seed: int
    offset: np.ndarray
    basis: np.ndarray
    fit_trace: List[Tuple[int, float]] = Field(default_factory=list)
    clamped_iterations: List[int] = Field(default_factory=list)
    use_offset: bool = True
    converged: bool = True

    @field_validator("offset", mode="before")
    @classmethod
    def _vector(cls, value):
        return _float_array(value, 1, "offset")

    @field_validator("basis", mode="before")
    @classmethod
    def _matrix(cls, value):
        return _float_array(value, 2, "basis")

    @model_validator(mode="after")
    def _shapes(self):
        d = self.offset.shape[0]
        if self.basis.shape != (self.k, d):
            raise ValueError(f"basis has shape {self.basis.shape}, expected {(self.k, d)}")
        return self

    @field_serializer("offset", "basis")
    def _to_list(self, value: np.ndarray):
        return value.tolist()

    @property
    def bin_count(self) -> int:
        return int(self.offset.shape[0])

    @property
    def final_loss(self) -> Optional[float]:
        return self.fit_trace[-1][1] if self.fit_trace else None


BackgroundModel = Annotated[
    Union[GaussianPcaModel, PoissonEpcaModel], Field(discriminator="type")
]
background_model_adapter = TypeAdapter(BackgroundModel)


class LatentCode(ArrayModel):
    a: np.ndarray

    @field_validator("a", mode="before")
    @classmethod
    def _vector(cls, value):
        return _float_array(value, 1, "a")


class FitOptions(BaseModel):
    max_iters: int = Field(default_factory=_default("fit_max_iters"), ge=1)
    tol: float = Field(default_factory=_default("fit_tol"), gt=0)
    seed: int = 0
    restarts: int = Field(default=1, ge=1)
    use_offset: bool = True
    inner_steps: int = Field(default_factory=_default("fit_inner_steps"), ge=1)
    init_scale: float = Field(default_factory=_default("init_scale"), gt=0)
    offset_floor: float = Field(default_factory=_default("offset_floor"), gt=0)
    theta_cap: float = Field(default_factory=_default("theta_cap"))


class EncodeOptions(BaseModel):
    max_iters: int = Field(default_factory=_default("encode_max_iters"), ge=1)
    tol: float = Field(default_factory=_default("encode_tol"), gt=0)
    theta_cap: float = Field(default_factory=_default("theta_cap"))


# ---------------------------------------------------------------------------
# Source injection
# ---------------------------------------------------------------------------

class SourceModel(ArrayModel):
    """Normalized source spectrum, strength at 1 m, and distance-law exponent."""

    template: np.ndarray
    strength: float = Field(..., gt=0)
    exponent: float = 2.0

    @field_validator("template", mode="before")
    @classmethod
    def _normalized(cls, value):
        arr = _float_array(value, 1, "template")
        if np.any(arr < 0):
            raise ValueError("template entries must be non-negative")
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError(f"template must sum to 1, sums to {arr.sum():.12g}")
        return arr

    @field_serializer("template")
    def _to_list(self, value: np.ndarray):
        return value.tolist()

    @classmethod
    def from_shape(cls, shape, strength: float, exponent: float = 2.0) -> "SourceModel":
        """Build a source from any non-negative shape, normalizing it to sum 1."""
        shape = np.asarray(shape, dtype=float)
        total = shape.sum()
        if total <= 0:
            raise ValueError("source shape must have positive total")
        return cls(template=shape / total, strength=strength, exponent=exponent)

    @property
    def bin_count(self) -> int:
        return int(self.template.shape[0])


class InjectionConfig(BaseModel):
    distances: List[float] = Field(default_factory=lambda: list(DEFAULT_DISTANCES), min_length=1)
    seed: int = 0
    mode: InjectionMode = InjectionMode.STOCHASTIC

    @field_validator("distances")
    @classmethod
    def _positive(cls, value):
        if any(not np.isfinite(d) or d <= 0 for d in value):
            raise ValueError("distances must be strictly positive")
        return value


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class ScoreSet(ArrayModel):
    scores: np.ndarray
    label: Label
    method: str
    k: int
    distance: Optional[float] = None

    @field_validator("scores", mode="before")
    @classmethod
    def _finite(cls, value):
        arr = _float_array(value, 1, "scores")
        if arr.shape[0] < 1:
            raise ValueError("a score set needs at least one score")
        return arr


class SklEstimate(ArrayModel):
    value: float = Field(..., ge=0)
    bin_count: int
    bin_edges: np.ndarray
    smoothing: float
    degenerate: bool = False

    @field_serializer("bin_edges")
    def _to_list(self, value: np.ndarray):
        return value.tolist()


class BinModelFit(BaseModel):
    poisson_rate: float
    gaussian_mean: float
    gaussian_sd: float
    loglik_poisson: float
    loglik_gaussian: float
    n_samples: int
    degenerate: bool = False


class SweepConfig(BaseModel):
    distances: List[float] = Field(default_factory=lambda: list(DEFAULT_DISTANCES), min_length=1)
    k_values: List[int] = Field(default_factory=lambda: list(DEFAULT_K_VALUES), min_length=1)
    methods: List[Method] = Field(
        default_factory=lambda: [Method.GAUSSIAN, Method.POISSON], min_length=1
    )
    restarts: int = Field(default_factory=_default("sweep_restarts"), ge=1)
    seed: int = Field(default_factory=_default("master_seed"))
    bins: int = Field(default_factory=_default("skl_bins"), ge=2)
    smoothing: float = Field(default_factory=_default("skl_smoothing"), gt=0)
    injection_mode: InjectionMode = InjectionMode.STOCHASTIC
    score_kind: ScoreKind = ScoreKind.DEVIANCE
    workers: int = Field(default_factory=_default("sweep_workers"), ge=1)
    fit: FitOptions = Field(default_factory=FitOptions)
    encode: EncodeOptions = Field(default_factory=EncodeOptions)

    @field_validator("distances")
    @classmethod
    def _positive(cls, value):
        if any(not np.isfinite(d) or d <= 0 for d in value):
            raise ValueError("distances must be strictly positive")
        return value

    @field_validator("k_values")
    @classmethod
    def _ranks(cls, value):
        if any(k < 1 for k in value):
            raise ValueError("k values must be >= 1")
        return sorted(set(value))


class SweepRecord(BaseModel):
    distance: float
    method: Method
    k: int
    skl_runs: List[float]
    q20: float
    median: float
    q80: float

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.q20 <= self.median <= self.q80):
            raise ValueError("expected q20 <= median <= q80")
        return self


class BestRecord(BaseModel):
    distance: float
    method: Method
    best_k: int
    max_skl: float


class SweepResult(BaseModel):
    config: SweepConfig
    records: List[SweepRecord]
    best: List[BestRecord]
    trend: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _restart_counts(self):
        for record in self.records:
            if len(record.skl_runs) != self.config.restarts:
                raise ValueError(
                    f"record (d={record.distance}, {record.method.value}, k={record.k}) "
                    f"has {len(record.skl_runs)} runs, expected {self.config.restarts}"
                )
        return self


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    master_seed: Optional[int] = None
    tool_version: str
    outputs: List[str] = Field(default_factory=list)
