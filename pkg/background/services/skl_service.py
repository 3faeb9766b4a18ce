"""
Score-distribution comparison and per-bin model diagnostics.

SKL between negative and positive score sets uses a histogram estimator:
equal-width edges over the pooled score range, a pseudocount added to every
bin, then KL(p||q) + KL(q||p) (the sum, not the average, of the two terms).
"""
import logging
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from scipy import stats
from scipy.special import rel_entr

from ..exceptions import EmptyInputError, InsufficientDataError, ParameterError
from ..schemas import BinModelFit, ScoreSet, SklEstimate

logger = logging.getLogger(__name__)

SD_FLOOR = 1e-9

Scores = Union[ScoreSet, Sequence[float], np.ndarray]


def _as_scores(scores: Scores, name: str) -> np.ndarray:
    values = scores.scores if isinstance(scores, ScoreSet) else np.asarray(scores, dtype=float)
    values = np.ravel(values)
    if values.size == 0:
        raise EmptyInputError(f"{name} score set is empty")
    if not np.all(np.isfinite(values)):
        raise ParameterError(f"{name} scores must be finite")
    return values


def symmetric_kl(p, q) -> float:
    """KL(p||q) + KL(q||p) for two probability vectors on the same support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ParameterError(f"probability vectors differ in length: {p.shape} vs {q.shape}")
    return float(np.sum(rel_entr(p, q)) + np.sum(rel_entr(q, p)))


def _smoothed(counts: np.ndarray, smoothing: float) -> np.ndarray:
    counts = counts.astype(float) + smoothing
    return counts / counts.sum()


def skl_divergence(neg: Scores, pos: Scores, bins: int = None,
                   smoothing: float = None) -> SklEstimate:
    """Histogram SKL between negative and positive scores on shared equal-width bins."""
    bins = settings.BACKGROUND_DEFAULTS['skl_bins'] if bins is None else bins
    smoothing = settings.BACKGROUND_DEFAULTS['skl_smoothing'] if smoothing is None else smoothing
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    if not smoothing > 0:
        raise ParameterError(f"smoothing must be > 0, got {smoothing}")

    neg_scores = _as_scores(neg, 'negative')
    pos_scores = _as_scores(pos, 'positive')
    pooled = np.concatenate([neg_scores, pos_scores])
    lo, hi = float(pooled.min()), float(pooled.max())
    if not hi > lo:
        return SklEstimate(
            value=0.0, bin_count=bins, bin_edges=np.array([lo, hi]),
            smoothing=smoothing, degenerate=True,
        )

    edges = np.linspace(lo, hi, bins + 1)
    p = _smoothed(np.histogram(neg_scores, bins=edges)[0], smoothing)
    q = _smoothed(np.histogram(pos_scores, bins=edges)[0], smoothing)
    return SklEstimate(
        value=max(symmetric_kl(p, q), 0.0), bin_count=bins,
        bin_edges=edges, smoothing=smoothing,
    )


def skl_ceiling(n_neg: int, n_pos: int, bins: int, smoothing: float) -> float:
    """SKL of two perfectly separated histograms (all mass in opposite end bins)."""
    p_counts = np.zeros(bins)
    q_counts = np.zeros(bins)
    p_counts[0] = n_neg
    q_counts[-1] = n_pos
    return symmetric_kl(_smoothed(p_counts, smoothing), _smoothed(q_counts, smoothing))


def quantile_interval(values, lo: float = 0.2, hi: float = 0.8) -> Tuple[float, float, float]:
    """
    (q_lo, median, q_hi) by linear interpolation between order statistics with
    the midpoint offset: the p-quantile of n sorted values sits at 0-based
    position n*p - 1/2, clipped to the sample range. Requires lo <= 0.5 <= hi.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyInputError("cannot take quantiles of an empty list")
    if not (0.0 <= lo < hi <= 1.0):
        raise ParameterError(f"need 0 <= lo < hi <= 1, got lo={lo} hi={hi}")
    if not (lo <= 0.5 <= hi):
        raise ParameterError(f"interval [{lo}, {hi}] must contain the median")
    q_lo, median, q_hi = np.quantile(values, [lo, 0.5, hi], method='hazen')
    return float(min(q_lo, median)), float(median), float(max(q_hi, median))


def count_histogram(samples) -> Dict[int, int]:
    """Empirical histogram {count value: occurrences}."""
    values, occurrences = np.unique(np.asarray(samples, dtype=np.int64), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, occurrences)}


def bin_model_fit(samples) -> BinModelFit:
    """
    Maximum-likelihood Poisson and Gaussian fits to one energy bin's counts,
    with each model's log-likelihood (Gaussian density evaluated at the integers).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"bin model fit needs at least 2 samples, got {x.size}")
    if np.any(x < 0) or np.any(x != np.round(x)):
        raise ParameterError("bin samples must be non-negative integers")

    mean = float(x.mean())
    raw_sd = float(x.std())
    degenerate = raw_sd < SD_FLOOR
    sd = max(raw_sd, SD_FLOOR)
    if degenerate:
        logger.warning(f"Bin counts are constant ({mean:g}); gaussian sd floored at {SD_FLOOR}")

    return BinModelFit(
        poisson_rate=mean,
        gaussian_mean=mean,
        gaussian_sd=sd,
        loglik_poisson=float(np.sum(stats.poisson.logpmf(x, mean))),
        loglik_gaussian=float(np.sum(stats.norm.logpdf(x, loc=mean, scale=sd))),
        n_samples=int(x.size),
        degenerate=degenerate,
    )
