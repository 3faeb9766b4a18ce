"""
Synthetic background spectra for fixtures and tests.

Stand-in for measured urban background: a falling continuum with two broad
lines, modulated per spectrum by a few smooth log-intensity factors, then
Poisson-sampled. High-energy bins average well under one count.
"""
import logging

import numpy as np

from ..exceptions import ParameterError
from ..schemas import Label, SpectraSet

logger = logging.getLogger(__name__)

FACTOR_SCALES = (0.25, 0.3, 0.2, 0.15, 0.1)


def background_intensity(bin_count: int = 128) -> np.ndarray:
    """Mean counts per bin of the synthetic background (about 145 counts per spectrum at D=128)."""
    j = np.arange(bin_count, dtype=float) * 128.0 / bin_count
    continuum = 6.0 * np.exp(-j / 22.0)
    lines = 0.6 * np.exp(-0.5 * ((j - 45.0) / 3.0) ** 2) + 0.4 * np.exp(-0.5 * ((j - 92.0) / 3.0) ** 2)
    return (continuum + lines + 0.01) * 128.0 / bin_count


def log_intensity_factors(bin_count: int, rank: int) -> np.ndarray:
    """Smooth (rank, D) directions: overall level, spectral tilt, then sine modes."""
    t = np.linspace(0.0, 1.0, bin_count)
    factors = [np.ones(bin_count), 2.0 * t - 1.0]
    mode = 1
    while len(factors) < rank:
        factors.append(np.sin(np.pi * mode * t))
        mode += 1
    return np.array(factors[:rank])


def generate_background(n: int, bin_count: int = 128, rank: int = 3, seed: int = 0) -> SpectraSet:
    """n Poisson spectra around exp(log(base) + s_i . factors)."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 1 <= rank <= len(FACTOR_SCALES):
        raise ParameterError(f"rank must be between 1 and {len(FACTOR_SCALES)}, got {rank}")

    rng = np.random.default_rng(seed)
    factors = log_intensity_factors(bin_count, rank)
    scores = rng.normal(0.0, FACTOR_SCALES[:rank], size=(n, rank))
    theta = np.log(background_intensity(bin_count)) + scores @ factors
    counts = rng.poisson(np.exp(theta))

    logger.info(f"Generated {n} synthetic background spectra (D={bin_count}, rank={rank}, seed={seed})")
    return SpectraSet(
        counts=counts,
        labels=(Label.BACKGROUND,) * n,
        meta={
            'source': 'synthetic',
            'generator': 'low-rank log-intensity with Poisson noise',
            'rank': str(rank),
            'seed': str(seed),
        },
    )


def generate_low_rank_counts(n: int, bin_count: int, k: int, seed: int = 0,
                             code_scale: float = 0.5, base_rate: float = 5.0):
    """
    Counts drawn around exp(offset + A V) with known parameters.

    Returns (SpectraSet, offset, A, V) so callers can compare a fitted model
    with the generating one.
    """
    rng = np.random.default_rng(seed)
    offset = np.log(base_rate) + 0.3 * rng.standard_normal(bin_count)
    V = log_intensity_factors(bin_count, k) / np.sqrt(bin_count) * 4.0
    A = rng.normal(0.0, code_scale, size=(n, k))
    counts = rng.poisson(np.exp(offset + A @ V))
    return SpectraSet(counts=counts, meta={'source': 'synthetic'}), offset, A, V
