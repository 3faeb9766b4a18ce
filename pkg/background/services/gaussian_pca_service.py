"""
Gaussian PCA background model and null-space residual scoring.

The model is standard PCA on raw counts: center by the column means, keep the
top-k right singular vectors of the centered data matrix, and score a spectrum
by the squared norm of the part of (x - mean) outside their span.
"""
import logging

import numpy as np

from ..exceptions import ParameterError
from ..schemas import GaussianPcaModel, SpectraSet, Spectrum
from .spectra_service import as_count_matrix, as_spectrum

logger = logging.getLogger(__name__)


def canonicalize_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude coordinate is positive."""
    basis = np.array(basis, dtype=float)
    pivots = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(basis.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return basis * signs[:, np.newaxis]


def fit_gaussian(train: SpectraSet, k: int) -> GaussianPcaModel:
    """Fit mean and top-k principal directions via SVD of the centered counts."""
    X = train.counts.astype(float)
    n, d = X.shape
    if k < 1 or k > min(n - 1, d):
        raise ParameterError(
            f"k must satisfy 1 <= k <= min(N-1, D) = {min(n - 1, d)}, got {k}"
        )

    mean = X.mean(axis=0)
    _, singular_values, vt = np.linalg.svd(X - mean, full_matrices=False)
    basis = canonicalize_signs(vt[:k])
    explained_variance = singular_values[:k] ** 2 / (n - 1)

    model = GaussianPcaModel(
        k=k, mean=mean, basis=basis, explained_variance=explained_variance
    )
    logger.info(
        f"Fitted gaussian PCA k={k} on {n} spectra; explained variance "
        f"{explained_variance.sum():.6g} of {singular_values.dot(singular_values) / (n - 1):.6g}"
    )
    return model


def project(model: GaussianPcaModel, x: Spectrum) -> np.ndarray:
    """In-span reconstruction mean + basis^T basis (x - mean)."""
    x = as_spectrum(x, model.bin_count)
    centered = x - model.mean
    return model.mean + model.basis.T @ (model.basis @ centered)


def score_gaussian(model: GaussianPcaModel, x: Spectrum) -> float:
    """Squared norm of the null-space residual of x."""
    x = as_spectrum(x, model.bin_count)
    centered = x - model.mean
    residual = centered - model.basis.T @ (model.basis @ centered)
    return float(residual @ residual)


def score_gaussian_batch(model: GaussianPcaModel, spectra) -> np.ndarray:
    """Residual scores for every row of a SpectraSet (or N x D array)."""
    centered = as_count_matrix(spectra, model.bin_count) - model.mean
    residual = centered - (centered @ model.basis.T) @ model.basis
    return np.einsum('ij,ij->i', residual, residual)
