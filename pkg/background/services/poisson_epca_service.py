"""
Poisson exponential-family PCA.

Counts are modeled as x_ij ~ Poisson(exp(theta_ij)) with a low-rank natural
parameter matrix theta_i = offset + a_i . V. Fitting alternates between the row
codes A (all rows at once, V fixed) and the column parameters (V, offset) with A
fixed. Both blocks are sets of independent convex problems, each solved with
damped Newton steps and an Armijo backtracking line search, so every block
update can only lower the total loss. While fitting, natural parameters stay
within [log(offset_floor), theta_cap], and after every pass the codes are
centered and the basis rows made orthonormal without changing theta.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.special import gammaln, xlogy

from ..exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    InsufficientDataError,
    OptimizationError,
    ParameterError,
)
from ..schemas import (
    EncodeOptions,
    FitOptions,
    LatentCode,
    PoissonEpcaModel,
    ScoreKind,
    SpectraSet,
    Spectrum,
)
from .manifest_service import derive_seed
from .spectra_service import as_count_matrix, as_spectrum

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 40
HESSIAN_RIDGE = 1e-12


# ---------------------------------------------------------------------------
# Loss, gradient, deviance
# ---------------------------------------------------------------------------

def _check_pair(x, theta) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape != theta.shape:
        raise DimensionMismatchError(
            f"counts have shape {x.shape}, natural parameters {theta.shape}"
        )
    if not np.all(np.isfinite(theta)):
        raise ParameterError("natural parameters must be finite")
    return x, theta


def poisson_loss(x: Spectrum, theta) -> float:
    """Negative Poisson log-likelihood without the data-only term: sum(exp(theta) - x * theta)."""
    x, theta = _check_pair(x, theta)
    return float(np.sum(np.exp(theta) - x * theta))


def poisson_loss_gradient(x: Spectrum, theta) -> np.ndarray:
    """Gradient of poisson_loss with respect to theta."""
    x, theta = _check_pair(x, theta)
    return np.exp(theta) - x


def _unit_deviance(x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    # xlogy gives 0 log 0 = 0
    return 2.0 * (xlogy(x, x) - xlogy(x, lam) - (x - lam))


def poisson_deviance(x: Spectrum, lam) -> float:
    """Poisson deviance 2 * sum(x log(x / lam) - (x - lam))."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if x.shape != lam.shape:
        raise DimensionMismatchError(f"counts have shape {x.shape}, intensities {lam.shape}")
    return max(float(np.sum(_unit_deviance(x, lam))), 0.0)


def _row_losses(Y: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.sum(np.exp(theta) - Y * theta, axis=1)


# ---------------------------------------------------------------------------
# Batched Newton solver
# ---------------------------------------------------------------------------

def _newton_rows(Y, Z, base, P, max_steps, tol, theta_cap, theta_floor=-np.inf):
    """
    For every row r independently, minimize sum_c exp(t_rc) - y_rc * t_rc over
    p_r, where t_r = base_r + p_r @ Z.

    Y is (R, C), Z is (m, C), base broadcasts to (R, C), P is the (R, m) start.
    Returns (P, theta, row_losses, converged, capped). A row whose trial step
    would push theta above theta_cap, or below theta_floor, has that step
    shortened by backtracking; capped reports whether that happened.
    """
    P = np.array(P, dtype=float)
    rows, m = P.shape
    theta = base + P @ Z
    loss = _row_losses(Y, theta)
    converged = np.zeros(rows, dtype=bool)
    capped = False
    eye = np.eye(m)

    for _ in range(max_steps):
        idx = np.flatnonzero(~converged)
        if idx.size == 0:
            break

        lam = np.exp(theta[idx])
        grad = (lam - Y[idx]) @ Z.T
        hess = (lam[:, np.newaxis, :] * Z[np.newaxis, :, :]) @ Z.T
        ridge = HESSIAN_RIDGE * (1.0 + np.trace(hess, axis1=1, axis2=2))
        hess = hess + ridge[:, np.newaxis, np.newaxis] * eye
        direction = -np.linalg.solve(hess, grad[..., np.newaxis])[..., 0]
        slope = np.einsum('rm,rm->r', grad, direction)

        flat = -0.5 * slope <= tol * (1.0 + np.abs(loss[idx]))
        converged[idx[flat]] = True
        live = np.flatnonzero(~flat)
        if live.size == 0:
            continue

        rows_live = idx[live]
        dtheta = direction[live] @ Z
        step = np.ones(live.size)
        accepted = np.zeros(live.size, dtype=bool)
        pending = np.ones(live.size, dtype=bool)
        for _ in range(MAX_BACKTRACKS):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            trial = theta[rows_live[j]] + step[j, np.newaxis] * dtheta[j]
            # cells already under the floor (rounding) may stay there but not sink further
            below = trial < np.minimum(theta_floor, theta[rows_live[j]])
            over = np.any(trial > theta_cap, axis=1) | np.any(below, axis=1)
            capped = capped or bool(over.any())
            trial_loss = np.full(j.size, np.inf)
            inside = ~over
            if inside.any():
                trial_loss[inside] = _row_losses(Y[rows_live[j[inside]]], trial[inside])
            ok = inside & np.isfinite(trial_loss) & (
                trial_loss <= loss[rows_live[j]] + ARMIJO_C1 * step[j] * slope[live[j]]
            )
            good = j[ok]
            accepted[good] = True
            pending[good] = False
            previous = loss[rows_live[good]]
            P[rows_live[good]] += step[good, np.newaxis] * direction[live[good]]
            theta[rows_live[good]] = trial[ok]
            loss[rows_live[good]] = trial_loss[ok]
            small = np.abs(previous - trial_loss[ok]) <= tol * (1.0 + np.abs(trial_loss[ok]))
            converged[rows_live[good[small]]] = True
            step[j[~ok]] *= BACKTRACK_FACTOR

        # No acceptable step left: the row sits at its numerical minimum.
        converged[rows_live[~accepted]] = True

    return P, theta, loss, converged, capped


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _fix_gauge(A: np.ndarray, V: np.ndarray, offset: np.ndarray, use_offset: bool):
    """
    Re-express offset + A @ V without changing it: codes are centered (their
    mean moves into the offset) and the basis rows are made orthonormal, with
    the largest-magnitude entry of each row positive.
    """
    if use_offset:
        mean = A.mean(axis=0)
        offset = offset + mean @ V
        A = A - mean
    k = V.shape[0]
    if k > min(A.shape[0], V.shape[1]):
        return A, V, offset
    U, s, Wt = np.linalg.svd(A @ V, full_matrices=False)
    A = U[:, :k] * s[:k]
    V = Wt[:k].copy()
    flip = np.sign(V[np.arange(k), np.argmax(np.abs(V), axis=1)])
    flip[flip == 0] = 1.0
    return A * flip, V * flip[:, np.newaxis], offset


def _fit_once(X: np.ndarray, k: int, opts: FitOptions, seed: int) -> PoissonEpcaModel:
    n, d = X.shape
    rng = np.random.default_rng(seed)
    floor = float(np.log(opts.offset_floor))

    if opts.use_offset:
        offset = np.log(np.maximum(X.mean(axis=0), opts.offset_floor))
    else:
        offset = np.zeros(d)
    V = rng.normal(0.0, opts.init_scale, size=(k, d))
    A = np.zeros((n, k))

    theta = offset + A @ V
    loss = float(np.sum(np.exp(theta) - X * theta))
    trace = [(0, loss)]
    clamped = []
    converged = False
    ones = np.ones((1, n))

    for iteration in range(1, opts.max_iters + 1):
        A, _, _, _, capped_rows = _newton_rows(
            X, V, offset, A, opts.inner_steps, opts.tol, opts.theta_cap, floor
        )

        if opts.use_offset:
            Z = np.vstack([A.T, ones])
            start = np.hstack([V.T, offset[:, np.newaxis]])
        else:
            Z = A.T
            start = V.T
        P, _, _, _, capped_cols = _newton_rows(
            X.T, Z, 0.0, start, opts.inner_steps, opts.tol, opts.theta_cap, floor
        )
        V = P[:, :k].T.copy()
        if opts.use_offset:
            offset = P[:, k].copy()
        A, V, offset = _fix_gauge(A, V, offset, opts.use_offset)

        theta = offset + A @ V
        new_loss = float(np.sum(np.exp(theta) - X * theta))
        if not np.isfinite(new_loss):
            logger.error(f"Poisson PCA diverged at iteration {iteration} (seed {seed})")
            raise OptimizationError("Poisson PCA loss became non-finite", iteration=iteration)

        trace.append((iteration, new_loss))
        if capped_rows or capped_cols:
            clamped.append(iteration)
            logger.debug(
                f"iteration {iteration}: line search hit the theta bounds "
                f"[{floor:.4g}, {opts.theta_cap}]"
            )
        logger.debug(f"iteration {iteration}: loss {new_loss:.12g}")

        if abs(loss - new_loss) <= opts.tol * max(1.0, abs(loss)):
            converged = True
            break
        loss = new_loss

    if not converged:
        logger.warning(
            f"Poisson PCA k={k} (seed {seed}) stopped at max_iters={opts.max_iters} "
            f"without converging; last loss {trace[-1][1]:.10g}"
        )

    return PoissonEpcaModel(
        k=k,
        seed=seed,
        offset=offset,
        basis=V,
        fit_trace=trace,
        clamped_iterations=clamped,
        use_offset=opts.use_offset,
        converged=converged,
    )


def fit_poisson(train: SpectraSet, k: int, opts: Optional[FitOptions] = None) -> PoissonEpcaModel:
    """
    Fit a rank-k Poisson PCA model.

    With opts.restarts > 1 the fit is repeated from independent initializations
    (restart 0 uses opts.seed, later restarts hash it with the restart index) and
    the lowest final loss wins.
    """
    opts = opts or FitOptions()
    X = train.counts.astype(float)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError(f"Poisson PCA needs at least 2 spectra, got {n}")
    if k < 1 or k > d:
        raise ParameterError(f"k must satisfy 1 <= k <= D = {d}, got {k}")

    best = None
    for restart in range(opts.restarts):
        seed = opts.seed if restart == 0 else derive_seed(opts.seed, 'fit-restart', restart)
        model = _fit_once(X, k, opts, seed)
        if best is None or model.final_loss < best.final_loss:
            best = model

    logger.info(
        f"Fitted poisson PCA k={k} on {n} spectra in {best.fit_trace[-1][0]} passes; "
        f"loss {best.final_loss:.10g} (seed {best.seed})"
    )
    return best


# ---------------------------------------------------------------------------
# Encoding and scoring
# ---------------------------------------------------------------------------

def _encode_rows(model: PoissonEpcaModel, X: np.ndarray, opts: EncodeOptions):
    start = np.zeros((X.shape[0], model.k))
    P, theta, _, converged, _ = _newton_rows(
        X, model.basis, model.offset, start, opts.max_iters, opts.tol, opts.theta_cap
    )
    if not converged.all():
        failed = int(np.count_nonzero(~converged))
        raise ConvergenceError(
            f"encoding did not converge for {failed} spectra within {opts.max_iters} iterations",
            best_iterate=P,
            iterations=opts.max_iters,
        )
    return P, theta


def encode_poisson(model: PoissonEpcaModel, x: Spectrum,
                   opts: Optional[EncodeOptions] = None) -> LatentCode:
    """Latent code minimizing poisson_loss(x, offset + a . V); a = 0 when V = 0."""
    opts = opts or EncodeOptions()
    x = as_spectrum(x, model.bin_count)
    try:
        P, _ = _encode_rows(model, x[np.newaxis, :], opts)
    except ConvergenceError as exc:
        exc.best_iterate = LatentCode(a=exc.best_iterate[0])
        raise
    return LatentCode(a=P[0])


def encode_poisson_batch(model: PoissonEpcaModel, spectra,
                         opts: Optional[EncodeOptions] = None) -> np.ndarray:
    """(N, k) latent codes for every row; rows are solved jointly but independently."""
    opts = opts or EncodeOptions()
    P, _ = _encode_rows(model, as_count_matrix(spectra, model.bin_count), opts)
    return P


def reconstruct(model: PoissonEpcaModel, x: Spectrum,
                opts: Optional[EncodeOptions] = None) -> np.ndarray:
    """Fitted intensities exp(offset + a . V) for one spectrum."""
    code = encode_poisson(model, x, opts)
    return np.exp(model.offset + code.a @ model.basis)


def _scores_from_theta(X: np.ndarray, theta: np.ndarray, kind: ScoreKind) -> np.ndarray:
    lam = np.exp(theta)
    if kind == ScoreKind.NLL:
        return np.sum(lam - xlogy(X, lam) + gammaln(X + 1.0), axis=1)
    return np.maximum(np.sum(_unit_deviance(X, lam), axis=1), 0.0)


def score_poisson(model: PoissonEpcaModel, x: Spectrum,
                  opts: Optional[EncodeOptions] = None,
                  kind: ScoreKind = ScoreKind.DEVIANCE) -> float:
    """Deviance (default) or negative log-likelihood of x under its best encoding."""
    opts = opts or EncodeOptions()
    x = as_spectrum(x, model.bin_count)
    _, theta = _encode_rows(model, x[np.newaxis, :], opts)
    return float(_scores_from_theta(x[np.newaxis, :], theta, ScoreKind(kind))[0])


def score_poisson_batch(model: PoissonEpcaModel, spectra,
                        opts: Optional[EncodeOptions] = None,
                        kind: ScoreKind = ScoreKind.DEVIANCE) -> np.ndarray:
    opts = opts or EncodeOptions()
    X = as_count_matrix(spectra, model.bin_count)
    _, theta = _encode_rows(model, X, opts)
    return _scores_from_theta(X, theta, ScoreKind(kind))


def fit_options(**values) -> FitOptions:
    """FitOptions from loose keyword values, reporting bad values as ParameterError."""
    try:
        return FitOptions(**{key: value for key, value in values.items() if value is not None})
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ParameterError(f"{'.'.join(map(str, error['loc']))}: {error['msg']}") from exc


def encode_options(**values) -> EncodeOptions:
    try:
        return EncodeOptions(**{key: value for key, value in values.items() if value is not None})
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ParameterError(f"{'.'.join(map(str, error['loc']))}: {error['msg']}") from exc
