"""Average error covariance across subjects and its spectral summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec
from .estimator import ExperimentData, FittedSieve, fit as _fit_sieve

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class CovarianceEstimate:
    """T x T symmetric PSD covariance with its eigen-summary attached."""

    matrix: np.ndarray
    source: str  # plug_in | known | variance_function
    lambda_max: float
    lambda_min: float
    trace: float


def eigen_summary(matrix: np.ndarray) -> dict:
    """Extreme eigenvalues and trace of a symmetric matrix."""
    M = np.asarray(matrix, dtype=float)
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > _SYM_TOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    w = np.linalg.eigvalsh((M + M.T) / 2.0)
    return {
        "lambda_max": float(w[-1]),
        "lambda_min": float(w[0]),
        "trace": float(np.trace(M)),
    }


def _wrap(matrix: np.ndarray, source: str) -> CovarianceEstimate:
    M = (matrix + matrix.T) / 2.0
    s = eigen_summary(M)
    return CovarianceEstimate(
        matrix=M,
        source=source,
        lambda_max=s["lambda_max"],
        lambda_min=s["lambda_min"],
        trace=s["trace"],
    )


def known_covariance(matrix: np.ndarray) -> CovarianceEstimate:
    """Wrap a user-supplied average covariance matrix."""
    return _wrap(np.asarray(matrix, dtype=float), "known")


def sample_avg_covariance(residuals: np.ndarray, ridge: float = 0.0) -> CovarianceEstimate:
    """Plug-in average covariance (1/n) sum_i u_i u_i' of the residual rows.

    No degrees-of-freedom correction is applied. ``ridge`` adds eps * I
    diagonal loading for exploratory use with n < T; it defaults to off.
    """
    U = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, T = U.shape
    if n < 1:
        raise ValueError("need at least one residual row")
    S = U.T @ U / n
    if ridge:
        S = S + ridge * np.eye(T)
    elif n < T:
        warnings.warn(
            f"plug-in covariance is rank deficient (n={n} < T={T})",
            stacklevel=2,
        )
    return _wrap(S, "plug_in")


def variance_function_fit(fitted: FittedSieve, vspec: BasisSpec,
                          stimuli: np.ndarray = None) -> FittedSieve:
    """Sieve regression of the squared residual panel on the stimuli basis.

    Estimates a task-level variance function; warns when the fitted
    function dips negative on a diagnostic grid.
    """
    if stimuli is None:
        raise ValueError("stimuli of the original fit are required")
    data = ExperimentData(responses=fitted.residuals**2, stimuli=stimuli)
    vfit = _fit_sieve(data, vspec)
    from .basis import design_matrix

    axes = [np.linspace(a, b, 50) for a, b in vspec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    h = design_matrix(vspec, grid) @ vfit.beta_hat
    if h.min() < -1e-10 * max(1.0, float(np.abs(h).max())):
        warnings.warn(
            f"fitted variance function is negative (min {h.min():.3e}) "
            "on the diagnostic grid",
            stacklevel=2,
        )
    return vfit


def diagonal_sigma_summary(residuals: np.ndarray) -> dict:
    """Max over tasks of the per-task mean squared residual."""
    U = np.atleast_2d(np.asarray(residuals, dtype=float))
    if U.shape[0] < 1:
        raise ValueError("need at least one residual row")
    return {"sigma2_nT": float((U**2).mean(axis=0).max())}
