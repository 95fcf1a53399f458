"""Restriction matrices, functional variances and Wald statistics.

Builds the restriction systems of the three hypothesis families
(pointwise values, summed partial derivatives on a 2-D tensor basis, and
the power-law-with-no-intercept shape test), reduces them to linearly
independent rows, and evaluates the quadratic-form test statistic with
its two reference distributions: chi-square with R degrees of freedom,
and the standard normal for the centered-scaled statistic when R is
large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .basis import BasisSpec, basis_row, derivative_operator, design_matrix
from .covariance import CovarianceEstimate
from .estimator import FittedSieve
from .exceptions import (
    ConditioningError,
    DimensionError,
    InconsistentConstraintError,
)

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ConstraintSpec:
    """A rank-reduced restriction system psi_tilde @ beta = gamma0."""

    psi_tilde: np.ndarray
    gamma0: np.ndarray
    effective_rank: int
    label: str = ""


@dataclass(frozen=True)
class WaldReport:
    """Quadratic-form statistic with both reference p-values."""

    w_star: float
    w_standardized: float
    R: int
    p_chi2: float
    p_normal: float
    covariance_source: str
    bias_bound: float = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.w_star,
            "standardized": self.w_standardized,
            "df": self.R,
            "p_chi2": self.p_chi2,
            "p_normal": self.p_normal,
            "covariance_source": self.covariance_source,
        }


def rank_reduce(psi_tilde: np.ndarray, gamma0: np.ndarray, tol: float = _RANK_RTOL,
                label: str = "") -> ConstraintSpec:
    """Keep a maximal linearly independent row system, transformed consistently.

    Rows are rotated onto the left singular vectors with singular value
    above ``tol`` (relative to the largest). A discarded direction whose
    target entry does not vanish signals an inconsistent system.
    """
    M = np.atleast_2d(np.asarray(psi_tilde, dtype=float))
    g = np.atleast_1d(np.asarray(gamma0, dtype=float))
    if g.size != M.shape[0]:
        raise DimensionError(
            f"gamma0 has length {g.size}, matrix has {M.shape[0]} rows"
        )
    if tol <= 0:
        raise ValueError("tol must be positive")
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("zero restriction matrix")
    r = int((s > tol * s[0]).sum())
    if r < 1:
        raise ValueError("no testable restriction after rank reduction")
    kept = (s[:r, None] * Vt[:r]), (U[:, :r].T @ g)
    dropped = U[:, r:].T @ g
    scale = max(1.0, float(np.abs(g).max()))
    if dropped.size and np.abs(dropped).max() > 1e-8 * scale:
        raise InconsistentConstraintError(
            "dependent restriction rows disagree on the target "
            f"(residual {np.abs(dropped).max():.3e})"
        )
    return ConstraintSpec(
        psi_tilde=kept[0], gamma0=kept[1], effective_rank=r, label=label
    )


def pointwise_constraint(spec: BasisSpec, points, values, label: str = "pointwise") -> ConstraintSpec:
    """Constrain the function value at the given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.atleast_1d(np.asarray(values, dtype=float))
    if pts.shape[0] != vals.size:
        raise DimensionError(
            f"{pts.shape[0]} points but {vals.size} target values"
        )
    rows = np.stack([basis_row(spec, p) for p in pts])
    return rank_reduce(rows, vals, label=label)


def derivative_sum_constraint(spec: BasisSpec, label: str = "derivative_sum") -> ConstraintSpec:
    """Zero sum of the two first partials on a bivariate Legendre basis.

    The restriction matrix is the Kronecker sum of the two univariate
    differentiation matrices with the domain chain factors applied; its
    effective rank is J*K + max(J, K).
    """
    if spec.ndim != 2:
        raise DimensionError(
            f"derivative-sum restriction needs d=2, got d={spec.ndim}"
        )
    if spec.family != "legendre":
        raise ValueError("derivative-sum restriction requires the legendre family")
    J, K = spec.orders
    if J == 0 and K == 0:
        raise ValueError("no testable restriction: constants have zero derivative")
    D1 = derivative_operator(spec, (1, 0)).matrix
    D2 = derivative_operator(spec, (0, 1)).matrix
    M = D1 + D2
    out = rank_reduce(M, np.zeros(M.shape[0]), label=label)
    expected = J * K + max(J, K)
    if out.effective_rank != expected:
        raise ConditioningError(
            f"rank of derivative-sum matrix is {out.effective_rank}, "
            f"expected {expected}"
        )
    return out


def stevens_constraint(spec: BasisSpec, label: str = "stevens") -> ConstraintSpec:
    """Power-law shape restriction: no intercept, opposite slopes, no curvature.

    Rows select the intercept coefficient, the sum of the two linear
    coefficients, and every remaining coefficient; R = P - 1.
    """
    if spec.ndim != 2:
        raise DimensionError(f"shape restriction needs d=2, got d={spec.ndim}")
    J, K = spec.orders
    if J < 1 or K < 1:
        raise ValueError("basis must include both linear terms")
    P = spec.size
    idx = {mi: i for i, mi in enumerate(spec.multi_indices())}
    i_const = idx[(0, 0)]
    i_lin1 = idx[(1, 0)]
    i_lin2 = idx[(0, 1)]
    rows = []
    r0 = np.zeros(P)
    r0[i_const] = 1.0
    rows.append(r0)
    r1 = np.zeros(P)
    r1[i_lin1] = 1.0
    r1[i_lin2] = 1.0
    rows.append(r1)
    for i in range(P):
        if i in (i_const, i_lin1, i_lin2):
            continue
        r = np.zeros(P)
        r[i] = 1.0
        rows.append(r)
    M = np.stack(rows)
    return ConstraintSpec(
        psi_tilde=M, gamma0=np.zeros(P - 1), effective_rank=P - 1, label=label
    )


def linear_constraint(matrix, rhs, label: str = "linear") -> ConstraintSpec:
    """Wrap a user-supplied restriction system with rank reduction."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if not np.any(M):
        raise ValueError("zero restriction matrix")
    return rank_reduce(M, rhs, label=label)


def nonlinear_functional(fitted: FittedSieve, gamma, gamma_prime_rows=None,
                         gamma0=None, label: str = "nonlinear") -> ConstraintSpec:
    """Delta-method linearization of a nonlinear functional at beta_hat.

    ``gamma`` maps a coefficient vector to R values; ``gamma_prime_rows``
    returns its R x P Jacobian. When no Jacobian is supplied, a central
    finite-difference fallback with per-coordinate step 1e-6 (1 + |b_j|)
    is used.
    """
    beta = fitted.beta_hat
    if gamma_prime_rows is not None:
        Jac = np.atleast_2d(np.asarray(gamma_prime_rows(beta), dtype=float))
    else:
        Jac = finite_difference_jacobian(gamma, beta)
    if not np.all(np.isfinite(Jac)):
        raise ValueError("non-finite entries in the functional derivative")
    if gamma0 is None:
        gamma0 = np.zeros(Jac.shape[0])
    return rank_reduce(Jac, gamma0, label=label)


def finite_difference_jacobian(gamma, beta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vector functional of beta."""
    beta = np.asarray(beta, dtype=float)
    g0 = np.atleast_1d(np.asarray(gamma(beta), dtype=float))
    Jac = np.empty((g0.size, beta.size))
    for j in range(beta.size):
        h = 1e-6 * (1.0 + abs(beta[j]))
        up = beta.copy()
        up[j] += h
        dn = beta.copy()
        dn[j] -= h
        Jac[:, j] = (np.atleast_1d(gamma(up)) - np.atleast_1d(gamma(dn))) / (2 * h)
    return Jac


def weighted_average_derivative_row(spec: BasisSpec, multi_index,
                                    quadrature_points: int = 200) -> np.ndarray:
    """Row of the uniform-weighted average derivative functional.

    Approximates the integral of the derivative basis row over the box
    under the uniform measure by a tensor midpoint rule.
    """
    axes = []
    for a, b in spec.domain:
        step = (b - a) / quadrature_points
        axes.append(np.linspace(a + step / 2, b - step / 2, quadrature_points))
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    D = derivative_operator(spec, multi_index).matrix
    return (design_matrix(spec, grid) @ D).mean(axis=0)


def functional_variance(Psi: np.ndarray, sigma_bar: CovarianceEstimate,
                        psi_tilde: np.ndarray, n: int) -> np.ndarray:
    """Sandwich variance of the restricted functional of the fit.

    (1/n) M (Psi'Psi)^{-1} Psi' Sigma Psi (Psi'Psi)^{-1} M', evaluated
    through factorized solves and symmetrized.
    """
    Psi = np.asarray(Psi, dtype=float)
    M = np.atleast_2d(np.asarray(psi_tilde, dtype=float))
    if M.shape[1] != Psi.shape[1]:
        raise DimensionError(
            f"restriction has {M.shape[1]} columns, design has {Psi.shape[1]}"
        )
    G = Psi.T @ Psi
    try:
        K = np.linalg.solve(G, M.T)  # P x R
    except np.linalg.LinAlgError as err:
        raise ConditioningError(f"singular design gram: {err}") from err
    middle = Psi.T @ sigma_bar.matrix @ Psi
    V = (K.T @ middle @ K) / n
    return (V + V.T) / 2.0


def inv_sqrt_psd(V: np.ndarray, tol: float = _RANK_RTOL) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    V = np.asarray(V, dtype=float)
    scale = max(1.0, float(np.abs(V).max()))
    if np.abs(V - V.T).max() > 1e-8 * scale:
        raise ValueError("matrix must be symmetric")
    w, Q = np.linalg.eigh((V + V.T) / 2.0)
    if w[0] <= tol * w[-1]:
        raise ConditioningError(
            f"variance matrix nearly singular (lambda_min/lambda_max="
            f"{w[0] / w[-1] if w[-1] > 0 else 0:.3e})",
            lambda_min=float(w[0]),
            lambda_max=float(w[-1]),
        )
    return (Q * (w**-0.5)) @ Q.T


def chi2_sf(x: float, R: int) -> float:
    """Upper tail of the chi-square distribution with R degrees of freedom."""
    if R < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x < 0:
        raise ValueError("statistic must be nonnegative")
    return float(special.gammaincc(R / 2.0, x / 2.0))


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal distribution."""
    return float(0.5 * special.erfc(z / math.sqrt(2.0)))


def wald(fitted: FittedSieve, constraint: ConstraintSpec,
         sigma: CovarianceEstimate) -> WaldReport:
    """Quadratic-form test of the restriction system at the fit.

    The statistic is computed through the symmetric inverse square root
    of the functional variance, never through an explicit inverse.
    """
    M = constraint.psi_tilde
    R = constraint.effective_rank
    V = functional_variance(fitted.design, sigma, M, fitted.n)
    A = inv_sqrt_psd(V)
    discrepancy = M @ fitted.beta_hat - constraint.gamma0
    w_star = float(np.sum((A @ discrepancy) ** 2))
    w_std = (w_star - R) / math.sqrt(2.0 * R)
    return WaldReport(
        w_star=w_star,
        w_standardized=w_std,
        R=R,
        p_chi2=chi2_sf(w_star, R),
        p_normal=normal_sf(w_std),
        covariance_source=sigma.source,
    )


def bias_bound(f_true, fitted: FittedSieve, constraint: ConstraintSpec,
               sigma: CovarianceEstimate, s: int = 0, C3: float = 1.0,
               grid_resolution: int = 200) -> float:
    """Upper bound on the standardized bias of the test statistic.

    sqrt(nT / lambda_min(Sigma)) * [ sup|f - f_P| +
    C3 |f - f_P|_s / sqrt(lambda_min(M M')) ], with f_P the best sieve
    approximation of f on a diagnostic grid.
    """
    import itertools

    spec = fitted.spec
    axes = [np.linspace(a, b, grid_resolution) for a, b in spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    Psi = design_matrix(spec, grid)
    fvals = np.asarray(f_true(grid), dtype=float)
    beta_p, *_ = np.linalg.lstsq(Psi, fvals, rcond=None)

    sup_norm = float(np.abs(fvals - Psi @ beta_p).max())
    sobolev = sup_norm
    for lam in itertools.product(range(s + 1), repeat=spec.ndim):
        if not 0 < sum(lam) <= s:
            continue
        D = derivative_operator(spec, lam).matrix
        approx_part = Psi @ D @ beta_p
        k = next(i for i, v in enumerate(lam) if v > 0)
        h = 1e-5 * (spec.domain[k][1] - spec.domain[k][0])
        up = grid.copy()
        up[:, k] = np.minimum(up[:, k] + h, spec.domain[k][1])
        dn = grid.copy()
        dn[:, k] = np.maximum(dn[:, k] - h, spec.domain[k][0])
        true_part = (np.asarray(f_true(up)) - np.asarray(f_true(dn))) / (
            up[:, k] - dn[:, k]
        )
        sobolev = max(sobolev, float(np.abs(true_part - approx_part).max()))

    MMt = constraint.psi_tilde @ constraint.psi_tilde.T
    lam_min_m = float(np.linalg.eigvalsh(MMt)[0])
    front = math.sqrt(fitted.n * fitted.T / sigma.lambda_min)
    return front * (sup_norm + C3 * sobolev / math.sqrt(lam_min_m))
