"""Least-squares sieve estimation on response panels.

Fits the averaged response of an n x T panel on a tensor polynomial
basis evaluated at the T shared stimuli, via a thin QR factorization
(never an explicit inverse). Also provides pointwise prediction and
derivative evaluation, a varying-coefficient extension for binary
subject covariates, and leave-one-task-out cross-validation through the
hat-matrix identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .basis import BasisSpec, basis_row, derivative_operator, design_matrix
from .exceptions import (
    ConditioningError,
    DimensionError,
    IdentificationError,
    LeverageError,
    RankDeficiencyError,
    SelectionError,
)

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ExperimentData:
    """A complete n x T response panel with shared T x d stimuli.

    ``subject_covariates``, when present, is an n x q binary matrix.
    """

    responses: np.ndarray
    stimuli: np.ndarray
    subject_covariates: np.ndarray = None
    subject_ids: tuple = None
    task_ids: tuple = None

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.responses, dtype=float))
        X = np.atleast_2d(np.asarray(self.stimuli, dtype=float))
        if Y.shape[1] != X.shape[0]:
            raise DimensionError(
                f"panel has {Y.shape[1]} tasks, stimuli have {X.shape[0]} rows"
            )
        if not np.all(np.isfinite(Y)):
            raise ValueError("incomplete panel: non-finite response cells")
        object.__setattr__(self, "responses", Y)
        object.__setattr__(self, "stimuli", X)
        if self.subject_covariates is not None:
            Z = np.atleast_2d(np.asarray(self.subject_covariates, dtype=float))
            if Z.shape[0] != Y.shape[0]:
                raise DimensionError(
                    f"covariates have {Z.shape[0]} rows, panel has {Y.shape[0]}"
                )
            if not np.isin(Z, (0.0, 1.0)).all():
                raise ValueError("subject covariates must be binary")
            object.__setattr__(self, "subject_covariates", Z)

    @property
    def n_subjects(self) -> int:
        return self.responses.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.responses.shape[1]


@dataclass(frozen=True)
class FittedSieve:
    """Fitted coefficients with the design and per-subject residuals."""

    spec: BasisSpec
    beta_hat: np.ndarray
    design: np.ndarray
    avg_response: np.ndarray
    residuals: np.ndarray
    gram_lambda_min: float
    n: int
    T: int
    P: int = field(default=0)

    def __post_init__(self):
        if self.P == 0:
            object.__setattr__(self, "P", self.beta_hat.size)


def average_responses(data: ExperimentData) -> np.ndarray:
    """Per-task mean of the panel, a T-vector."""
    return data.responses.mean(axis=0)


def _check_gram(Psi: np.ndarray) -> float:
    T, P = Psi.shape
    if T < P:
        raise RankDeficiencyError(
            f"underdetermined fit: {P} basis functions but only {T} tasks"
        )
    G = Psi.T @ Psi / T
    w = np.linalg.eigvalsh((G + G.T) / 2.0)
    lam_min, lam_max = float(w[0]), float(w[-1])
    if lam_min <= _RANK_RTOL * lam_max:
        raise ConditioningError(
            f"near-singular design gram (lambda_min={lam_min:.3e})",
            lambda_min=lam_min,
            lambda_max=lam_max,
        )
    return lam_min


def fit(data: ExperimentData, spec: BasisSpec) -> FittedSieve:
    """Sieve least squares of the averaged responses on the basis.

    Solves the normal equations through a thin QR of the design; per
    subject residuals are the rows of Y - (Psi beta_hat)'.
    """
    Psi = design_matrix(spec, data.stimuli)
    lam_min = _check_gram(Psi)
    ybar = average_responses(data)
    beta, *_ = np.linalg.lstsq(Psi, ybar, rcond=None)
    fitted = Psi @ beta
    residuals = data.responses - fitted[None, :]
    return FittedSieve(
        spec=spec,
        beta_hat=beta,
        design=Psi,
        avg_response=ybar,
        residuals=residuals,
        gram_lambda_min=lam_min,
        n=data.n_subjects,
        T=data.n_tasks,
    )


def predict(fitted: FittedSieve, x) -> float:
    """Fitted value psi(x) beta_hat at a point inside the domain."""
    return float(basis_row(fitted.spec, x) @ fitted.beta_hat)


def predict_derivative(fitted: FittedSieve, multi_index, x) -> float:
    """Mixed partial of the fitted function at a point."""
    D = derivative_operator(fitted.spec, multi_index).matrix
    return float(basis_row(fitted.spec, x) @ D @ fitted.beta_hat)


def sup_error(fitted: FittedSieve, f_true, s: int = 0, grid_resolution: int = 50,
              f_true_derivatives: dict = None) -> float:
    """Grid approximation of the Sobolev sup-distance to a known function.

    ``f_true`` takes an (m, d) array of points and returns m values. For
    s >= 1, partials of f_true are taken from ``f_true_derivatives``
    (multi-index -> callable) when given, else by central finite
    differences.
    """
    import itertools

    spec = fitted.spec
    axes = [np.linspace(a, b, grid_resolution) for a, b in spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    Psi = design_matrix(spec, grid)

    def true_partial(lam, pts):
        if sum(lam) == 0:
            return np.asarray(f_true(pts), dtype=float)
        if f_true_derivatives is not None and tuple(lam) in f_true_derivatives:
            return np.asarray(f_true_derivatives[tuple(lam)](pts), dtype=float)
        # central finite differences, one axis at a time
        k = next(i for i, v in enumerate(lam) if v > 0)
        lower = tuple(v - 1 if i == k else v for i, v in enumerate(lam))
        h = 1e-5 * (spec.domain[k][1] - spec.domain[k][0])
        up = pts.copy()
        up[:, k] += h
        dn = pts.copy()
        dn[:, k] -= h
        return (true_partial(lower, up) - true_partial(lower, dn)) / (2 * h)

    worst = 0.0
    for lam in itertools.product(range(s + 1), repeat=spec.ndim):
        if sum(lam) > s:
            continue
        D = derivative_operator(spec, lam).matrix
        fhat = Psi @ D @ fitted.beta_hat
        # finite differences step outside the box at the boundary; restrict
        interior = np.ones(len(grid), dtype=bool)
        if sum(lam) > 0 and f_true_derivatives is None:
            for k in range(spec.ndim):
                a, b = spec.domain[k]
                pad = 2e-5 * (b - a) * lam[k]
                interior &= (grid[:, k] >= a + pad) & (grid[:, k] <= b - pad)
        ftrue = true_partial(lam, grid[interior])
        worst = max(worst, float(np.abs(fhat[interior] - ftrue).max()))
    return worst


def fit_varying_coefficients(data: ExperimentData, spec: BasisSpec) -> dict:
    """Joint least squares for a baseline function and binary-shift terms.

    Regresses all Y_it on (1, Z_i) kron psi(X_t); returns the coefficient
    block ``f0_beta`` of the baseline function and the q x P block
    ``f1_betas`` of the covariate shifts.
    """
    if data.subject_covariates is None:
        Z = np.zeros((data.n_subjects, 0))
    else:
        Z = data.subject_covariates
    n, q = Z.shape[0], Z.shape[1]
    Zt = np.hstack([np.ones((n, 1)), Z])
    M = Zt.T @ Zt / n
    w = np.linalg.eigvalsh(M)
    if w[0] <= _RANK_RTOL * max(w[-1], 1.0):
        raise IdentificationError(
            "sample second moment of (1, Z) is rank deficient; "
            "shift functions are not identified"
        )
    Psi = design_matrix(spec, data.stimuli)
    _check_gram(Psi)
    # normal equations factor as (Zt'Zt) kron (Psi'Psi); solve blockwise
    C = Zt.T @ data.responses @ Psi  # (q+1) x P
    G = Psi.T @ Psi
    theta = np.linalg.solve(Zt.T @ Zt, C)
    coefs = np.linalg.solve(G, theta.T).T  # rows: f0, f1_1, ..., f1_q
    return {"f0_beta": coefs[0], "f1_betas": coefs[1:]}


def _hat_diagonal(Psi: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(Psi, mode="reduced")
    return (Q**2).sum(axis=1)


def loo_cv_score(data: ExperimentData, spec: BasisSpec) -> float:
    """Leave-one-task-out CV on the averaged response, without refits.

    Uses the hat-matrix identity: the deleted residual at task t is the
    ordinary residual divided by 1 - h_tt.
    """
    Psi = design_matrix(spec, data.stimuli)
    if data.n_tasks < spec.size + 1:
        raise RankDeficiencyError(
            f"leave-one-out needs T >= P + 1, got T={data.n_tasks}, P={spec.size}"
        )
    _check_gram(Psi)
    ybar = average_responses(data)
    beta, *_ = np.linalg.lstsq(Psi, ybar, rcond=None)
    resid = ybar - Psi @ beta
    h = _hat_diagonal(Psi)
    if np.any(h >= 1.0 - 1e-10):
        t = int(np.argmax(h))
        raise LeverageError(f"task {t} is pinned by the basis (h_tt={h[t]:.12f})")
    return float(np.mean((resid / (1.0 - h)) ** 2))


def select_order(data: ExperimentData, candidate_specs) -> BasisSpec:
    """Candidate with minimal CV score; ties go to the smallest basis."""
    candidates = list(candidate_specs)
    if not candidates:
        raise SelectionError("no candidate specifications supplied")
    scored = []
    failures = []
    for spec in candidates:
        try:
            scored.append((loo_cv_score(data, spec), spec.size, spec))
        except (RankDeficiencyError, ConditioningError, LeverageError) as err:
            failures.append((spec, err))
    if not scored:
        raise SelectionError(
            f"all {len(candidates)} candidates failed: {failures[0][1]}"
        )
    best_score = min(s for s, _, _ in scored)
    eligible = [(p, spec) for s, p, spec in scored if s == best_score]
    return min(eligible, key=lambda t: t[0])[1]


class SieveRegressor(BaseEstimator, RegressorMixin):
    """Estimator-style front end to the sieve least-squares fit.

    Parameters mirror ``BasisSpec``; ``fit`` accepts the T x d stimuli as
    X and either an n x T panel or a length-T averaged response as y.
    """

    def __init__(self, family="legendre", orders=(2,), domain=None):
        self.family = family
        self.orders = orders
        self.domain = domain

    def _spec(self) -> BasisSpec:
        return BasisSpec(
            family=self.family, orders=tuple(self.orders), domain=self.domain
        )

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        panel = y[None, :] if y.ndim == 1 else y
        data = ExperimentData(responses=panel, stimuli=X)
        self.fitted_ = fit(data, self._spec())
        self.beta_ = self.fitted_.beta_hat
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Psi = design_matrix(self.fitted_.spec, X)
        return Psi @ self.fitted_.beta_hat

    def predict_derivative(self, X, multi_index):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        D = derivative_operator(self.fitted_.spec, multi_index).matrix
        return design_matrix(self.fitted_.spec, X) @ D @ self.fitted_.beta_hat

    def score_cv(self, X, y):
        y = np.asarray(y, dtype=float)
        panel = y[None, :] if y.ndim == 1 else y
        data = ExperimentData(responses=panel, stimuli=np.atleast_2d(X))
        return loo_cv_score(data, self._spec())
