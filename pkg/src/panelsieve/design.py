"""Stimulus designs and their spectral diagnostics.

Grids and (unscrambled) Halton point sets, the sample Gram matrix
Psi'Psi/T, its analytic uniform-measure target for tensor Legendre bases,
and the conditioning checks used to judge whether a design supports a
given basis size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, power_to_legendre
from .exceptions import DimensionError, RankDeficiencyError

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)

_GRID_CAP = 10**7


@dataclass(frozen=True)
class DesignSet:
    """A deterministic T x d stimulus point set inside a box."""

    points: np.ndarray
    generator: str
    box: tuple[tuple[float, float], ...]

    @property
    def n_tasks(self) -> int:
        return self.points.shape[0]

    @property
    def ndim(self) -> int:
        return self.points.shape[1]


def _check_box(box, d=None):
    box = tuple((float(a), float(b)) for a, b in box)
    for a, b in box:
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"invalid box interval [{a}, {b}]")
    if d is not None and len(box) != d:
        raise DimensionError(f"box has {len(box)} axes, expected {d}")
    return box


def grid_design(T_per_axis, box) -> DesignSet:
    """Tensor grid of equispaced points including endpoints.

    An axis with count 1 collapses to the interval midpoint.
    """
    counts = [int(c) for c in T_per_axis]
    if any(c < 1 for c in counts):
        raise ValueError(f"per-axis counts must be >= 1, got {counts}")
    box = _check_box(box, len(counts))
    if math.prod(counts) > _GRID_CAP:
        raise OverflowError(
            f"grid of {math.prod(counts)} points exceeds cap {_GRID_CAP}"
        )
    axes = []
    for c, (a, b) in zip(counts, box):
        axes.append(np.array([(a + b) / 2.0]) if c == 1 else np.linspace(a, b, c))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return DesignSet(points=pts, generator="grid", box=box)


def _radical_inverse(i: int, base: int) -> float:
    inv, denom = 0.0, 1.0
    while i > 0:
        i, digit = divmod(i, base)
        denom *= base
        inv += digit / denom
    return inv


def halton_design(T: int, d: int, box) -> DesignSet:
    """First T points of the (plain) Halton sequence, mapped into the box.

    Indexing starts at 1, so the first base-2 coordinate is 1/2. Supports
    up to 8 dimensions (the first 8 primes as bases).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 1 <= d <= len(_PRIMES):
        raise DimensionError(f"halton supports 1 <= d <= {len(_PRIMES)}, got {d}")
    box = _check_box(box, d)
    unit = np.empty((T, d))
    for k in range(d):
        base = _PRIMES[k]
        unit[:, k] = [_radical_inverse(i, base) for i in range(1, T + 1)]
    lo = np.array([a for a, _ in box])
    hi = np.array([b for _, b in box])
    pts = lo + (hi - lo) * unit
    return DesignSet(points=pts, generator="halton", box=box)


def gram_matrix(Psi: np.ndarray) -> np.ndarray:
    """Psi'Psi / T, symmetrized to remove round-off asymmetry."""
    Psi = np.asarray(Psi, dtype=float)
    if Psi.ndim != 2 or Psi.shape[0] < 1:
        raise ValueError("Psi must be a nonempty T x P matrix")
    G = Psi.T @ Psi / Psi.shape[0]
    return (G + G.T) / 2.0


def target_gram_uniform_legendre(spec: BasisSpec) -> np.ndarray:
    """Exact Gram of the tensor Legendre basis under the uniform measure.

    The diagonal matrix kron_k diag(1/(2j+1), j = 0..J_k).
    """
    if spec.family != "legendre":
        raise ValueError(f"target gram requires legendre family, got {spec.family}")
    diag = np.ones(1)
    for J in spec.orders:
        diag = np.kron(diag, 1.0 / (2.0 * np.arange(J + 1) + 1.0))
    return np.diag(diag)


def gram_deviation(Psi: np.ndarray, Q_P: np.ndarray) -> float:
    """Frobenius distance between the sample Gram and a target matrix."""
    G = gram_matrix(Psi)
    Q_P = np.asarray(Q_P, dtype=float)
    if G.shape != Q_P.shape:
        raise DimensionError(f"gram is {G.shape}, target is {Q_P.shape}")
    return float(np.linalg.norm(G - Q_P, "fro"))


def assumption2_report(Psi: np.ndarray) -> dict:
    """Extreme eigenvalues and condition number of the sample Gram.

    Requires at least as many tasks as basis functions; a numerically
    singular Gram is reported through a tiny ``lambda_min``.
    """
    Psi = np.asarray(Psi, dtype=float)
    T, P = Psi.shape
    if T < P:
        raise RankDeficiencyError(
            f"more basis functions ({P}) than tasks ({T}); the design "
            "cannot identify the coefficients"
        )
    w = np.linalg.eigvalsh(gram_matrix(Psi))
    lam_min, lam_max = float(w[0]), float(w[-1])
    cond = math.inf if lam_min <= 0 else lam_max / lam_min
    return {"lambda_min": lam_min, "lambda_max": lam_max, "condition": cond}


def zielke_check(J: int) -> dict:
    """Spectral condition of the monomial-to-Legendre transform and its bound.

    Returns kappa_2(A_J) together with the bound J * kappa_1(A_J), where
    kappa_1 is the max-column-sum condition number.
    """
    if not 1 <= J <= 20:
        raise ValueError(f"J must be in [1, 20], got {J}")
    A = power_to_legendre(J)
    s = np.linalg.svd(A, compute_uv=False)
    kappa2 = float(s[0] / s[-1])
    A_inv = np.linalg.inv(A)
    kappa1 = float(
        np.abs(A).sum(axis=0).max() * np.abs(A_inv).sum(axis=0).max()
    )
    bound = J * kappa1
    if kappa2 > bound * (1 + 1e-12):
        raise AssertionError(
            f"condition bound violated at J={J}: kappa2={kappa2} > {bound}"
        )
    return {"kappa2": kappa2, "bound": bound}


_REGIMES = ("power_lambda", "power_tau", "spline_lambda", "spline_tau")


def optimal_basis_size(regime: str, c: float, d: int, n: int, T: int, scale: float) -> int:
    """Rate-optimal basis size for a smoothness class and covariance regime.

    ``scale`` is the largest eigenvalue (lambda regimes) or the trace
    (tau regimes) of the average error covariance. The returned size is
    the nearest integer to (nT/scale)^(d/(d+2c)) for the lambda regimes
    and (nT/scale)^(d/(2c)) for the tau regimes, clamped to [1, T].
    """
    if regime not in _REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if min(c, d, n, T, scale) <= 0:
        raise ValueError("all arguments must be positive")
    if regime.startswith("power") and c < d:
        raise ValueError(
            f"power-series consistency requires smoothness c >= d, got c={c}, d={d}"
        )
    if regime.startswith("spline") and 2 * c < d:
        raise ValueError(
            f"spline consistency requires 2c >= d, got c={c}, d={d}"
        )
    ratio = n * T / scale
    if regime.endswith("lambda"):
        exponent = d / (d + 2.0 * c)
    else:
        exponent = d / (2.0 * c)
    P_star = int(round(ratio**exponent))
    return max(1, min(int(T), P_star))
