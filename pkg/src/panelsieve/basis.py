"""Polynomial bases on axis-aligned boxes.

Univariate Legendre and power (monomial) bases evaluated after an affine
map of each axis onto [-1, 1], their tensor products ordered
lexicographically with dimension 1 outermost, and the matrix machinery
that realizes differentiation on coefficient vectors:

* ``power_diff_matrix`` gives the super-diagonal matrix of d/dx on
  monomial coefficients,
* ``power_to_legendre`` gives the upper-triangular change of basis from
  monomials to Legendre polynomials,
* ``legendre_diff_matrix`` gives the strictly upper triangular matrix of
  d/dx on Legendre coefficients (the conjugate of the two above),
* ``derivative_operator`` tensors these per axis, with the chain-rule
  factors of the affine domain map folded in.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DomainError

_EDGE_TOL = 1e-12

_FAMILIES = ("legendre", "power")


@dataclass(frozen=True)
class BasisSpec:
    """Family, per-dimension maximum degrees and domain box of a tensor basis.

    The tensor ordering is lexicographic over multi-indices with
    dimension 1 outermost, i.e. the row for a point x is
    ``row(x_1) kron row(x_2) kron ...``.
    """

    family: str
    orders: tuple[int, ...]
    domain: tuple[tuple[float, float], ...] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        orders = tuple(int(j) for j in self.orders)
        if len(orders) == 0:
            raise ValueError("orders must be nonempty")
        if any(j < 0 for j in orders):
            raise ValueError(f"degrees must be nonnegative, got {orders}")
        object.__setattr__(self, "orders", orders)
        if self.domain is None:
            dom = tuple((-1.0, 1.0) for _ in orders)
        else:
            dom = tuple((float(a), float(b)) for a, b in self.domain)
        if len(dom) != len(orders):
            raise DimensionError(
                f"domain has {len(dom)} axes, orders have {len(orders)}"
            )
        for a, b in dom:
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValueError(f"invalid domain interval [{a}, {b}]")
        object.__setattr__(self, "domain", dom)

    @property
    def ndim(self) -> int:
        return len(self.orders)

    @property
    def size(self) -> int:
        """Total number of tensor basis functions."""
        return int(np.prod([j + 1 for j in self.orders]))

    def map_to_unit(self, x: np.ndarray) -> np.ndarray:
        """Affinely map points in the domain box to [-1, 1]^d."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.ndim:
            raise DimensionError(
                f"points have dimension {x.shape[1]}, spec has {self.ndim}"
            )
        lo = np.array([a for a, _ in self.domain])
        hi = np.array([b for _, b in self.domain])
        u = (2.0 * x - lo - hi) / (hi - lo)
        if np.any(np.abs(u) > 1.0 + _EDGE_TOL):
            k = int(np.argmax(np.max(np.abs(u), axis=1) > 1.0 + _EDGE_TOL))
            raise DomainError(f"point {x[k]} outside domain box {self.domain}")
        return np.clip(u, -1.0, 1.0)

    def multi_indices(self) -> list[tuple[int, ...]]:
        """Multi-indices in the tensor ordering of the basis columns."""
        return list(itertools.product(*(range(j + 1) for j in self.orders)))

    def to_config(self) -> dict:
        return {
            "family": self.family,
            "orders": list(self.orders),
            "domain": [list(ab) for ab in self.domain],
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "BasisSpec":
        return cls(
            family=cfg["family"],
            orders=tuple(cfg["orders"]),
            domain=tuple(tuple(ab) for ab in cfg["domain"])
            if cfg.get("domain") is not None
            else None,
        )


@dataclass(frozen=True)
class DerivOperator:
    """P x P matrix realizing a mixed partial on coefficient vectors.

    The chain-rule factors prod_k (2/(b_k - a_k))^lambda_k of the affine
    domain map are already absorbed into ``matrix``.
    """

    matrix: np.ndarray
    multi_index: tuple[int, ...]
    chain_factor: float = field(default=1.0)


def eval_legendre(j: int, x: float) -> float:
    """Evaluate the Legendre polynomial L_j at x in [-1, 1].

    Uses the three-term recurrence (j+1) L_{j+1} = (2j+1) x L_j - j L_{j-1};
    x may overshoot the interval by at most 1e-12 and is clamped.
    """
    if j < 0:
        raise ValueError(f"degree must be nonnegative, got {j}")
    if abs(x) > 1.0 + _EDGE_TOL:
        raise DomainError(f"x={x} outside [-1, 1]")
    x = min(1.0, max(-1.0, x))
    return float(_legendre_row(int(j), np.array([x]))[0, j])


def _legendre_row(jmax: int, u: np.ndarray) -> np.ndarray:
    """All L_0..L_jmax at the points u, shape (len(u), jmax + 1)."""
    out = np.ones((u.size, jmax + 1))
    if jmax >= 1:
        out[:, 1] = u
    for j in range(1, jmax):
        out[:, j + 1] = ((2 * j + 1) * u * out[:, j] - j * out[:, j - 1]) / (j + 1)
    return out


def _power_row(jmax: int, u: np.ndarray) -> np.ndarray:
    return u[:, None] ** np.arange(jmax + 1)[None, :]


def _univariate_rows(spec: BasisSpec, u: np.ndarray) -> list[np.ndarray]:
    rows = _legendre_row if spec.family == "legendre" else _power_row
    return [rows(spec.orders[k], u[:, k]) for k in range(spec.ndim)]


def basis_row(spec: BasisSpec, x) -> np.ndarray:
    """Tensor basis row at a single point, length ``spec.size``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DimensionError("basis_row expects a single point")
    u = spec.map_to_unit(x[None, :])
    blocks = _univariate_rows(spec, u)
    row = blocks[0][0]
    for b in blocks[1:]:
        row = np.kron(row, b[0])
    return row


def design_matrix(spec: BasisSpec, X) -> np.ndarray:
    """Stack basis rows at the T points of X (T x d) into a T x P matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise DimensionError("X must be a T x d array of points")
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    try:
        u = spec.map_to_unit(X)
    except DomainError as err:
        raise DomainError(f"design point outside domain: {err}") from err
    blocks = _univariate_rows(spec, u)
    out = blocks[0]
    for b in blocks[1:]:
        out = out[:, :, None] * b[:, None, :]
        out = out.reshape(out.shape[0], -1)
    return out


def power_diff_matrix(J: int) -> np.ndarray:
    """Matrix of d/dx on monomial coefficients in the row-vector convention.

    Super-diagonal entries 1, 2, ..., J so that d psi_pow / dx = psi_pow B.
    """
    if J < 0:
        raise ValueError(f"degree must be nonnegative, got {J}")
    B = np.zeros((J + 1, J + 1))
    for j in range(J):
        B[j, j + 1] = j + 1
    return B


def power_to_legendre(J: int) -> np.ndarray:
    """Upper-triangular A with psi_legendre(x) = psi_pow(x) A.

    Column j holds the monomial coefficients of L_j; the diagonal entry is
    (2j)! / (2^j (j!)^2) > 0.
    """
    if J < 0:
        raise ValueError(f"degree must be nonnegative, got {J}")
    A = np.zeros((J + 1, J + 1))
    A[0, 0] = 1.0
    if J >= 1:
        A[1, 1] = 1.0
    for j in range(1, J):
        # (j+1) L_{j+1} = (2j+1) x L_j - j L_{j-1}, on coefficient vectors
        shifted = np.zeros(J + 1)
        shifted[1 : j + 2] = A[: j + 1, j]
        A[:, j + 1] = ((2 * j + 1) * shifted - j * A[:, j - 1]) / (j + 1)
    return A


def legendre_diff_matrix(J: int) -> np.ndarray:
    """Strictly upper triangular S with d psi_legendre / dx = psi_legendre S.

    Built from the expansion dL_j/dx = sum_{k < j, j-k odd} (2k+1) L_k, which
    coincides with the conjugation A^{-1} B A of the monomial machinery.
    """
    if J < 0:
        raise ValueError(f"degree must be nonnegative, got {J}")
    S = np.zeros((J + 1, J + 1))
    for j in range(1, J + 1):
        for k in range(j - 1, -1, -2):
            S[k, j] = 2 * k + 1
    return S


def kronecker_sum(S_J: np.ndarray, S_K: np.ndarray) -> np.ndarray:
    """S_J kron I + I kron S_K for two square matrices."""
    S_J = np.asarray(S_J, dtype=float)
    S_K = np.asarray(S_K, dtype=float)
    if S_J.ndim != 2 or S_J.shape[0] != S_J.shape[1]:
        raise DimensionError("first argument must be square")
    if S_K.ndim != 2 or S_K.shape[0] != S_K.shape[1]:
        raise DimensionError("second argument must be square")
    return np.kron(S_J, np.eye(S_K.shape[0])) + np.kron(np.eye(S_J.shape[0]), S_K)


def derivative_operator(spec: BasisSpec, multi_index) -> DerivOperator:
    """Coefficient-space operator of the mixed partial d^lambda.

    Tensor product over axes of the univariate differentiation matrix
    raised to lambda_k, scaled by (2/(b_k - a_k))^lambda_k per axis.
    """
    lam = tuple(int(v) for v in np.atleast_1d(multi_index))
    if len(lam) != spec.ndim:
        raise DimensionError(
            f"multi-index has length {len(lam)}, spec has dimension {spec.ndim}"
        )
    if any(v < 0 for v in lam):
        raise ValueError(f"multi-index must be nonnegative, got {lam}")
    diff = legendre_diff_matrix if spec.family == "legendre" else power_diff_matrix
    chain = 1.0
    D = np.ones((1, 1))
    for k, (J, (a, b)) in enumerate(zip(spec.orders, spec.domain)):
        scale = (2.0 / (b - a)) ** lam[k]
        chain *= scale
        Dk = np.linalg.matrix_power(diff(J), lam[k]) * scale
        D = np.kron(D, Dk)
    return DerivOperator(matrix=D, multi_index=lam, chain_factor=chain)


def _multi_indices_up_to(s: int, d: int):
    for lam in itertools.product(range(s + 1), repeat=d):
        if sum(lam) <= s:
            yield lam


def _tensor_grid(spec: BasisSpec, resolution: int) -> np.ndarray:
    axes = [np.linspace(a, b, resolution) for a, b in spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def zeta_s(spec: BasisSpec, s: int, grid_resolution: int = 50) -> float:
    """Grid approximation of the sup over x of the basis-row norm.

    Maximizes the Euclidean norm of d^lambda psi(x) over all |lambda| <= s
    and a tensor grid including the endpoints. This is a certified lower
    bound of the continuous supremum only; for Legendre with s = 0 it is
    exact because the sup is attained at the corners of the box.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    grid = _tensor_grid(spec, grid_resolution)
    Psi = design_matrix(spec, grid)
    best = 0.0
    for lam in _multi_indices_up_to(s, spec.ndim):
        D = derivative_operator(spec, lam).matrix
        rows = Psi @ D
        best = max(best, float(np.sqrt((rows**2).sum(axis=1)).max()))
    return best
