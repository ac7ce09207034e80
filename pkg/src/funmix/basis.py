"""B-spline basis systems: evaluation, Gram matrices and random-walk penalties.

A :class:`BasisSystem` is a tensor product of one or more clamped 1-D
B-spline factors.  The one-dimensional case is simply a product with a single
factor.  Basis functions are ordered with the first factor varying slowest,
matching ``np.kron``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, InvalidKnotError, UnsupportedDimensionError

MAX_DIMENSION = 4


@dataclass(frozen=True)
class BSpline1D:
    """Clamped B-spline space on a closed interval."""

    degree: int
    interior_knots: tuple[float, ...]
    domain: tuple[float, float]

    @property
    def n_basis(self) -> int:
        return self.degree + 1 + len(self.interior_knots)

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.domain
        k = self.degree
        return np.concatenate([np.full(k + 1, lo), self.interior_knots, np.full(k + 1, hi)])

    @property
    def breakpoints(self) -> np.ndarray:
        lo, hi = self.domain
        return np.concatenate([[lo], self.interior_knots, [hi]])

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(-1)
        lo, hi = self.domain
        if t.size and (np.any(t < lo) or np.any(t > hi) or not np.all(np.isfinite(t))):
            raise DomainError(f"evaluation points must lie in [{lo}, {hi}]")
        if t.size == 0:
            return np.zeros((self.n_basis, 0))
        dm = BSpline.design_matrix(t, self.knot_vector, self.degree)
        return np.ascontiguousarray(dm.toarray().T)

    def quadrature(self, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre nodes and weights, ``order`` points per knot span."""
        order = self.degree + 2 if order is None else int(order)
        x, w = np.polynomial.legendre.leggauss(order)
        bp = self.breakpoints
        a, b = bp[:-1, None], bp[1:, None]
        nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
        weights = 0.5 * (b - a) * w
        return nodes.ravel(), weights.ravel()

    def gram(self, order: int | None = None) -> np.ndarray:
        nodes, weights = self.quadrature(order)
        B = self.evaluate(nodes)
        G = (B * weights) @ B.T
        return 0.5 * (G + G.T)

    def penalty(self) -> np.ndarray:
        return first_order_penalty(self.n_basis)


@dataclass(frozen=True)
class BasisSystem:
    """Tensor product of clamped 1-D B-spline factors (``d = len(factors)``)."""

    factors: tuple[BSpline1D, ...]

    def __post_init__(self):
        if not 1 <= len(self.factors) <= MAX_DIMENSION:
            raise UnsupportedDimensionError(
                f"basis dimension must be between 1 and {MAX_DIMENSION}, got {len(self.factors)}"
            )

    @property
    def dimension(self) -> int:
        return len(self.factors)

    @property
    def n_basis(self) -> int:
        return int(np.prod([f.n_basis for f in self.factors]))

    P = n_basis

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return tuple(f.domain for f in self.factors)

    def to_dict(self) -> dict:
        return {
            "factors": [
                {"degree": f.degree, "interior_knots": list(f.interior_knots), "domain": list(f.domain)}
                for f in self.factors
            ]
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "BasisSystem":
        return basis_from_config(spec)


def first_order_penalty(P: int) -> np.ndarray:
    """Tridiagonal first-order random-walk penalty: ``v'Pv = sum (v_p - v_{p+1})^2``."""
    D = np.diff(np.eye(P), axis=0)
    return D.T @ D


def equally_spaced_knots(n_knots: int, domain: tuple[float, float] = (0.0, 1.0)) -> tuple[float, ...]:
    lo, hi = domain
    return tuple(np.linspace(lo, hi, n_knots + 2)[1:-1].tolist())


def build_bspline_basis(
    degree: int,
    interior_knots: Sequence[float] | int = (),
    domain: tuple[float, float] = (0.0, 1.0),
) -> BasisSystem:
    """One-dimensional clamped B-spline basis.

    ``interior_knots`` may be an explicit sorted sequence or an integer count of
    equally spaced knots.
    """
    if int(degree) != degree or degree < 0:
        raise InvalidKnotError(f"degree must be a non-negative integer, got {degree}")
    lo, hi = (float(domain[0]), float(domain[1]))
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise InvalidKnotError(f"invalid domain {domain}")
    if isinstance(interior_knots, (int, np.integer)):
        knots = equally_spaced_knots(int(interior_knots), (lo, hi))
    else:
        knots = tuple(float(k) for k in interior_knots)
    arr = np.asarray(knots, dtype=float)
    if arr.size:
        if np.any(arr <= lo) or np.any(arr >= hi):
            raise InvalidKnotError("interior knots must lie strictly inside the domain")
        if np.any(np.diff(arr) <= 0):
            raise InvalidKnotError("interior knots must be strictly increasing")
    return BasisSystem((BSpline1D(int(degree), knots, (lo, hi)),))


def build_tensor_basis(per_dim: Sequence[BasisSystem]) -> BasisSystem:
    factors = tuple(f for b in per_dim for f in b.factors)
    return BasisSystem(factors)


def _as_points(basis: BasisSystem, grid) -> np.ndarray:
    pts = np.asarray(grid, dtype=float)
    d = basis.dimension
    if d == 1:
        return pts.reshape(-1, 1)
    if pts.ndim == 1 and pts.size == d:
        pts = pts.reshape(1, d)
    if pts.ndim != 2 or pts.shape[1] != d:
        raise DomainError(f"grid for a {d}-D basis must have shape (n, {d})")
    return pts


def evaluate(basis: BasisSystem, grid) -> np.ndarray:
    """Design matrix ``S`` of shape ``(P, n)``; column ``j`` is ``B(t_j)``."""
    pts = _as_points(basis, grid)
    mats = [f.evaluate(pts[:, j]) for j, f in enumerate(basis.factors)]
    n = pts.shape[0]
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, n)
    return out


def gram_matrix(basis: BasisSystem, quadrature_order: int | None = None) -> np.ndarray:
    """``G_ij = int b_i b_j``, exact for the default order ``degree + 2`` per span."""
    return reduce(np.kron, [f.gram(quadrature_order) for f in basis.factors])


def penalty_matrix(basis: BasisSystem) -> np.ndarray:
    """Random-walk penalty; for tensor bases the Gram-weighted Kronecker sum."""
    if basis.dimension == 1:
        return basis.factors[0].penalty()
    grams = [f.gram() for f in basis.factors]
    total = 0.0
    for d, f in enumerate(basis.factors):
        mats = [f.penalty() if j == d else grams[j] for j in range(basis.dimension)]
        total = total + reduce(np.kron, mats)
    return 0.5 * (total + total.T)


def basis_from_config(spec: dict) -> BasisSystem:
    """Build from a config mapping.

    Accepts either ``{"degree": 3, "interior_knots": 4, "domain": [0, 1]}`` for
    one dimension or ``{"factors": [ {...}, {...} ]}`` for a tensor product.
    """
    if "factors" in spec:
        return build_tensor_basis([basis_from_config(f) for f in spec["factors"]])
    knots = spec.get("interior_knots", spec.get("n_knots", 0))
    return build_bspline_basis(
        int(spec.get("degree", 3)), knots, tuple(spec.get("domain", (0.0, 1.0)))
    )
