"""Post-processing of posterior draws.

* :func:`membership_rescale` maps a two-feature draw to the equivalent
  parameterisation in which the most extreme observations sit on the
  vertices of the simplex.
* :func:`eigen_decompose` turns loadings into eigenvalues and eigenfunctions
  of the joint covariance operator on a weighted grid.
* :func:`simultaneous_band` and :func:`summarize_functions` produce pointwise
  medians with pointwise and simultaneous credible bands.

Bands are centred on the pointwise posterior mean, while the reported point
estimate is the pointwise posterior median.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .basis import BasisSystem, evaluate
from .data import fmt
from .errors import DegenerateBandError, RescaleDegenerateError
from .model import ModelState


# ---------------------------------------------------------------- rescaling


def rescale_matrix(Z: np.ndarray) -> np.ndarray:
    """Rows of ``Z`` attaining each column's maximum, stacked as ``T``."""
    idx = np.argmax(Z, axis=0)
    if len(set(idx.tolist())) < Z.shape[1]:
        raise RescaleDegenerateError("column maxima attained at the same observation")
    return Z[idx].copy()


def membership_rescale(state: ModelState) -> ModelState:
    """Rescale a two-feature draw so memberships span the whole simplex.

    With ``T`` the rows of ``Z`` that maximise each column, the draw becomes
    ``Z T^{-1}``, ``T nu`` and ``T Phi_m``; the fitted means and covariances
    are unchanged.  Draws with more than two features are returned unchanged
    with a warning.
    """
    K = state.Z.shape[1]
    if K != 2:
        if K > 2:
            warnings.warn("membership rescaling is only defined for two features; draw returned unchanged",
                          stacklevel=2)
        return state.copy()
    T = rescale_matrix(state.Z)
    det = np.linalg.det(T)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise RescaleDegenerateError("rescaling matrix is singular")
    out = state.copy()
    out.Z = np.linalg.solve(T.T, state.Z.T).T
    out.nu = T @ state.nu
    out.phi = np.einsum("kj,jpm->kpm", T, state.phi)
    return out


def rescale_draws(draws: Iterable[ModelState]) -> tuple[list[ModelState], int]:
    """Rescale every draw; degenerate draws pass through. Returns (draws, n_degenerate)."""
    out, bad = [], 0
    for d in draws:
        try:
            out.append(membership_rescale(d))
        except RescaleDegenerateError:
            out.append(d.copy())
            bad += 1
    return out, bad


# ---------------------------------------------------------------- eigenpairs


@dataclass
class EigenSystem:
    """``eigenfunctions[p, k]`` is component ``k`` of eigenfunction ``p`` on ``grid``."""

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: np.ndarray
    weights: np.ndarray

    def covariance_block(self, k: int, kp: int) -> np.ndarray:
        psi = self.eigenfunctions
        return np.einsum("p,ps,pt->st", self.eigenvalues, psi[:, k], psi[:, kp])


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return np.ones_like(x)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def default_grid(basis: BasisSystem, per_basis: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Equally spaced grid (``per_basis`` points per basis function and dimension) with trapezoid weights."""
    axes, wts = [], []
    for f in basis.factors:
        x = np.linspace(f.domain[0], f.domain[1], per_basis * f.n_basis)
        axes.append(x)
        wts.append(trapezoid_weights(x))
    if len(axes) == 1:
        return axes[0], wts[0]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    w = np.ones(1)
    for wd in wts:
        w = np.outer(w, wd).ravel()
    return mesh, w


def eigen_decompose(
    state: ModelState,
    basis: BasisSystem,
    grid: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    rel_tol: float = 1e-12,
) -> EigenSystem:
    """Eigen-decomposition of the joint covariance of all features on a grid.

    The ``KR x KR`` covariance (``R`` grid points per feature) is symmetrised
    with the quadrature weights, ``W^{1/2} C W^{1/2}``, and eigenvectors are
    mapped back by ``W^{-1/2}`` so eigenfunctions are orthonormal in the
    weighted inner product.  Eigenvalues below ``rel_tol * lambda_1`` are
    dropped.
    """
    if grid is None:
        grid, weights = default_grid(basis)
    elif weights is None:
        weights = trapezoid_weights(grid) if np.ndim(grid) == 1 else np.full(len(grid), 1.0 / len(grid))
    grid = np.asarray(grid, dtype=float)
    weights = np.asarray(weights, dtype=float)
    K, P, M = state.phi.shape
    S = evaluate(basis, grid)
    R = S.shape[1]
    F = np.concatenate([S.T @ state.phi[k] for k in range(K)], axis=0)  # (K R, M)
    sw = np.sqrt(np.tile(weights, K))
    A = sw[:, None] * F
    # eigenpairs of A A' through the thin SVD of A (rank <= M)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    lam = s**2
    if lam.size == 0 or lam[0] <= 0:
        return EigenSystem(np.zeros(0), np.zeros((0, K, R)), grid, weights)
    keep = lam > rel_tol * lam[0]
    lam, U = lam[keep], U[:, keep]
    psi = (U / sw[:, None]).T.reshape(-1, K, R)
    # fix the sign so that each eigenfunction has a positive weighted sum
    signs = np.sign(np.einsum("pkr,r->p", psi, weights))
    signs[signs == 0] = 1.0
    psi *= signs[:, None, None]
    return EigenSystem(lam, psi, grid, weights)


def write_eigen_csv(eig: EigenSystem, path: str | Path) -> None:
    lines = ["index,eigenvalue"] + [f"{p + 1},{fmt(v)}" for p, v in enumerate(eig.eigenvalues)]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------- bands


@dataclass
class CredibleBand:
    grid: np.ndarray
    center: np.ndarray
    sd: np.ndarray
    m_alpha: float
    lower: np.ndarray
    upper: np.ndarray
    alpha: float = 0.05


def max_standardized_deviation(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-draw ``max_t |g(t) - E g(t)| / SD g(t)`` over points with positive SD."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 2:
        raise DegenerateBandError("need at least two draws for a band")
    center = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1)
    live = sd > 0
    if not np.any(live):
        raise DegenerateBandError("all draws are identical; band is degenerate")
    stat = np.max(np.abs(draws[:, live] - center[live]) / sd[live], axis=1)
    return stat, center, sd


def simultaneous_band(draws: np.ndarray, alpha: float = 0.05, grid: np.ndarray | None = None) -> CredibleBand:
    """Simultaneous ``1 - alpha`` band ``E g(t) -/+ M_alpha SD g(t)``.

    ``M_alpha`` is the ``ceil((1 - alpha) n)``-th smallest of the per-draw
    maximal standardised deviations.  Points with zero posterior SD are left
    out of the maximum and get zero width.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    stat, center, sd = max_standardized_deviation(draws)
    n = stat.size
    order = max(1, int(math.ceil((1.0 - alpha) * n)))
    m_alpha = float(np.sort(stat)[order - 1])
    grid = np.arange(center.size, dtype=float) if grid is None else np.asarray(grid)
    return CredibleBand(grid, center, sd, m_alpha, center - m_alpha * sd, center + m_alpha * sd, alpha)


def pointwise_band(draws: np.ndarray, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    draws = np.asarray(draws, dtype=float)
    return np.quantile(draws, alpha / 2, axis=0), np.quantile(draws, 1 - alpha / 2, axis=0)


# ----------------------------------------------------------------- summaries


@dataclass
class FunctionSummary:
    """Pointwise median and bands of one target function.

    For covariance targets ``grid`` holds the ``(s, t)`` pairs of the
    flattened surface.
    """

    name: str
    grid: np.ndarray
    median: np.ndarray
    lo_pt: np.ndarray
    hi_pt: np.ndarray
    lo_sim: np.ndarray
    hi_sim: np.ndarray
    m_alpha: float = float("nan")

    def to_csv(self, path: str | Path) -> None:
        g = self.grid.reshape(len(self.median), -1)
        cols = ["t"] if g.shape[1] == 1 else ["s", "t"]
        lines = [",".join(cols + ["median", "lo_pt", "hi_pt", "lo_sim", "hi_sim"])]
        for row, vals in zip(g, zip(self.median, self.lo_pt, self.hi_pt, self.lo_sim, self.hi_sim)):
            lines.append(",".join([fmt(x) for x in row] + [fmt(v) for v in vals]))
        Path(path).write_text("\n".join(lines) + "\n")


def parse_target(spec: str | Sequence) -> tuple:
    """``"mean:1"`` -> ``("mean", 0)``; ``"cov:1,2"`` -> ``("cov", 0, 1)`` (1-based in strings)."""
    if not isinstance(spec, str):
        return tuple(spec)
    kind, _, rest = spec.partition(":")
    idx = [int(x) - 1 for x in rest.split(",") if x.strip()]
    if kind == "mean" and len(idx) == 1:
        return ("mean", idx[0])
    if kind == "cov" and len(idx) == 2:
        return ("cov", idx[0], idx[1])
    raise ValueError(f"bad target {spec!r}; use mean:k or cov:k,l")


def target_name(target: tuple) -> str:
    if target[0] == "mean":
        return f"mean_{target[1] + 1}"
    return f"cov_{target[1] + 1}_{target[2] + 1}"


def function_draws(draws: Sequence[ModelState], basis: BasisSystem, grid: np.ndarray, target: tuple) -> np.ndarray:
    """Values of a target function for every draw: (n_draws, n_grid) or (n_draws, n_grid**2)."""
    S = evaluate(basis, grid)
    if target[0] == "mean":
        k = target[1]
        return np.stack([S.T @ d.nu[k] for d in draws])
    _, k, kp = target
    return np.stack([((S.T @ d.phi[k]) @ (S.T @ d.phi[kp]).T).ravel() for d in draws])


def summarize_draws(values: np.ndarray, grid: np.ndarray, name: str, alpha: float = 0.05) -> FunctionSummary:
    median = np.median(values, axis=0)
    lo, hi = pointwise_band(values, alpha)
    try:
        band = simultaneous_band(values, alpha)
        lo_s, hi_s, m = band.lower, band.upper, band.m_alpha
    except DegenerateBandError:
        lo_s, hi_s, m = median.copy(), median.copy(), 0.0
    return FunctionSummary(name, grid, median, lo, hi, lo_s, hi_s, m)


def summarize_functions(
    draws: Sequence[ModelState],
    basis: BasisSystem,
    grid: np.ndarray,
    targets: Sequence,
    alpha: float = 0.05,
    rescale: bool = True,
) -> list[FunctionSummary]:
    """Median and bands for each target; two-feature draws are rescaled first."""
    draws = list(draws)
    if rescale and draws and draws[0].Z.shape[1] == 2:
        draws, _ = rescale_draws(draws)
    grid = np.asarray(grid, dtype=float)
    out = []
    for t in targets:
        t = parse_target(t)
        values = function_draws(draws, basis, grid, t)
        g = grid if t[0] == "mean" else np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
        out.append(summarize_draws(values, g, target_name(t), alpha))
    return out
