"""Model state and the Gaussian sampling model for functional mixed membership.

Observation ``i`` is modelled as

    Y_i(t) = sum_k Z_ik (nu_k' B(t) + sum_m chi_im phi_km' B(t)) + eps,  eps ~ N(0, sigma2)

Integrating the scores ``chi`` out gives a Gaussian with covariance
``V_i + sigma2 I`` where ``V_i = S_i' Phi_i Phi_i' S_i`` and
``Phi_i = sum_k Z_ik phi_k`` (a ``P x M`` matrix).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import BasisSystem, evaluate
from .data import StackedDesign
from .errors import InvalidStateError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))
Z_FLOOR = 1e-10


@dataclass(frozen=True)
class ModelDims:
    K: int
    P: int
    M: int
    N: int

    def __post_init__(self):
        if self.K < 1 or self.P < 1 or self.N < 0:
            raise InvalidStateError(f"invalid dimensions {self}")
        if not 1 <= self.M <= self.K * self.P:
            raise InvalidStateError(f"need 1 <= M <= K*P, got M={self.M}")


@dataclass
class ModelState:
    """One full parameter configuration.

    Shapes: ``nu (K, P)``, ``phi (K, P, M)``, ``chi (N, M)``, ``Z (N, K)``,
    ``pi (K,)``, ``delta (M, K)``, ``gamma (K, P, M)``, ``a1, a2, tau (K,)``;
    ``alpha3`` and ``sigma2`` are floats.
    """

    nu: np.ndarray
    phi: np.ndarray
    chi: np.ndarray
    Z: np.ndarray
    pi: np.ndarray
    alpha3: float
    sigma2: float
    delta: np.ndarray
    gamma: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    tau: np.ndarray

    @property
    def dims(self) -> ModelDims:
        K, P, M = self.phi.shape
        return ModelDims(K, P, M, self.chi.shape[0])

    @property
    def tau_tilde(self) -> np.ndarray:
        """Cumulative shrinkage ``prod_{n<=m} delta_nk`` with shape ``(M, K)``."""
        return np.cumprod(self.delta, axis=0)

    def copy(self) -> "ModelState":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.copy() if isinstance(v, np.ndarray) else float(v)
        return ModelState(**kw)

    def to_dict(self) -> dict[str, np.ndarray]:
        return {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        kw = {}
        for f in fields(cls):
            v = np.asarray(d[f.name], dtype=float)
            kw[f.name] = float(v) if f.name in ("alpha3", "sigma2") else v.copy()
        return cls(**kw)

    def allclose(self, other: "ModelState", atol: float = 0.0) -> bool:
        return all(
            np.allclose(getattr(self, f.name), getattr(other, f.name), rtol=0, atol=atol)
            for f in fields(self)
        )

    def validate(self) -> None:
        K, P, M = self.phi.shape
        N = self.chi.shape[0]
        shapes = {
            "nu": (K, P), "chi": (N, M), "Z": (N, K), "pi": (K,), "delta": (M, K),
            "gamma": (K, P, M), "a1": (K,), "a2": (K,), "tau": (K,),
        }
        for name, shp in shapes.items():
            if np.shape(getattr(self, name)) != shp:
                raise InvalidStateError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shp}")
        for name in ("nu", "phi", "chi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidStateError(f"{name} has non-finite entries")
        for name in ("delta", "gamma", "a1", "a2", "tau"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v) & (v > 0)):
                raise InvalidStateError(f"{name} must be strictly positive")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidStateError("sigma2 must be positive")
        if not (np.isfinite(self.alpha3) and self.alpha3 > 0):
            raise InvalidStateError("alpha3 must be positive")
        for name in ("Z", "pi"):
            v = np.atleast_2d(getattr(self, name))
            if np.any(v <= 0) or np.any(v > 1) or not np.allclose(v.sum(axis=-1), 1.0, atol=1e-9):
                raise InvalidStateError(f"{name} rows must lie in the open simplex")


def clamp_simplex(Z: np.ndarray, floor: float = Z_FLOOR) -> np.ndarray:
    """Clip to ``[floor, 1 - floor]`` and renormalise each row."""
    Z = np.clip(np.asarray(Z, dtype=float), floor, 1.0 - floor)
    return Z / Z.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------------ likelihood


def observation_coefficients(state: ModelState) -> np.ndarray:
    """Per-observation basis coefficients ``sum_k Z_ik (nu_k + sum_m chi_im phi_km)``, shape (N, P)."""
    loadings = np.matmul(state.chi, state.phi.transpose(0, 2, 1))  # (K, N, P)
    return state.Z @ state.nu + np.sum(state.Z.T[:, :, None] * loadings, axis=0)


def fitted_values(state: ModelState, design: StackedDesign) -> np.ndarray:
    coef = observation_coefficients(state)
    return np.einsum("lp,lp->l", design.Bt, coef[design.idx])


def residual_sum_of_squares(state: ModelState, design: StackedDesign) -> float:
    r = design.y - fitted_values(state, design)
    return float(r @ r)


def gaussian_loglik(rss: float, n: int, sigma2: float) -> float:
    return -0.5 * n * (LOG_2PI + np.log(sigma2)) - 0.5 * rss / sigma2


def log_likelihood_conditional(state: ModelState, design: StackedDesign) -> float:
    """``sum_i log N(Y_i; mean_i(chi), sigma2 I)``."""
    if not state.sigma2 > 0:
        raise InvalidStateError("sigma2 must be positive")
    return gaussian_loglik(residual_sum_of_squares(state, design), design.n_total, state.sigma2)


def _chol_with_jitter(A: np.ndarray):
    try:
        return cho_factor(A, lower=True, check_finite=True)
    except LinAlgError:
        jitter = 1e-10 * np.trace(A) / A.shape[0]
        try:
            return cho_factor(A + jitter * np.eye(A.shape[0]), lower=True)
        except LinAlgError as exc:
            raise NumericalError("covariance is not positive definite") from exc


def gaussian_logpdf_chol(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    c = _chol_with_jitter(cov)
    r = x - mean
    sol = cho_solve(c, r)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * (r.size * LOG_2PI + logdet + r @ sol))


def observation_moments(state: ModelState, i: int, design_i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Marginal mean and covariance (``chi`` integrated out) of observation ``i``."""
    z = state.Z[i]
    mean = design_i.T @ (z @ state.nu)
    L = design_i.T @ np.einsum("k,kpm->pm", z, state.phi)
    cov = L @ L.T + state.sigma2 * np.eye(design_i.shape[1])
    return mean, cov


def log_likelihood_marginal(state: ModelState, design: StackedDesign) -> float:
    """``sum_i log N(Y_i; sum_k Z_ik S_i' nu_k, V_i + sigma2 I)``."""
    if not state.sigma2 > 0:
        raise InvalidStateError("sigma2 must be positive")
    total = 0.0
    for i, (S, y) in enumerate(zip(design.designs, design.split(design.y))):
        mean, cov = observation_moments(state, i, S)
        total += gaussian_logpdf_chol(y, mean, cov)
    return total


def pointwise_marginal_logpdf(state: ModelState, design: StackedDesign) -> np.ndarray:
    """Per-point log density with ``chi`` integrated out (variance ``V_i(t,t) + sigma2``)."""
    mean_coef = state.Z @ state.nu
    Phi_i = np.einsum("ik,kpm->ipm", state.Z, state.phi)
    mean = np.einsum("lp,lp->l", design.Bt, mean_coef[design.idx])
    load = np.einsum("lp,lpm->lm", design.Bt, Phi_i[design.idx])
    var = np.einsum("lm,lm->l", load, load) + state.sigma2
    r = design.y - mean
    return -0.5 * (LOG_2PI + np.log(var) + r * r / var)


# ------------------------------------------------------- functions of the state


def _check_feature(state: ModelState, *ks: int) -> None:
    K = state.nu.shape[0]
    for k in ks:
        if not 0 <= k < K:
            raise IndexError(f"feature index {k} out of range for K={K}")


def mean_function(state: ModelState, basis: BasisSystem, k: int, grid) -> np.ndarray:
    _check_feature(state, k)
    return evaluate(basis, grid).T @ state.nu[k]


def cross_covariance_coefficients(state: ModelState, k: int, kp: int) -> np.ndarray:
    """``Sigma_kk' = sum_m phi_km phi_k'm'`` (P x P)."""
    return state.phi[k] @ state.phi[kp].T


def feature_covariance(state: ModelState) -> np.ndarray:
    """Full ``KP x KP`` covariance of the stacked coefficient vector."""
    K, P, M = state.phi.shape
    F = state.phi.reshape(K * P, M)
    return F @ F.T


def covariance_function(state: ModelState, basis: BasisSystem, k: int, kp: int, grid_s, grid_t) -> np.ndarray:
    """``C^(k,k')(s, t) = B(s)' Sigma_kk' B(t)`` tabulated on ``grid_s x grid_t``."""
    _check_feature(state, k, kp)
    Ss = evaluate(basis, grid_s)
    St = Ss if grid_t is grid_s else evaluate(basis, grid_t)
    return (Ss.T @ state.phi[k]) @ (St.T @ state.phi[kp]).T
