"""Prior densities and prior simulation.

Parameterisations: every Gamma is shape/rate, ``sigma2 ~ IG(alpha0, beta0)``
with scale ``beta0``, and ``alpha3 ~ Exp(b)`` with rate ``b``.

The random-walk prior on ``nu_k`` is intrinsic (its penalty matrix has a
one-dimensional null space of constant vectors).  Its density is normalised
with the pseudo-determinant, so ``tau_k`` enters as ``tau_k ** (rank / 2)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import gammaln

from .basis import BasisSystem, penalty_matrix
from .errors import ConfigError
from .model import LOG_2PI, ModelDims, ModelState, clamp_simplex


@dataclass(frozen=True)
class Hyperparameters:
    """Prior constants and Metropolis-Hastings proposal tuning.

    None of the defaults come from a published analysis; they are weakly
    informative choices and every one can be overridden from a run config.
    """

    nu_gamma: float = 3.0
    alpha1: float = 2.0
    beta1: float = 1.0
    alpha2: float = 3.0
    beta2: float = 1.0
    alpha_tau: float = 1.0
    beta_tau: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0
    c: tuple[float, ...] | None = None
    b: float = 1.0
    a_z: float = 100.0
    a_pi: float = 100.0
    sigma_alpha3: float = 0.5
    eps1: float = 0.5
    eps2: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "c":
                if v is not None:
                    object.__setattr__(self, "c", tuple(float(x) for x in v))
                    if any(not x > 0 for x in self.c):
                        raise ConfigError("hyperparameter c must be strictly positive")
                continue
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"hyperparameter {f.name} must be strictly positive, got {v}")
        if not self.alpha2 > self.beta2:
            raise ConfigError("alpha2 must exceed beta2 so that E[delta_jk] > 1")

    def c_vector(self, K: int) -> np.ndarray:
        if self.c is None:
            return np.ones(K)
        if len(self.c) != K:
            raise ConfigError(f"c has length {len(self.c)}, expected K={K}")
        return np.asarray(self.c, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c"] = list(self.c) if self.c is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "Hyperparameters":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


class Penalty:
    """Random-walk penalty matrix with its spectral data cached."""

    def __init__(self, matrix: np.ndarray, tol: float = 1e-10):
        self.matrix = np.asarray(matrix, dtype=float)
        evals, evecs = np.linalg.eigh(self.matrix)
        scale = max(float(evals.max()), 1.0)
        pos = evals > tol * scale
        self.rank = int(pos.sum())
        self.log_pdet = float(np.sum(np.log(evals[pos])))
        self.null_space = evecs[:, ~pos]
        # square-root factor so that v'Pv is a sum of squares (no cancellation
        # when v has a huge null-space component)
        self._root = np.sqrt(evals[pos])[:, None] * evecs[:, pos].T
        # proper surrogate used only for drawing: unit precision along the null space
        aug = self.matrix + self.null_space @ self.null_space.T
        w, V = np.linalg.eigh(aug)
        self._draw_factor = V / np.sqrt(w)

    @classmethod
    def from_basis(cls, basis: BasisSystem) -> "Penalty":
        return cls(penalty_matrix(basis))

    @property
    def P(self) -> int:
        return self.matrix.shape[0]

    def quad(self, v: np.ndarray) -> np.ndarray:
        """``v' P v`` for each row of ``v``."""
        r = np.atleast_2d(v) @ self._root.T
        return np.einsum("kr,kr->k", r, r)

    def draw(self, tau: float, rng: np.random.Generator) -> np.ndarray:
        return self._draw_factor @ rng.standard_normal(self.P) / np.sqrt(tau)


# ----------------------------------------------------------------- densities


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def invgamma_logpdf(x, shape, scale):
    x = np.asarray(x, dtype=float)
    return shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x


def dirichlet_logpdf(x, alpha):
    """Row-wise Dirichlet log density; ``x`` and ``alpha`` broadcast over leading axes."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return (
        gammaln(alpha.sum(axis=-1))
        - gammaln(alpha).sum(axis=-1)
        + ((alpha - 1.0) * np.log(x)).sum(axis=-1)
    )


def log_beta_fn(alpha) -> float:
    """Log multivariate Beta function ``log prod Gamma(a_k) - log Gamma(sum a_k)``."""
    alpha = np.asarray(alpha, dtype=float)
    return float(gammaln(alpha).sum() - gammaln(alpha.sum()))


def log_prior_terms(state: ModelState, hyper: Hyperparameters, penalty: Penalty) -> dict[str, float]:
    """Log prior density split by parameter block."""
    K, P, M = state.phi.shape
    h = hyper
    tt = state.tau_tilde.T[:, None, :]  # (K, 1, M)
    prec = state.gamma * tt
    terms = {
        "phi": float(np.sum(0.5 * np.log(prec) - 0.5 * LOG_2PI - 0.5 * prec * state.phi**2)),
        "gamma": float(np.sum(gamma_logpdf(state.gamma, h.nu_gamma / 2, h.nu_gamma / 2))),
        "delta": float(
            np.sum(gamma_logpdf(state.delta[0], state.a1, 1.0))
            + np.sum(gamma_logpdf(state.delta[1:], state.a2[None, :], 1.0))
        ),
        "a1": float(np.sum(gamma_logpdf(state.a1, h.alpha1, h.beta1))),
        "a2": float(np.sum(gamma_logpdf(state.a2, h.alpha2, h.beta2))),
        "nu": float(
            np.sum(
                -0.5 * state.tau * penalty.quad(state.nu)
                + 0.5 * penalty.rank * np.log(state.tau)
                - 0.5 * penalty.rank * LOG_2PI
                + 0.5 * penalty.log_pdet
            )
        ),
        "tau": float(np.sum(gamma_logpdf(state.tau, h.alpha_tau, h.beta_tau))),
        "alpha3": float(np.log(h.b) - h.b * state.alpha3),
        "sigma2": float(invgamma_logpdf(state.sigma2, h.alpha0, h.beta0)),
        "chi": float(-0.5 * state.chi.size * LOG_2PI - 0.5 * np.sum(state.chi**2)),
    }
    if K > 1:
        terms["Z"] = float(np.sum(dirichlet_logpdf(state.Z, state.alpha3 * state.pi)))
        terms["pi"] = float(dirichlet_logpdf(state.pi, h.c_vector(K)))
    else:
        terms["Z"] = 0.0
        terms["pi"] = 0.0
    return terms


def log_prior(state: ModelState, hyper: Hyperparameters, penalty: Penalty) -> float:
    return float(sum(log_prior_terms(state, hyper, penalty).values()))


# ----------------------------------------------------------------- simulation


def sample_dirichlet_rows(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Dirichlet draws, one per row of ``alpha``, via normalised Gammas."""
    g = rng.standard_gamma(alpha)
    s = g.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return g / s


def sample_prior(
    hyper: Hyperparameters,
    dims: ModelDims,
    penalty: Penalty,
    rng: np.random.Generator,
) -> ModelState:
    """Draw a full state from the prior, top of the hierarchy first.

    The improper random-walk prior on ``nu_k`` is replaced for simulation by
    the proper Gaussian with precision ``tau_k (P + U U')``, ``U`` spanning the
    penalty's null space.
    """
    K, P, M, N = dims.K, dims.P, dims.M, dims.N
    h = hyper
    a1 = rng.gamma(h.alpha1, 1.0 / h.beta1, size=K)
    a2 = rng.gamma(h.alpha2, 1.0 / h.beta2, size=K)
    delta = np.empty((M, K))
    delta[0] = rng.gamma(a1, 1.0)
    if M > 1:
        delta[1:] = rng.gamma(np.broadcast_to(a2, (M - 1, K)), 1.0)
    tau_tilde = np.cumprod(delta, axis=0)
    gamma = rng.gamma(h.nu_gamma / 2, 2.0 / h.nu_gamma, size=(K, P, M))
    phi = rng.standard_normal((K, P, M)) / np.sqrt(gamma * tau_tilde.T[:, None, :])
    tau = rng.gamma(h.alpha_tau, 1.0 / h.beta_tau, size=K)
    nu = np.stack([penalty.draw(tau[k], rng) for k in range(K)])
    if K > 1:
        pi = clamp_simplex(rng.dirichlet(h.c_vector(K)))
        alpha3 = float(rng.exponential(1.0 / h.b))
        Z = clamp_simplex(sample_dirichlet_rows(np.broadcast_to(alpha3 * pi, (N, K)), rng))
        Z[~np.all(np.isfinite(Z), axis=1)] = 1.0 / K
    else:
        pi = np.ones(1)
        alpha3 = float(rng.exponential(1.0 / h.b))
        Z = np.ones((N, 1))
    sigma2 = float(1.0 / rng.gamma(h.alpha0, 1.0 / h.beta0))
    chi = rng.standard_normal((N, M))
    return ModelState(
        nu=nu, phi=phi, chi=chi, Z=Z, pi=pi, alpha3=alpha3, sigma2=sigma2,
        delta=delta, gamma=gamma, a1=a1, a2=a2, tau=tau,
    )
