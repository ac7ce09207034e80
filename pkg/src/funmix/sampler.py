"""Metropolis-within-Gibbs updates for the functional mixed membership model.

Every update works on a :class:`SamplerContext`, which caches the
per-observation sufficient statistics ``S_i y_i``, ``S_i S_i'`` and
``y_i' y_i``.  The model mean is linear in per-observation basis
coefficients, so no update ever touches the raw grid.

All updates accept a likelihood temperature ``beta`` (the likelihood is raised
to the power ``beta``); ``beta = 1`` is the ordinary posterior.  Updates
mutate the state in place and return it.

The ``*_conditional`` functions expose the exact full conditionals used by
the Gibbs steps and the ``log_target_*`` functions the unnormalised targets
of the Metropolis-Hastings steps, so that tests can check them against the
log joint density.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtrs
from scipy.special import gammaln, log_ndtr, ndtr, ndtri

from .data import StackedDesign
from .errors import ConstraintSingularError, NumericalError
from .model import LOG_2PI, ModelState, observation_coefficients
from .priors import Hyperparameters, Penalty, dirichlet_logpdf, log_beta_fn, sample_dirichlet_rows

BLOCKS = ("phi", "delta", "gamma", "a", "nu", "tau", "z", "pi", "alpha3", "chi", "sigma2")
DIRICHLET_FLOOR = 1e-12
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class SamplerContext:
    """Data summaries and fixed model artefacts shared by all updates."""

    def __init__(
        self,
        design: StackedDesign,
        hyper: Hyperparameters,
        penalty: Penalty,
        gram: np.ndarray | None = None,
    ):
        self.design = design
        self.hyper = hyper
        self.penalty = penalty
        self.gram = gram
        # per-row Dirichlet concentration for the z proposal; None means hyper.a_z
        self.z_scale: np.ndarray | None = None
        self.N = design.N
        self.P = design.P
        self.counts = design.counts.astype(float)
        self.n_total = design.n_total
        self.G = np.ascontiguousarray(design.grams)
        self.G_flat = self.G.reshape(self.N, self.P * self.P)
        self.G_rows = self.G.reshape(self.N * self.P, self.P)
        # every observation on the same grid: one Gram matrix serves all
        self.G0 = self.G[0].copy() if self.N and np.all(self.G == self.G[0]) else None
        if design.N:
            self.Sy = np.stack([S @ y for S, y in zip(design.designs, design.split(design.y))])
            self.yy = design.segment_sum(design.y * design.y)
        else:
            self.Sy = np.zeros((0, self.P))
            self.yy = np.zeros(0)

    def with_data(self, design: StackedDesign) -> "SamplerContext":
        return SamplerContext(design, self.hyper, self.penalty, self.gram)

    def with_z_scale(self, z_scale: np.ndarray | None) -> "SamplerContext":
        """Shallow copy whose z proposal uses concentration ``z_scale[i]`` for row ``i``."""
        other = object.__new__(SamplerContext)
        other.__dict__.update(self.__dict__)
        other.z_scale = None if z_scale is None else np.asarray(z_scale, dtype=float).reshape(self.N)
        return other

    def with_y(self, y: np.ndarray) -> "SamplerContext":
        """Same design points with new responses (cheap; used by Geweke tests)."""
        other = object.__new__(SamplerContext)
        other.__dict__.update(self.__dict__)
        design = self.design.with_y(y)
        other.design = design
        B = design.Bt * y[:, None]
        other.Sy = np.stack([np.bincount(design.idx, weights=B[:, p], minlength=self.N) for p in range(self.P)], axis=1)
        other.yy = design.segment_sum(y * y)
        return other

    # residual summaries from coefficients ------------------------------------

    def apply_gram(self, X: np.ndarray) -> np.ndarray:
        """Row-wise ``G_i x_i`` for an (N, P) array."""
        if self.G0 is not None:
            return X @ self.G0
        return np.matmul(self.G, X[:, :, None])[:, :, 0]

    def weighted_gram(self, w: np.ndarray) -> np.ndarray:
        """``sum_i w_i G_i``."""
        if self.G0 is not None:
            return w.sum() * self.G0
        return (w @ self.G_flat).reshape(self.P, self.P)

    def projected_residual(self, coef: np.ndarray) -> np.ndarray:
        """``S_i (y_i - S_i' c_i)`` for every observation."""
        return self.Sy - self.apply_gram(coef)

    def rss_per_obs(self, coef: np.ndarray) -> np.ndarray:
        Gc = self.apply_gram(coef)
        return self.yy - np.sum(coef * (2.0 * self.Sy - Gc), axis=1)

    def rss(self, state: ModelState) -> float:
        if self.N == 0:
            return 0.0
        return float(self.rss_per_obs(observation_coefficients(state)).sum())

    def log_likelihood(self, state: ModelState) -> float:
        rss = self.rss(state)
        return -0.5 * self.n_total * (LOG_2PI + np.log(state.sigma2)) - 0.5 * rss / state.sigma2


@dataclass
class SweepReport:
    """MH acceptance outcomes of one sweep plus the log-likelihood afterwards."""

    a1: np.ndarray
    a2: np.ndarray
    z: np.ndarray
    pi: bool
    alpha3: bool
    log_likelihood: float = float("nan")
    updated: tuple[str, ...] = field(default=BLOCKS)

    @property
    def accepted(self) -> dict[str, bool]:
        out = {f"a1[{k}]": bool(v) for k, v in enumerate(self.a1)}
        out.update({f"a2[{k}]": bool(v) for k, v in enumerate(self.a2)})
        out.update({f"z[{i}]": bool(v) for i, v in enumerate(self.z)})
        out["pi"] = bool(self.pi)
        out["alpha3"] = bool(self.alpha3)
        return out


# ---------------------------------------------------------------- primitives


def cholesky_jitter(Q: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying with a growing diagonal jitter."""
    L, info = dpotrf(Q, lower=1, clean=1)
    if info == 0 and np.isfinite(L[-1, -1]):
        return L
    if not np.all(np.isfinite(Q)):
        raise NumericalError("precision matrix has non-finite entries")
    scale = max(float(np.mean(np.diag(Q))), 1e-300)
    eye = np.eye(Q.shape[0])
    for j in _JITTERS[1:]:
        L, info = dpotrf(Q + (j * scale) * eye, lower=1, clean=1)
        if info == 0:
            return L
    raise NumericalError("precision matrix is not positive definite after jitter")


def _solve_lower(L, b, transpose=False):
    x, info = dtrtrs(L, b, lower=1, trans=1 if transpose else 0)
    return x


def gaussian_from_precision(b: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``Q^{-1} b`` and the lower Cholesky factor of ``Q``."""
    L = cholesky_jitter(Q)
    return _solve_lower(L, _solve_lower(L, b), transpose=True), L


def draw_gaussian_precision(b: np.ndarray, Q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mean, L = gaussian_from_precision(b, Q)
    return mean + _solve_lower(L, rng.standard_normal(b.shape[0]), transpose=True)


def truncnorm_positive(mean, sd, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``N(mean, sd^2)`` truncated to ``(0, inf)`` by inverse CDF.

    Works with the upper-tail mass ``ndtr(mean/sd)`` so that draws stay
    accurate when the truncation point is far in the tail.
    """
    mean = np.asarray(mean, dtype=float)
    u = 1.0 - rng.random(mean.shape)
    z = -ndtri(u * ndtr(mean / sd))
    return np.maximum(mean + sd * z, np.finfo(float).tiny)


def truncnorm_positive_log_norm(mean, sd):
    """Log normaliser ``log P(X > 0)`` of ``N(mean, sd^2)``."""
    return log_ndtr(np.asarray(mean, dtype=float) / sd)


def _mh_accept(log_ratio, rng: np.random.Generator):
    log_ratio = np.asarray(log_ratio, dtype=float)
    u = rng.random(log_ratio.shape)
    return np.log(u) < log_ratio


def _order(n: int, reverse: bool):
    return range(n - 1, -1, -1) if reverse else range(n)


# ----------------------------------------------------------------- phi block


def phi_conditional(
    state: ModelState, ctx: SamplerContext, j: int, m: int, beta: float = 1.0, resid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Linear term and precision of ``phi_jm | rest``: ``N(Q^{-1} b, Q^{-1})``.

    ``resid`` is the current projected residual (see
    :meth:`SamplerContext.projected_residual`); it is recomputed if omitted.
    """
    if resid is None:
        resid = ctx.projected_residual(observation_coefficients(state))
    w = state.Z[:, j] * state.chi[:, m]
    s = beta / state.sigma2
    Gw2 = ctx.weighted_gram(w * w)
    b = s * (w @ resid + Gw2 @ state.phi[j, :, m])
    Q = s * Gw2 + np.diag(state.gamma[j, :, m] * state.tau_tilde[m, j])
    return b, Q


def _shift_residual(ctx: SamplerContext, resid: np.ndarray, w: np.ndarray, delta: np.ndarray) -> None:
    """Account for ``c_i += w_i * delta`` in the projected residual (in place)."""
    if ctx.G0 is not None:
        resid -= np.outer(w, ctx.G0 @ delta)
        return
    resid -= w[:, None] * (ctx.G_rows @ delta).reshape(ctx.N, ctx.P)


def update_phi(
    state: ModelState,
    ctx: SamplerContext,
    rng: np.random.Generator,
    beta: float = 1.0,
    reverse: bool = False,
) -> ModelState:
    """Gibbs draw of every ``phi_jm`` from its Gaussian conditional, ``j`` outer, ``m`` inner."""
    K, P, M = state.phi.shape
    resid = ctx.projected_residual(observation_coefficients(state))
    for j in _order(K, reverse):
        for m in _order(M, reverse):
            b, Q = phi_conditional(state, ctx, j, m, beta, resid)
            new = draw_gaussian_precision(b, Q, rng)
            _shift_residual(ctx, resid, state.Z[:, j] * state.chi[:, m], new - state.phi[j, :, m])
            state.phi[j, :, m] = new
    return state


def condition_on_constraint(
    mean: np.ndarray, cov: np.ndarray, L: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Moments of ``x ~ N(mean, cov)`` conditioned on ``L' x = -c``."""
    S = L.T @ cov @ L
    CL = cov @ L
    gain = np.linalg.solve(S, CL.T).T
    return mean - gain @ (L.T @ mean + c), cov - gain @ CL.T


def orthogonality_constraints(state: ModelState, gram: np.ndarray, j: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Constraint ``L' phi_jm = -c`` making ``Phi_m`` orthogonal to every other ``Phi_n``.

    The inner product is ``<Phi_m, Phi_n> = sum_k phi_km' G phi_kn``.
    """
    K, P, M = state.phi.shape
    others = [n for n in range(M) if n != m]
    L = gram @ state.phi[j][:, others]
    rest = [k for k in range(K) if k != j]
    c = np.zeros(len(others))
    for k in rest:
        c += state.phi[k, :, m] @ gram @ state.phi[k][:, others]
    return L, c


def update_phi_orthogonal(
    state: ModelState,
    ctx: SamplerContext,
    rng: np.random.Generator,
    beta: float = 1.0,
    reverse: bool = False,
) -> ModelState:
    """Gibbs update of ``phi`` restricted to mutually orthogonal ``Phi_m`` directions.

    An unconstrained conditional draw is projected onto the constraint set
    ``L' phi_jm = -c`` along the conditional covariance, which is an exact draw
    from the constrained Gaussian.  Constraints whose ``L`` column vanishes are
    void (the other direction is zero on feature ``j``) and are dropped.
    """
    if ctx.gram is None:
        raise ValueError("orthogonal phi update requires the basis Gram matrix")
    K, P, M = state.phi.shape
    scale = max(float(np.abs(ctx.gram).max()), 1.0)
    resid = ctx.projected_residual(observation_coefficients(state))
    for j in _order(K, reverse):
        for m in _order(M, reverse):
            b, Q = phi_conditional(state, ctx, j, m, beta, resid)
            mean, Lq = gaussian_from_precision(b, Q)
            x = mean + _solve_lower(Lq, rng.standard_normal(P), transpose=True)
            L, c = orthogonality_constraints(state, ctx.gram, j, m)
            if L.shape[1]:
                live = np.linalg.norm(L, axis=0) > 1e-12 * scale
                if np.any(~live & (np.abs(c) > 1e-10 * scale)):
                    raise ConstraintSingularError("orthogonality constraint is infeasible")
                L, c = L[:, live], c[live]
            if L.shape[1]:
                if L.shape[1] >= P:
                    raise ConstraintSingularError("more orthogonality constraints than basis functions")
                cov = np.linalg.inv(Q)
                S = L.T @ cov @ L
                if np.linalg.cond(S) > 1e12:
                    raise ConstraintSingularError("orthogonality constraint system is rank deficient")
                x = x - cov @ L @ np.linalg.solve(S, L.T @ x + c)
            _shift_residual(ctx, resid, state.Z[:, j] * state.chi[:, m], x - state.phi[j, :, m])
            state.phi[j, :, m] = x
    return state


# ------------------------------------------------------- shrinkage hierarchy


def delta_conditional(state: ModelState, hyper: Hyperparameters, h: int, k: int) -> tuple[float, float]:
    """Shape and rate of ``delta_hk | rest`` (``h`` is 0-based)."""
    K, P, M = state.phi.shape
    col = state.delta[:, k].copy()
    col[h] = 1.0
    partial = np.cumprod(col)  # prod_{n<=m, n != h} delta_nk
    ssq = np.sum(state.gamma[k] * state.phi[k] ** 2, axis=0)  # (M,)
    rate = 1.0 + 0.5 * float(np.sum(ssq[h:] * partial[h:]))
    shape = (state.a1[k] if h == 0 else state.a2[k]) + 0.5 * P * (M - h)
    return float(shape), rate


def update_delta(
    state: ModelState, hyper: Hyperparameters, rng: np.random.Generator, reverse: bool = False
) -> ModelState:
    """Gibbs draws of ``delta_hk`` for ``h`` in sequence, all features at once.

    Features are conditionally independent here, so drawing them jointly is
    the same as looping over ``k``.
    """
    K, P, M = state.phi.shape
    ssq = np.sum(state.gamma * state.phi**2, axis=1).T  # (M, K)
    for h in _order(M, reverse):
        col = state.delta.copy()
        col[h] = 1.0
        partial = np.cumprod(col, axis=0)
        rate = 1.0 + 0.5 * np.sum(ssq[h:] * partial[h:], axis=0)
        shape = (state.a1 if h == 0 else state.a2) + 0.5 * P * (M - h)
        state.delta[h] = rng.gamma(shape, 1.0 / rate)
    return state


def gamma_conditional(state: ModelState, hyper: Hyperparameters) -> tuple[float, np.ndarray]:
    tt = state.tau_tilde.T[:, None, :]
    shape = 0.5 * (hyper.nu_gamma + 1.0)
    rate = 0.5 * (state.phi**2 * tt + hyper.nu_gamma)
    return shape, rate


def update_gamma(state: ModelState, hyper: Hyperparameters, rng: np.random.Generator) -> ModelState:
    shape, rate = gamma_conditional(state, hyper)
    state.gamma = rng.gamma(shape, 1.0 / rate)
    return state


def log_target_a1(a, state: ModelState, hyper: Hyperparameters, k: int):
    a = np.asarray(a, dtype=float)
    return (a - 1.0) * np.log(state.delta[0, k]) - gammaln(a) + (hyper.alpha1 - 1.0) * np.log(a) - hyper.beta1 * a


def log_target_a2(a, state: ModelState, hyper: Hyperparameters, k: int):
    a = np.asarray(a, dtype=float)
    M = state.delta.shape[0]
    return (
        (a - 1.0) * np.sum(np.log(state.delta[1:, k]), axis=0)
        - (M - 1) * gammaln(a)
        + (hyper.alpha2 - 1.0) * np.log(a)
        - hyper.beta2 * a
    )


def _tn_random_walk(current, sd, log_target, rng):
    prop = truncnorm_positive(current, sd, rng)
    log_ratio = (
        log_target(prop) - log_target(current)
        + truncnorm_positive_log_norm(current, sd) - truncnorm_positive_log_norm(prop, sd)
    )
    acc = _mh_accept(log_ratio, rng)
    return np.where(acc, prop, current), acc


def update_a1_a2(
    state: ModelState, hyper: Hyperparameters, rng: np.random.Generator
) -> tuple[ModelState, np.ndarray, np.ndarray]:
    """Truncated-normal random-walk MH for ``a_1k`` and ``a_2k`` (all ``k`` at once).

    The targets for different ``k`` and for ``a1`` versus ``a2`` are
    independent given ``delta``, so joint vectorised proposals are exact.
    """
    K = state.a1.shape[0]
    ks = np.arange(K)
    sd1 = np.sqrt(hyper.eps1 / hyper.beta1)
    sd2 = np.sqrt(hyper.eps2 / hyper.beta2)
    state.a1, acc1 = _tn_random_walk(state.a1, sd1, lambda a: log_target_a1(a, state, hyper, ks), rng)
    state.a2, acc2 = _tn_random_walk(state.a2, sd2, lambda a: log_target_a2(a, state, hyper, ks), rng)
    return state, acc1, acc2


# ---------------------------------------------------------------- mean block


def nu_conditional(
    state: ModelState, ctx: SamplerContext, j: int, beta: float = 1.0, resid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Linear term and precision of ``nu_j | rest``."""
    if resid is None:
        resid = ctx.projected_residual(observation_coefficients(state))
    w = state.Z[:, j]
    s = beta / state.sigma2
    Gw2 = ctx.weighted_gram(w * w)
    b = s * (w @ resid + Gw2 @ state.nu[j])
    Q = s * Gw2 + state.tau[j] * ctx.penalty.matrix
    return b, Q


def update_nu(
    state: ModelState, ctx: SamplerContext, rng: np.random.Generator, beta: float = 1.0, reverse: bool = False
) -> ModelState:
    K = state.nu.shape[0]
    resid = ctx.projected_residual(observation_coefficients(state))
    for j in _order(K, reverse):
        b, Q = nu_conditional(state, ctx, j, beta, resid)
        new = draw_gaussian_precision(b, Q, rng)
        _shift_residual(ctx, resid, state.Z[:, j], new - state.nu[j])
        state.nu[j] = new
    return state


def tau_conditional(state: ModelState, hyper: Hyperparameters, penalty: Penalty) -> tuple[float, np.ndarray]:
    """Shape and rate of ``tau_k | rest``; the shape grows by ``rank(P) / 2``."""
    shape = hyper.alpha_tau + 0.5 * penalty.rank
    rate = hyper.beta_tau + 0.5 * penalty.quad(state.nu)
    return shape, rate


def update_tau(state: ModelState, hyper: Hyperparameters, penalty: Penalty, rng: np.random.Generator) -> ModelState:
    shape, rate = tau_conditional(state, hyper, penalty)
    state.tau = rng.gamma(shape, 1.0 / rate)
    return state


# ---------------------------------------------------------- allocation block


def feature_coefficients(state: ModelState) -> np.ndarray:
    """``A_ik = nu_k + sum_m chi_im phi_km`` with shape (N, K, P)."""
    return state.nu[None, :, :] + np.matmul(state.chi, state.phi.transpose(0, 2, 1)).transpose(1, 0, 2)


def log_target_z(Z: np.ndarray, state: ModelState, ctx: SamplerContext, beta: float = 1.0, A=None) -> np.ndarray:
    """Unnormalised log conditional of each row ``z_i`` (vector over ``i``)."""
    if A is None:
        A = feature_coefficients(state)
    coef = np.matmul(Z[:, None, :], A)[:, 0, :]
    rss = ctx.rss_per_obs(coef)
    prior = ((state.alpha3 * state.pi - 1.0) * np.log(Z)).sum(axis=1)
    return prior - 0.5 * beta * rss / state.sigma2


def update_z(
    state: ModelState, ctx: SamplerContext, rng: np.random.Generator, beta: float = 1.0
) -> tuple[ModelState, np.ndarray]:
    """Dirichlet-proposal MH for every ``z_i`` (rows are conditionally independent)."""
    N, K = state.Z.shape
    if K == 1 or N == 0:
        return state, np.ones(N, dtype=bool)
    a_z = ctx.hyper.a_z if ctx.z_scale is None else ctx.z_scale[:, None]
    Z = state.Z
    prop = sample_dirichlet_rows(a_z * Z, rng)
    valid = np.all(np.isfinite(prop), axis=1) & np.all(prop >= DIRICHLET_FLOOR, axis=1)
    prop = np.where(valid[:, None], prop, Z)
    A = feature_coefficients(state)
    log_ratio = (
        log_target_z(prop, state, ctx, beta, A) - log_target_z(Z, state, ctx, beta, A)
        + dirichlet_logpdf(Z, a_z * prop) - dirichlet_logpdf(prop, a_z * Z)
    )
    acc = _mh_accept(log_ratio, rng) & valid
    state.Z = np.where(acc[:, None], prop, Z)
    return state, acc


def log_target_pi(pi: np.ndarray, state: ModelState, hyper: Hyperparameters) -> float:
    K = pi.shape[0]
    N = state.Z.shape[0]
    a = state.alpha3 * pi
    return float(
        np.sum((hyper.c_vector(K) - 1.0) * np.log(pi))
        - N * log_beta_fn(a)
        + np.sum((a - 1.0) * np.log(state.Z).sum(axis=0))
    )


def update_pi(state: ModelState, hyper: Hyperparameters, rng: np.random.Generator) -> tuple[ModelState, bool]:
    K = state.pi.shape[0]
    if K == 1:
        return state, True
    prop = sample_dirichlet_rows(hyper.a_pi * state.pi, rng)
    if not (np.all(np.isfinite(prop)) and np.all(prop >= DIRICHLET_FLOOR)):
        rng.random()
        return state, False
    log_ratio = (
        log_target_pi(prop, state, hyper) - log_target_pi(state.pi, state, hyper)
        + dirichlet_logpdf(state.pi, hyper.a_pi * prop) - dirichlet_logpdf(prop, hyper.a_pi * state.pi)
    )
    acc = bool(_mh_accept(log_ratio, rng))
    if acc:
        state.pi = prop
    return state, acc


def log_target_alpha3(alpha3, state: ModelState, hyper: Hyperparameters):
    alpha3 = np.atleast_1d(np.asarray(alpha3, dtype=float))
    N, K = state.Z.shape
    logZ_sum = np.log(state.Z).sum(axis=0)
    a = alpha3[:, None] * state.pi[None, :]
    log_b = gammaln(a).sum(axis=1) - gammaln(alpha3)
    out = -hyper.b * alpha3 - N * log_b + ((a - 1.0) * logZ_sum).sum(axis=1)
    return out if out.size > 1 else float(out[0])


def update_alpha3(state: ModelState, hyper: Hyperparameters, rng: np.random.Generator) -> tuple[ModelState, bool]:
    if state.pi.shape[0] == 1:
        return state, True
    new, acc = _tn_random_walk(
        np.array([state.alpha3]), hyper.sigma_alpha3, lambda a: log_target_alpha3(a, state, hyper), rng
    )
    state.alpha3 = float(new[0])
    return state, bool(acc[0])


# -------------------------------------------------------- scores and noise


def chi_conditional(
    state: ModelState, ctx: SamplerContext, m: int, beta: float = 1.0, resid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance (vectors over observations) of ``chi_im | rest``."""
    if resid is None:
        resid = ctx.projected_residual(observation_coefficients(state))
    u = state.Z @ state.phi[:, :, m]
    Gu = ctx.apply_gram(u)
    uGu = np.sum(u * Gu, axis=1)
    s = beta / state.sigma2
    prec = 1.0 + s * uGu
    lin = s * (np.sum(u * resid, axis=1) + state.chi[:, m] * uGu)
    return lin / prec, 1.0 / prec


def update_chi(
    state: ModelState, ctx: SamplerContext, rng: np.random.Generator, beta: float = 1.0, reverse: bool = False
) -> ModelState:
    N, M = state.chi.shape
    if N == 0:
        return state
    resid = ctx.projected_residual(observation_coefficients(state))
    for m in _order(M, reverse):
        mean, var = chi_conditional(state, ctx, m, beta, resid)
        new = mean + np.sqrt(var) * rng.standard_normal(N)
        Gu = ctx.apply_gram(state.Z @ state.phi[:, :, m])
        resid -= (new - state.chi[:, m])[:, None] * Gu
        state.chi[:, m] = new
    return state


def sigma2_conditional(state: ModelState, ctx: SamplerContext, beta: float = 1.0) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma conditional of ``sigma2``."""
    h = ctx.hyper
    return h.alpha0 + 0.5 * beta * ctx.n_total, h.beta0 + 0.5 * beta * ctx.rss(state)


def update_sigma2(state: ModelState, ctx: SamplerContext, rng: np.random.Generator, beta: float = 1.0) -> ModelState:
    shape, scale = sigma2_conditional(state, ctx, beta)
    state.sigma2 = float(scale / rng.gamma(shape))
    return state


# --------------------------------------------------------------------- sweep


def sweep(
    state: ModelState,
    ctx: SamplerContext,
    rng: np.random.Generator,
    beta: float = 1.0,
    blocks: Iterable[str] | None = None,
    orthogonal_phi: bool = False,
    reverse: bool = False,
) -> tuple[ModelState, SweepReport]:
    """One Metropolis-within-Gibbs sweep (mutates ``state``).

    Blocks run in the order of :data:`BLOCKS`; ``reverse=True`` runs the
    exact reversal (reversed block order and reversed inner loops), which is
    what the down pass of a tempered transition needs.  ``blocks`` restricts
    the sweep to a subset, as used by the multiple-start initialisation.
    """
    active = set(BLOCKS if blocks is None else blocks)
    unknown = active - set(BLOCKS)
    if unknown:
        raise ValueError(f"unknown blocks {sorted(unknown)}")
    K = state.a1.shape[0]
    report = SweepReport(
        a1=np.zeros(K, bool), a2=np.zeros(K, bool), z=np.zeros(state.Z.shape[0], bool),
        pi=False, alpha3=False, updated=tuple(b for b in BLOCKS if b in active),
    )
    h = ctx.hyper
    order = reversed(BLOCKS) if reverse else BLOCKS
    for block in order:
        if block not in active:
            continue
        if block == "phi":
            if orthogonal_phi:
                update_phi_orthogonal(state, ctx, rng, beta, reverse)
            else:
                update_phi(state, ctx, rng, beta, reverse)
        elif block == "delta":
            update_delta(state, h, rng, reverse)
        elif block == "gamma":
            update_gamma(state, h, rng)
        elif block == "a":
            _, report.a1, report.a2 = update_a1_a2(state, h, rng)
        elif block == "nu":
            update_nu(state, ctx, rng, beta, reverse)
        elif block == "tau":
            update_tau(state, h, ctx.penalty, rng)
        elif block == "z":
            _, report.z = update_z(state, ctx, rng, beta)
        elif block == "pi":
            _, report.pi = update_pi(state, h, rng)
        elif block == "alpha3":
            _, report.alpha3 = update_alpha3(state, h, rng)
        elif block == "chi":
            update_chi(state, ctx, rng, beta, reverse)
        elif block == "sigma2":
            update_sigma2(state, ctx, rng, beta)
    report.log_likelihood = ctx.log_likelihood(state)
    return state, report
