"""Tempered transitions with a likelihood-only temperature ladder.

Rung ``h`` targets ``prior(theta) * L(Y | theta) ** beta_h``.  A tempered
transition climbs the ladder with one sweep per rung ``beta_1 .. beta_Nt``,
descends with reversed sweeps ``beta_Nt .. beta_1`` and accepts the end point
with probability

    exp( sum_h (beta_{h+1} - beta_h) l(up_h) + sum_h (beta_h - beta_{h+1}) l(down_h) ),

``h = 0 .. Nt-1``, where ``up_0`` is the start, ``down_0`` the end point and
``l`` the conditional log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidLadderError
from .model import ModelState
from .sampler import SamplerContext, SweepReport, sweep


@dataclass(frozen=True)
class TemperatureLadder:
    betas: tuple[float, ...]

    @property
    def n_t(self) -> int:
        return len(self.betas) - 1

    @property
    def beta_max(self) -> float:
        return self.betas[-1]


def build_ladder(n_t: int, beta_max: float) -> TemperatureLadder:
    """Geometric ladder ``beta_h = beta_max ** (h / n_t)``, ``h = 0..n_t``."""
    if int(n_t) != n_t or n_t < 1:
        raise InvalidLadderError(f"number of rungs must be a positive integer, got {n_t}")
    if not (np.isfinite(beta_max) and beta_max >= 1.0):
        raise InvalidLadderError(f"beta_max must be >= 1, got {beta_max}")
    h = np.arange(int(n_t) + 1)
    betas = np.power(float(beta_max), h / n_t)
    betas[0] = 1.0
    betas[-1] = float(beta_max)
    return TemperatureLadder(tuple(float(b) for b in betas))


def tempered_sweep(
    state: ModelState,
    ctx: SamplerContext,
    beta: float,
    rng: np.random.Generator,
    reverse: bool = False,
    **kwargs,
) -> tuple[ModelState, SweepReport]:
    """One sweep targeting ``prior * likelihood ** beta``."""
    if not beta > 0:
        raise ValueError("temperature must be positive")
    return sweep(state, ctx, rng, beta=beta, reverse=reverse, **kwargs)


def tempered_log_ratio(betas, up_logliks, down_logliks) -> float:
    """Log acceptance ratio from log-likelihoods at the up states and down states.

    ``up_logliks[h]`` is evaluated at the state entering rung ``h + 1`` and
    ``down_logliks[h]`` at the state leaving rung ``h + 1`` on the way down,
    for ``h = 0 .. Nt-1``.
    """
    b = np.asarray(betas, dtype=float)
    step = b[1:] - b[:-1]
    return float(np.sum(step * np.asarray(up_logliks)) - np.sum(step * np.asarray(down_logliks)))


def tempered_transition(
    state: ModelState,
    ctx: SamplerContext,
    ladder: TemperatureLadder,
    rng: np.random.Generator,
    **kwargs,
) -> tuple[ModelState, bool, float]:
    """Up-down tempered transition; returns ``(state, accepted, log_ratio)``.

    The input state is never modified; on rejection it is returned as is.
    """
    betas = ladder.betas
    n_t = ladder.n_t
    current = state.copy()
    up = [ctx.log_likelihood(current)]
    for h in range(1, n_t + 1):
        current, _ = tempered_sweep(current, ctx, betas[h], rng, **kwargs)
        if h < n_t:
            up.append(ctx.log_likelihood(current))
    down = [0.0] * n_t
    for h in range(n_t, 0, -1):
        current, _ = tempered_sweep(current, ctx, betas[h], rng, reverse=True, **kwargs)
        down[h - 1] = ctx.log_likelihood(current)
    log_ratio = tempered_log_ratio(betas, up, down)
    accepted = bool(np.log(rng.random()) < log_ratio)
    return (current if accepted else state), accepted, log_ratio
