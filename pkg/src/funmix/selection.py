"""Information criteria, elbow detection and recovery metrics.

Conventions: the preferred model has the largest BIC and the smallest AIC
and DIC.  BIC and AIC plug in the posterior mean of every observation's
fitted coefficients (scores included) and the posterior mean of ``sigma2``.
DIC uses per-point densities with the scores integrated out.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import BasisSystem, evaluate
from .data import StackedDesign, fmt
from .errors import UndefinedMetricError
from .model import ModelState, gaussian_loglik, observation_coefficients, pointwise_marginal_logpdf
from .postprocess import rescale_draws, trapezoid_weights


def param_count(N: int, P: int, K: int, M: int) -> int:
    """Number of model parameters ``d`` used by AIC and BIC."""
    return (N + P) * K + 2 * M * K * P + 4 * K + (N + K) * M + 2


def plugin_loglik(draws: Sequence[ModelState], design: StackedDesign) -> float:
    """Conditional log-likelihood at the posterior-mean fit and posterior-mean ``sigma2``."""
    draws = list(draws)
    coef = np.mean([observation_coefficients(d) for d in draws], axis=0)
    sigma2 = float(np.mean([d.sigma2 for d in draws]))
    fitted = np.einsum("lp,lp->l", design.Bt, coef[design.idx])
    r = design.y - fitted
    return gaussian_loglik(float(r @ r), design.n_total, sigma2)


def bic_aic_from_loglik(logp: float, d: int, n_total: int) -> tuple[float, float]:
    return 2.0 * logp - d * np.log(n_total), -2.0 * logp + 2.0 * d


def compute_bic_aic(draws: Sequence[ModelState], design: StackedDesign) -> tuple[float, float]:
    draws = list(draws)
    K, P, M = draws[0].phi.shape
    d = param_count(design.N, P, K, M)
    return bic_aic_from_loglik(plugin_loglik(draws, design), d, design.n_total)


def compute_dic(draws: Sequence[ModelState], design: StackedDesign) -> float:
    """``-4 E[log f(Y | theta)] + 2 log f_hat(Y)`` from per-point marginal densities.

    ``f_hat`` averages each point's density over draws; the average is
    accumulated as a running log-sum-exp so memory stays O(points).
    """
    total = 0.0
    run_max = None
    run_sum = None
    n = 0
    for d in draws:
        lp = pointwise_marginal_logpdf(d, design)
        total += float(lp.sum())
        if run_max is None:
            run_max, run_sum = lp.copy(), np.ones_like(lp)
        else:
            new_max = np.maximum(run_max, lp)
            run_sum = run_sum * np.exp(run_max - new_max) + np.exp(lp - new_max)
            run_max = new_max
        n += 1
    if n == 0:
        raise ValueError("no draws")
    log_fhat = float(np.sum(run_max + np.log(run_sum) - np.log(n)))
    return -4.0 * total / n + 2.0 * log_fhat


@dataclass
class CriteriaReport:
    K: int
    d: int
    AIC: float
    BIC: float
    DIC: float
    mean_loglik: float


def criteria_report(draws: Sequence[ModelState], design: StackedDesign, logliks: Sequence[float]) -> CriteriaReport:
    draws = list(draws)
    K, P, M = draws[0].phi.shape
    bic, aic = compute_bic_aic(draws, design)
    return CriteriaReport(
        K=K, d=param_count(design.N, P, K, M), AIC=aic, BIC=bic, DIC=compute_dic(draws, design),
        mean_loglik=float(np.mean(logliks)),
    )


def write_criteria_csv(reports: Sequence[CriteriaReport], path: str | Path) -> None:
    lines = ["K,d,AIC,BIC,DIC,mean_loglik"]
    for r in reports:
        lines.append(f"{r.K},{r.d},{fmt(r.AIC)},{fmt(r.BIC)},{fmt(r.DIC)},{fmt(r.mean_loglik)}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ElbowResult:
    K: int | None
    curvature: np.ndarray
    no_elbow: bool


def elbow_scan(ks: Sequence[int], mean_logliks: Sequence[float]) -> ElbowResult:
    """Elbow of mean log-likelihood against ``K``.

    The curvature at an interior candidate is the drop in gain,
    ``(L_j - L_{j-1}) - (L_{j+1} - L_j)``; the largest wins, ties go to the
    smaller ``K``.  If every curvature is equal (e.g. a straight line) there
    is no elbow.
    """
    order = np.argsort(ks, kind="stable")
    ks = np.asarray(ks)[order]
    L = np.asarray(mean_logliks, dtype=float)[order]
    if ks.size < 3:
        raise ValueError("elbow detection needs at least three candidate K values")
    gains = np.diff(L)
    curv = gains[:-1] - gains[1:]
    if np.allclose(curv, curv[0], rtol=0, atol=1e-12 * max(1.0, np.abs(L).max())):
        return ElbowResult(None, curv, True)
    return ElbowResult(int(ks[1 + int(np.argmax(curv))]), curv, False)


# -------------------------------------------------------- recovery metrics


def r_mise(truth: np.ndarray, estimate: np.ndarray, weights: np.ndarray | None = None, grid=None) -> float:
    """``100 * int (f - f_hat)^2 / int f^2`` with trapezoid (or given) weights."""
    truth = np.asarray(truth, dtype=float).ravel()
    estimate = np.asarray(estimate, dtype=float).ravel()
    if truth.shape != estimate.shape:
        raise ValueError("truth and estimate differ in shape")
    if weights is None:
        weights = trapezoid_weights(np.arange(truth.size, dtype=float) if grid is None else grid)
    weights = np.asarray(weights, dtype=float).ravel()
    denom = float(np.sum(weights * truth**2))
    if not denom > 0:
        raise UndefinedMetricError("truth has zero norm")
    return 100.0 * float(np.sum(weights * (truth - estimate) ** 2)) / denom


def z_rmse(Z_true: np.ndarray, Z_est: np.ndarray) -> float:
    Z_true = np.asarray(Z_true, dtype=float)
    Z_est = np.asarray(Z_est, dtype=float)
    if Z_true.shape != Z_est.shape:
        raise ValueError("membership matrices differ in shape")
    return float(np.sqrt(np.mean((Z_true - Z_est) ** 2)))


def best_permutation(Z_true: np.ndarray, Z_est: np.ndarray) -> tuple[int, ...]:
    """Feature relabelling of the estimate that minimises membership RMSE."""
    K = Z_true.shape[1]
    return min(itertools.permutations(range(K)), key=lambda p: z_rmse(Z_true, Z_est[:, list(p)]))


def permute_features(state: ModelState, perm: Sequence[int]) -> ModelState:
    p = list(perm)
    out = state.copy()
    out.nu, out.phi, out.Z = state.nu[p], state.phi[p], state.Z[:, p]
    out.pi, out.delta, out.gamma = state.pi[p], state.delta[:, p], state.gamma[p]
    out.a1, out.a2, out.tau = state.a1[p], state.a2[p], state.tau[p]
    return out


@dataclass
class RecoveryMetrics:
    r_mise: dict[str, float]
    z_rmse: float
    permutation: tuple[int, ...]


def recovery_metrics(
    truth: ModelState,
    draws: Sequence[ModelState],
    basis: BasisSystem,
    grid: np.ndarray,
    rescale: bool = True,
) -> RecoveryMetrics:
    """R-MISE of posterior-median means and covariances, and RMSE of posterior-mean memberships.

    With two features both the truth and every draw are rescaled first so
    that they are compared in the same parameterisation.  Estimated features
    are relabelled to best match the truth.
    """
    draws = list(draws)
    K = truth.Z.shape[1]
    if rescale and K == 2:
        draws, _ = rescale_draws(draws)
        (truth,), _ = rescale_draws([truth])
    Z_hat = np.mean([d.Z for d in draws], axis=0)
    perm = best_permutation(truth.Z, Z_hat)
    draws = [permute_features(d, perm) for d in draws]
    Z_hat = Z_hat[:, list(perm)]
    grid = np.asarray(grid, dtype=float)
    S = evaluate(basis, grid)
    w1 = trapezoid_weights(grid)
    w2 = np.outer(w1, w1).ravel()
    out: dict[str, float] = {}
    for k in range(K):
        est = np.median(np.stack([S.T @ d.nu[k] for d in draws]), axis=0)
        out[f"mean_{k + 1}"] = r_mise(S.T @ truth.nu[k], est, w1)
    for k in range(K):
        for kp in range(k, K):
            true_c = (S.T @ truth.phi[k]) @ (S.T @ truth.phi[kp]).T
            est = np.median(np.stack([((S.T @ d.phi[k]) @ (S.T @ d.phi[kp]).T).ravel() for d in draws]), axis=0)
            out[f"cov_{k + 1}_{kp + 1}"] = r_mise(true_c, est, w2)
    return RecoveryMetrics(out, z_rmse(truth.Z, Z_hat), tuple(perm))
