"""Independent reference computations shared by the test modules.

Nothing here reuses the sampler's sufficient-statistic code path: log joints
are assembled from the dense likelihood in ``funmix.model`` and the prior in
``funmix.priors``, and grid targets are normalised by plain quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from funmix.basis import build_bspline_basis, gram_matrix
from funmix.data import Dataset, StackedDesign
from funmix.model import ModelDims, ModelState, fitted_values, log_likelihood_conditional
from funmix.priors import Hyperparameters, Penalty, log_prior, sample_prior
from funmix.sampler import SamplerContext


@dataclass
class Problem:
    basis: object
    data: Dataset
    design: StackedDesign
    hyper: Hyperparameters
    penalty: Penalty
    ctx: SamplerContext
    state: ModelState

    def log_joint(self, state: ModelState, beta: float = 1.0) -> float:
        return log_prior(state, self.hyper, self.penalty) + beta * log_likelihood_conditional(state, self.design)


def make_problem(
    K=2, P=4, M=2, N=3, n_i=6, seed=0, hyper=None, shared_grid=False, penalty=None, noise=1.0
) -> Problem:
    """Small random instance: cubic basis with ``P - 4`` interior knots."""
    rng = np.random.default_rng(seed)
    basis = build_bspline_basis(3, P - 4)
    if shared_grid:
        grids = [np.linspace(0.0, 1.0, n_i)] * N
    else:
        grids = [np.sort(rng.random(n_i)) for _ in range(N)]
    data = Dataset.from_arrays(grids, [noise * rng.standard_normal(n_i) for _ in range(N)])
    design = StackedDesign(data, basis)
    hyper = hyper or Hyperparameters()
    penalty = penalty or Penalty.from_basis(basis)
    ctx = SamplerContext(design, hyper, penalty, gram_matrix(basis))
    state = sample_prior(hyper, ModelDims(K, P, M, N), penalty, rng)
    return Problem(basis, data, design, hyper, penalty, ctx, state)


def consistency_variance(values) -> float:
    """Variance of ``log q - log joint`` over a batch of block values."""
    return float(np.var(np.asarray(values, dtype=float)))


def gaussian_logpdf_precision(x, b, Q) -> float:
    """``log N(x; Q^{-1} b, Q^{-1})`` by dense linear algebra."""
    mean = np.linalg.solve(Q, b)
    r = x - mean
    sign, logdet = np.linalg.slogdet(Q)
    assert sign > 0
    return float(-0.5 * r.size * np.log(2 * np.pi) + 0.5 * logdet - 0.5 * r @ Q @ r)


# ------------------------------------------------------------- grid oracle


def grid_target(log_target, lo, hi, n=400):
    """Normalised density and CDF of a scalar target tabulated on ``n`` points."""
    x = np.linspace(lo, hi, n)
    lt = np.array([float(log_target(v)) for v in x])
    lt = np.where(np.isfinite(lt), lt, -np.inf)
    dens = np.exp(lt - lt.max())
    cdf = cumulative_trapezoid(dens, x, initial=0.0)
    total = cdf[-1]
    return x, dens / total, cdf / total


def grid_tv(samples, log_target, lo, hi, n_grid=400, n_bins=20) -> float:
    """Total variation between sample and grid-normalised target over equal-mass bins.

    Bin edges sit at the target's ``j / n_bins`` quantiles (read off the grid
    CDF), so each bin carries ``1 / n_bins`` target mass; samples outside
    ``[lo, hi]`` fall into the end bins.
    """
    x, _, cdf = grid_target(log_target, lo, hi, n_grid)
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = np.interp(qs, cdf, x)
    counts = np.bincount(np.searchsorted(edges, np.asarray(samples)), minlength=n_bins)
    emp = counts / counts.sum()
    return 0.5 * float(np.abs(emp - 1.0 / n_bins).sum())


# ---------------------------------------------------------- Geweke support


def simulate_y(state: ModelState, design: StackedDesign, rng) -> np.ndarray:
    mean = fitted_values(state, design)
    return mean + np.sqrt(state.sigma2) * rng.standard_normal(mean.shape)


def batch_means_se(x, n_batches=50) -> float:
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def geweke_z(marginal, successive) -> float:
    """Difference of means over its standard error (iid SE for the first, batch means for the second)."""
    marginal = np.asarray(marginal, dtype=float)
    se1 = marginal.std(ddof=1) / np.sqrt(marginal.size)
    se2 = batch_means_se(successive)
    return float((marginal.mean() - np.mean(successive)) / np.hypot(se1, se2))


# ------------------------------------------------- conditional consistency


def consistency_suite(beta: float = 1.0, n_values: int = 50, seed: int = 0) -> dict[str, float]:
    """Variance of ``log q(block | rest) - log joint`` for every Gibbs block.

    Uses a ``K=2, P=4, M=2, N=3`` instance and ``n_values`` random values of
    the block; ``q`` is built from the sampler's exposed conditional and the
    joint is ``log prior + beta * log likelihood`` evaluated densely.
    """
    from scipy.stats import gamma as gamma_dist
    from scipy.stats import invgamma

    from funmix import sampler as smp

    pb = make_problem(K=2, P=4, M=2, N=3, n_i=6, seed=seed)
    rng = np.random.default_rng(seed + 100)
    s = pb.state
    out: dict[str, float] = {}

    def collect(name, set_value, log_q):
        vals = []
        for _ in range(n_values):
            set_value()
            vals.append(log_q() - pb.log_joint(s, beta))
        out[name] = consistency_variance(vals)

    for j in range(2):
        for m in range(2):
            def set_phi(j=j, m=m):
                s.phi[j, :, m] = 2.0 * rng.standard_normal(4)

            def q_phi(j=j, m=m):
                b, Q = smp.phi_conditional(s, pb.ctx, j, m, beta)
                return gaussian_logpdf_precision(s.phi[j, :, m], b, Q)

            collect(f"phi[{j},{m}]", set_phi, q_phi)
    for k in range(2):
        def set_nu(k=k):
            s.nu[k] = 3.0 * rng.standard_normal(4)

        def q_nu(k=k):
            b, Q = smp.nu_conditional(s, pb.ctx, k, beta)
            return gaussian_logpdf_precision(s.nu[k], b, Q)

        collect(f"nu[{k}]", set_nu, q_nu)
    for h in range(2):
        for k in range(2):
            def set_delta(h=h, k=k):
                s.delta[h, k] = rng.gamma(2.0, 1.0)

            def q_delta(h=h, k=k):
                a, r = smp.delta_conditional(s, pb.hyper, h, k)
                return gamma_dist(a, scale=1.0 / r).logpdf(s.delta[h, k])

            collect(f"delta_{'1' if h == 0 else 'i'}[{h},{k}]", set_delta, q_delta)

    def set_gamma():
        s.gamma = rng.gamma(2.0, 1.0, size=s.gamma.shape)

    def q_gamma():
        a, r = smp.gamma_conditional(s, pb.hyper)
        return float(gamma_dist(a, scale=1.0 / r).logpdf(s.gamma).sum())

    collect("gamma", set_gamma, q_gamma)

    def set_tau():
        s.tau = rng.gamma(2.0, 1.0, size=2)

    def q_tau():
        a, r = smp.tau_conditional(s, pb.hyper, pb.penalty)
        return float(gamma_dist(a, scale=1.0 / r).logpdf(s.tau).sum())

    collect("tau", set_tau, q_tau)

    def set_sigma2():
        s.sigma2 = float(rng.gamma(2.0, 1.0))

    def q_sigma2():
        a, sc = smp.sigma2_conditional(s, pb.ctx, beta)
        return float(invgamma(a, scale=sc).logpdf(s.sigma2))

    collect("sigma2", set_sigma2, q_sigma2)
    for m in range(2):
        def set_chi(m=m):
            s.chi[:, m] = 2.0 * rng.standard_normal(3)

        def q_chi(m=m):
            mean, var = smp.chi_conditional(s, pb.ctx, m, beta)
            x = s.chi[:, m]
            return float(np.sum(-0.5 * np.log(2 * np.pi * var) - 0.5 * (x - mean) ** 2 / var))

        collect(f"chi[{m}]", set_chi, q_chi)
    return out


# ------------------------------------------------------ MH grid oracles


def mh_toy(seed=0):
    """One observation, two features, all non-MH blocks frozen.

    Proposal scales are set for good mixing of the toy (correctness, not
    tuning, is what the grid comparison checks).
    """
    hyper = Hyperparameters(a_z=4.0, a_pi=6.0, sigma_alpha3=1.5, eps1=1.0, eps2=1.0)
    pb = make_problem(K=2, P=4, M=2, N=1, n_i=8, seed=seed, hyper=hyper, noise=0.3)
    s = pb.state
    s.sigma2 = 0.5
    s.Z[0] = [0.4, 0.6]
    s.pi = np.array([0.5, 0.5])
    s.alpha3 = 2.0
    s.delta[:] = [[1.3, 0.8], [2.0, 1.5]]
    s.a1[:] = [2.0, 1.5]
    s.a2[:] = [3.0, 2.0]
    s.nu[0] = [0.5, 0.2, -0.1, 0.3]
    s.nu[1] = [-0.4, 0.1, 0.4, -0.2]
    return pb


def run_mh_chain(pb: Problem, block: str, n_steps: int, rng, extract) -> np.ndarray:
    from funmix import sampler as smp

    s = pb.state.copy()
    out = np.empty(n_steps)
    for t in range(n_steps):
        if block == "a":
            smp.update_a1_a2(s, pb.hyper, rng)
        elif block == "z":
            smp.update_z(s, pb.ctx, rng)
        elif block == "pi":
            smp.update_pi(s, pb.hyper, rng)
        elif block == "alpha3":
            smp.update_alpha3(s, pb.hyper, rng)
        out[t] = extract(s)
    return out


def geweke_run(n_cycles: int = 10_000, seed: int = 0) -> dict[str, float]:
    """Marginal-conditional versus successive-conditional z-scores.

    ``K=2, P=4, M=1, N=3, n_i=5``.  The random-walk penalty is made proper
    (a unit ridge along the constant direction) so that the joint of
    parameters and data is a proper distribution; the inverse-gamma prior on
    ``sigma2`` is given enough finite moments for the second-moment test.
    Returns ``|z|`` for the mean and second moment of ``sigma2``, ``tau_k``
    and ``a_1k``.
    """
    from funmix.basis import first_order_penalty
    from funmix.sampler import sweep

    hyper = Hyperparameters(alpha0=6.0, beta0=5.0, a_z=20.0)
    penalty = Penalty(first_order_penalty(4) + 0.25 * np.ones((4, 4)))
    pb = make_problem(K=2, P=4, M=1, N=3, n_i=5, seed=seed, hyper=hyper, penalty=penalty)
    dims = ModelDims(2, 4, 1, 3)
    rng = np.random.default_rng(seed + 1)

    def stats(s):
        return [s.sigma2, s.tau[0], s.tau[1], s.a1[0], s.a1[1]]

    names = ["sigma2", "tau[0]", "tau[1]", "a1[0]", "a1[1]"]
    marginal = np.array([stats(sample_prior(hyper, dims, penalty, rng)) for _ in range(n_cycles)])
    state = sample_prior(hyper, dims, penalty, rng)
    successive = np.empty((n_cycles, len(names)))
    for t in range(n_cycles):
        ctx = pb.ctx.with_y(simulate_y(state, pb.design, rng))
        state, _ = sweep(state, ctx, rng)
        successive[t] = stats(state)
    out = {}
    for j, name in enumerate(names):
        out[f"mean {name}"] = abs(geweke_z(marginal[:, j], successive[:, j]))
        out[f"second {name}"] = abs(geweke_z(marginal[:, j] ** 2, successive[:, j] ** 2))
    return out


def mixed_schedule_chain(n_steps: int = 100_000, every: int = 5, n_t: int = 2, beta_max: float = 4.0, seed: int = 3):
    """``z_1`` chain on the MH toy with every ``every``-th move a tempered transition."""
    from funmix.sampler import sweep
    from funmix.tempering import build_ladder, tempered_transition

    pb = mh_toy()
    ladder = build_ladder(n_t, beta_max)
    rng = np.random.default_rng(seed)
    s = pb.state.copy()
    out = np.empty(n_steps)
    accepted = 0
    for t in range(n_steps):
        if (t + 1) % every == 0:
            s, acc, _ = tempered_transition(s, pb.ctx, ladder, rng, blocks=("z",))
            accepted += acc
        else:
            s, _ = sweep(s, pb.ctx, rng, blocks=("z",))
        out[t] = s.Z[0, 0]
    return pb, out, accepted / (n_steps // every)


# ------------------------------------------------------- simulation studies

STUDY_BASIS = {"degree": 3, "interior_knots": 4, "domain": [0.0, 1.0]}


def study_config(K: int, iterations: int, seed: int, thin: int = 25):
    """Run configuration used for the desk-scale simulation studies."""
    from funmix.orchestration import RunConfig

    return RunConfig.from_mapping({
        "K": K, "M": 3, "basis": dict(STUDY_BASIS), "hyperparameters": {"a_z": 1000.0},
        "n_try1": 10, "n_try2": 3, "n_mcmc1": 2000, "n_mcmc2": 2000, "adapt_z": True,
        "total_iterations": iterations, "thin": thin, "seed": seed,
    })


def study1_replicate(rep: int, N: int, iterations: int = 50_000):
    """Truth, data and fitted archive for one Study 1 replicate at sample size ``N``.

    Replicates share nothing; within a replicate every ``N`` shares the
    population parameters (``truth_seed = rep``).
    """
    from funmix.orchestration import fit_chain
    from funmix.simgen import SimSpec, simulate

    spec = SimSpec(study="study1", N=N, seed=10_000 * (rep + 1) + N, truth_seed=rep)
    truth, data = simulate(spec)
    arc = fit_chain(data, study_config(2, iterations, seed=rep))
    return spec, truth, data, arc


def study2_dataset(rep: int, N: int = 100, ks=(2, 3, 4, 5), iterations: int = 30_000):
    """Planted three-feature dataset fitted at each ``K``; returns ``(data, {K: archive})``."""
    from funmix.orchestration import fit_chain
    from funmix.simgen import SimSpec, simulate

    spec = SimSpec(study="study2", K=3, N=N, seed=20_000 + rep, truth_seed=100 + rep)
    _, data = simulate(spec)
    return data, {K: fit_chain(data, study_config(K, iterations, seed=rep)) for K in ks}
