"""Synthetic datasets drawn from the functional mixed membership model.

Two built-in designs are provided plus a fully custom one:

* ``study1``: two features, cubic splines with four interior knots, three
  eigen-directions, ``sigma2 = 0.001`` and loadings confined to the orthogonal
  complement of the mean coefficients.
* ``study2``: three features with independent Gaussian loadings of
  decreasing scale.

Mean coefficients use the random-walk penalty as a covariance,
``N(m, 4 P)``.  ``P`` is singular, so draws add an independent ``N(0, 4)``
component along its null (constant) direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .basis import BasisSystem, build_bspline_basis, evaluate, first_order_penalty
from .data import Dataset
from .errors import ConfigError, InvalidStateError
from .model import ModelState, clamp_simplex, observation_coefficients

STUDIES = ("study1", "study2", "custom")


@dataclass(frozen=True)
class SimSpec:
    """Simulation design.

    ``z_components`` is a list of ``(weight, concentration)`` pairs defining
    the Dirichlet mixture for the memberships.  With ``stochastic_assignment``
    off, the first components get ``floor(weight * N)`` observations each and
    the last one takes the remainder.  ``truth_seed`` fixes the population
    parameters (means and loadings) so replicates with different ``seed``
    share them.
    """

    study: str = "study1"
    N: int = 40
    n_i: int = 100
    K: int = 2
    P: int = 8
    M: int = 3
    sigma2: float = 0.001
    degree: int = 3
    domain: tuple[float, float] = (0.0, 1.0)
    z_components: tuple = ()
    phi_scales: tuple[float, ...] = ()
    orthogonal_phi: bool = True
    nu_scale: float = 4.0
    stochastic_assignment: bool = False
    seed: int = 0
    truth_seed: int | None = None

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        defaults = _study_defaults(self.study, self.K)
        for name, value in defaults.items():
            if not getattr(self, name):
                object.__setattr__(self, name, value)
        comps = tuple((float(w), tuple(float(a) for a in conc)) for w, conc in self.z_components)
        object.__setattr__(self, "z_components", comps)
        object.__setattr__(self, "phi_scales", tuple(float(s) for s in self.phi_scales))
        object.__setattr__(self, "domain", tuple(float(d) for d in self.domain))
        if self.study == "study1" and (self.K, self.P, self.M) != (2, 8, 3):
            raise ConfigError("study1 uses K=2, P=8, M=3")
        if self.study == "study2" and (self.K, self.P, self.M) != (3, 8, 3):
            raise ConfigError("study2 uses K=3, P=8, M=3")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if self.N < 1 or self.n_i < 1:
            raise ConfigError("N and n_i must be positive")
        if self.P < self.degree + 1:
            raise ConfigError("P must be at least degree + 1")
        weights = np.array([w for w, _ in self.z_components])
        if weights.size == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError("z_components weights must be non-negative and sum to 1")
        for _, conc in self.z_components:
            if len(conc) != self.K or any(a <= 0 for a in conc):
                raise ConfigError(f"each Dirichlet concentration needs {self.K} positive entries")
        if len(self.phi_scales) != self.M:
            raise ConfigError(f"phi_scales needs M={self.M} entries")

    @property
    def basis(self) -> BasisSystem:
        return build_bspline_basis(self.degree, self.P - self.degree - 1, self.domain)

    def grid(self) -> np.ndarray:
        return np.linspace(self.domain[0], self.domain[1], self.n_i)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z_components"] = [[w, list(c)] for w, c in self.z_components]
        d["phi_scales"] = list(self.phi_scales)
        d["domain"] = list(self.domain)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation settings: {sorted(unknown)}")
        study = str(d.get("study", "study1")).lower()
        d["study"] = study
        if study == "study2":
            d.setdefault("K", 3)
        for key in ("z_components", "phi_scales", "domain"):
            if key in d:
                d[key] = tuple(tuple(x) if isinstance(x, list) else x for x in d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _study_defaults(study: str, K: int) -> dict:
    if study == "study1":
        return {
            "z_components": ((0.3, (10.0, 1.0)), (0.3, (1.0, 10.0)), (0.4, (1.0, 1.0))),
            "phi_scales": (2.25, 1.0, 0.49),
        }
    if study == "study2":
        return {
            "z_components": (
                (0.2, (10.0, 1.0, 1.0)), (0.2, (1.0, 10.0, 1.0)), (0.2, (1.0, 1.0, 10.0)), (0.4, (1.0, 1.0, 1.0)),
            ),
            "phi_scales": (1.0, 0.5, 0.2),
        }
    return {"z_components": ((1.0, (1.0,) * K),), "phi_scales": ()}


def study_mean_vectors(P: int) -> tuple[np.ndarray, np.ndarray]:
    """The two planted mean-coefficient centres: descending and ascending steps of 2."""
    down = 6.0 - 2.0 * np.arange(P)
    return down, down[::-1].copy()


def draw_penalty_gaussian(mean: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """``N(mean, scale * P)`` with an extra ``N(0, scale)`` along the null direction."""
    P = mean.shape[0]
    pen = first_order_penalty(P)
    u = np.full(P, 1.0 / np.sqrt(P))
    cov = scale * (pen + np.outer(u, u))
    return rng.multivariate_normal(mean, cov, method="cholesky")


def orthogonal_complement(vectors: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of the row span of ``vectors``."""
    vectors = np.atleast_2d(vectors)
    if vectors.shape[0] >= vectors.shape[1]:
        raise InvalidStateError("no orthogonal complement: K >= P")
    comp = null_space(vectors)
    if comp.shape[1] == 0:
        raise InvalidStateError("no orthogonal complement")
    return comp


def allocation_groups(spec: SimSpec, rng: np.random.Generator) -> np.ndarray:
    """Mixture component index of each observation."""
    weights = np.array([w for w, _ in spec.z_components])
    if spec.stochastic_assignment:
        return rng.choice(len(weights), size=spec.N, p=weights)
    sizes = [int(np.floor(w * spec.N)) for w in weights[:-1]]
    sizes.append(spec.N - sum(sizes))
    return np.repeat(np.arange(len(weights)), sizes)


def draw_memberships(spec: SimSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    groups = allocation_groups(spec, rng)
    conc = np.array([c for _, c in spec.z_components])
    Z = np.stack([rng.dirichlet(conc[g]) for g in groups]) if spec.N else np.zeros((0, spec.K))
    return clamp_simplex(Z), groups


def _streams(spec: SimSpec, rng: np.random.Generator | None):
    truth_seed = spec.seed if spec.truth_seed is None else spec.truth_seed
    shared = np.random.default_rng(np.random.SeedSequence([truth_seed, 0]))
    local = rng if rng is not None else np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    return shared, local


def draw_truth(spec: SimSpec, rng: np.random.Generator | None = None) -> ModelState:
    """Population parameters plus per-observation memberships and scores.

    The means and loadings come from a stream seeded by ``truth_seed``; the
    memberships and scores from ``rng`` (or a stream seeded by ``seed``).
    """
    shared, local = _streams(spec, rng)
    K, P, M, N = spec.K, spec.P, spec.M, spec.N
    down, up = study_mean_vectors(P)
    if spec.study in ("study1", "study2"):
        centres = [down, up] + [np.zeros(P)] * (K - 2)
    else:
        centres = [np.zeros(P)] * K
    nu = np.stack([draw_penalty_gaussian(c, spec.nu_scale, shared) for c in centres])
    scales = np.asarray(spec.phi_scales)
    phi = np.empty((K, P, M))
    if spec.study == "study2" or not spec.orthogonal_phi:
        phi[:] = shared.standard_normal((K, P, M)) * np.sqrt(scales)
    else:
        comp = orthogonal_complement(nu)
        q = shared.standard_normal((K, comp.shape[1], M)) * np.sqrt(scales)
        phi[:] = np.einsum("pr,krm->kpm", comp, q)
    Z, _ = draw_memberships(spec, local)
    chi = local.standard_normal((N, M))
    pi = np.full(K, 1.0 / K)
    return ModelState(
        nu=nu, phi=phi, chi=chi, Z=Z, pi=pi, alpha3=1.0, sigma2=float(spec.sigma2),
        delta=np.ones((M, K)), gamma=np.ones((K, P, M)), a1=np.ones(K), a2=np.full(K, 2.0), tau=np.ones(K),
    )


def synthesize(
    truth: ModelState, spec: SimSpec, rng: np.random.Generator | None = None, basis: BasisSystem | None = None
) -> Dataset:
    """Observations on ``n_i`` equally spaced points with Gaussian noise of variance ``truth.sigma2``."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    basis = spec.basis if basis is None else basis
    grid = spec.grid()
    S = evaluate(basis, grid)
    means = observation_coefficients(truth) @ S
    noise = rng.standard_normal(means.shape) * np.sqrt(truth.sigma2)
    values = means + noise
    ids = [f"obs{i:05d}" for i in range(truth.Z.shape[0])]
    return Dataset.from_arrays([grid] * len(values), list(values), ids)


def simulate(spec: SimSpec) -> tuple[ModelState, Dataset]:
    """Truth and data from the seeds in ``spec`` alone."""
    truth = draw_truth(spec)
    return truth, synthesize(truth, spec)


def replicate_specs(base: SimSpec, seeds: Sequence[int]) -> list[SimSpec]:
    """Copies of ``base`` differing only in ``seed`` (population parameters stay shared)."""
    d = base.to_dict()
    if d["truth_seed"] is None:
        d["truth_seed"] = base.seed
    return [SimSpec.from_dict({**d, "seed": int(s)}) for s in seeds]
