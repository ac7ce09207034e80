"""Chain lifecycle: configuration, multiple-start initialisation, the main
loop, archives on disk and independent parallel chains.

Random streams are derived from ``SeedSequence([seed, chain_id, stage, try])``
so that every stage-1 candidate, stage-2 candidate and main chain can be
reproduced on its own.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import struct
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSystem, basis_from_config, gram_matrix
from .data import Dataset, StackedDesign
from .errors import ConfigError, FunmixError
from .model import ModelDims, ModelState, clamp_simplex
from .priors import Hyperparameters, Penalty, sample_dirichlet_rows
from .sampler import BLOCKS, SamplerContext, SweepReport, sweep
from .tempering import build_ladder, tempered_transition

STAGE_ONE, STAGE_TWO, STAGE_MAIN = 1, 2, 3
STAGE_ONE_BLOCKS = ("nu", "tau", "z", "pi", "alpha3", "sigma2")
STAGE_TWO_BLOCKS = tuple(b for b in BLOCKS if b not in ("nu", "z"))
STATE_FIELDS = ("nu", "phi", "chi", "Z", "pi", "alpha3", "sigma2", "delta", "gamma", "a1", "a2", "tau")
ARCHIVE_MAGIC = b"FUNMIXA1"

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class RunConfig:
    K: int = 2
    M: int = 3
    basis: dict = field(default_factory=lambda: {"degree": 3, "interior_knots": 4, "domain": [0.0, 1.0]})
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    n_try1: int = 10
    n_try2: int = 3
    n_mcmc1: int = 500
    n_mcmc2: int = 1000
    score_fraction: float = 0.2
    multistart: bool = True
    total_iterations: int = 1000
    burn_in_fraction: float = 0.5
    thin: int = 1
    seed: int = 0
    chains: int = 1
    n_t: int = 0
    beta_max: float = 1.0
    tempered_every: int = 10
    orthogonal_phi: bool = False
    adapt_z: bool = False
    adapt_target: float = 0.25
    adapt_every: int = 25
    output_dir: str = "out"

    def __post_init__(self):
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.M >= 1, "M must be >= 1"),
            (self.total_iterations > 0, "total_iterations must be positive"),
            (self.thin >= 1, "thin must be >= 1"),
            (0.0 <= self.burn_in_fraction < 1.0, "burn_in_fraction must lie in [0, 1)"),
            (self.n_try1 >= 1 and self.n_try2 >= 1, "n_try1 and n_try2 must be >= 1"),
            (self.n_mcmc1 >= 1 and self.n_mcmc2 >= 1, "n_mcmc1 and n_mcmc2 must be >= 1"),
            (0.0 < self.score_fraction <= 1.0, "score_fraction must lie in (0, 1]"),
            (self.chains >= 1, "chains must be >= 1"),
            (self.n_t >= 0, "n_t must be >= 0"),
            (self.beta_max >= 1.0, "beta_max must be >= 1"),
            (self.tempered_every >= 1, "tempered_every must be >= 1"),
            (0.0 < self.adapt_target < 1.0, "adapt_target must lie in (0, 1)"),
            (self.adapt_every >= 1, "adapt_every must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg, line=_key_line(getattr(self, "_source", None), msg.split()[0]))

    @property
    def basis_system(self) -> BasisSystem:
        return basis_from_config(self.basis)

    @property
    def burn_in(self) -> int:
        return int(math.floor(self.burn_in_fraction * self.total_iterations))

    @property
    def n_draws(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["hyper"] = self.hyper.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, d: dict, source: str | None = None) -> "RunConfig":
        """Build from a flat mapping or the sectioned layout of a config file.

        Sections ``model``, ``mcmc``, ``multistart``, ``tempering``,
        ``adaptation`` and ``output`` are flattened; ``basis`` and ``hyperparameters`` are
        nested tables.
        """
        flat: dict = {}
        for key, value in d.items():
            if key in ("model", "mcmc", "multistart", "tempering", "adaptation", "output") and isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        if "hyperparameters" in flat:
            flat["hyper"] = flat.pop("hyperparameters")
        if "dir" in flat:
            flat["output_dir"] = flat.pop("dir")
        if "enabled" in flat:
            flat["multistart"] = flat.pop("enabled")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(flat) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}", line=_key_line(source, unknown[0]))
        try:
            if "hyper" in flat and not isinstance(flat["hyper"], Hyperparameters):
                flat["hyper"] = Hyperparameters.from_dict(flat["hyper"])
            obj = cls.__new__(cls)
            object.__setattr__(obj, "_source", source)
            kwargs = {f.name: flat.get(f.name, _default(f)) for f in fields(cls)}
            for name, value in kwargs.items():
                object.__setattr__(obj, name, value)
            _coerce(obj)
            obj.__post_init__()
        except ConfigError as exc:
            if exc.line is None and source is not None:
                word = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", str(exc))
                line = next((_key_line(source, w) for w in word if _key_line(source, w)), None)
                raise ConfigError(str(exc), line=line) from None
            raise
        return obj


def _default(f):
    from dataclasses import MISSING

    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def _coerce(cfg: RunConfig) -> None:
    ints = ("K", "M", "n_try1", "n_try2", "n_mcmc1", "n_mcmc2", "total_iterations", "thin", "seed", "chains",
            "n_t", "tempered_every", "adapt_every")
    for name in ints:
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) and not float(value).is_integer():
            raise ConfigError(f"{name} must be an integer")
        object.__setattr__(cfg, name, int(value))
    for name in ("burn_in_fraction", "score_fraction", "beta_max", "adapt_target"):
        object.__setattr__(cfg, name, float(getattr(cfg, name)))
    for name in ("multistart", "orthogonal_phi", "adapt_z"):
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(f"{name} must be true or false")
    if not isinstance(cfg.basis, dict):
        raise ConfigError("basis must be a table")
    try:
        basis_from_config(cfg.basis)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"basis: {exc}") from None


def _key_line(source: str | None, key: str) -> int | None:
    if not source:
        return None
    pat = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]')
    for lineno, line in enumerate(source.splitlines(), start=1):
        if pat.search(line):
            return lineno
    return None


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML or JSON run configuration (chosen by file extension)."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if p.suffix.lower() == ".json":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno) from None
    else:
        try:
            d = _toml.loads(text)
        except _toml.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(str(exc), line=int(m.group(1)) if m else None) from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    return RunConfig.from_mapping(d, source=text)


def chain_rng(seed: int, chain_id: int, stage: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_id), int(stage), int(index)]))


# --------------------------------------------------------------- contexts


def build_context(data: Dataset, config: RunConfig) -> SamplerContext:
    if data.N == 0:
        raise ConfigError("dataset has no observations")
    basis = config.basis_system
    design = StackedDesign(data, basis)
    gram = gram_matrix(basis) if config.orthogonal_phi else None
    return SamplerContext(design, config.hyper, Penalty.from_basis(basis), gram)


def initial_state(ctx: SamplerContext, dims: ModelDims, rng: np.random.Generator) -> ModelState:
    """Starting point with zero loadings and scores and random memberships."""
    h = ctx.hyper
    K, P, M, N = dims.K, dims.P, dims.M, dims.N
    a1 = np.full(K, h.alpha1 / h.beta1)
    a2 = np.full(K, h.alpha2 / h.beta2)
    delta = np.vstack([a1, np.broadcast_to(a2, (M - 1, K))]) if M > 1 else a1[None, :].copy()
    Z = clamp_simplex(sample_dirichlet_rows(np.ones((N, K)), rng)) if K > 1 else np.ones((N, 1))
    y = ctx.design.y
    return ModelState(
        nu=0.01 * rng.standard_normal((K, P)),
        phi=np.zeros((K, P, M)),
        chi=np.zeros((N, M)),
        Z=Z,
        pi=np.full(K, 1.0 / K),
        alpha3=1.0,
        sigma2=float(max(np.var(y), 1e-6)),
        delta=delta,
        gamma=np.ones((K, P, M)),
        a1=a1,
        a2=a2,
        tau=np.ones(K),
    )


# ------------------------------------------------------------ multi-start


def tail_mean(trace: Sequence[float], fraction: float = 0.2) -> float:
    trace = np.asarray(trace, dtype=float)
    n = max(1, int(math.ceil(fraction * trace.size)))
    return float(np.mean(trace[-n:]))


def select_best(traces: Sequence[Sequence[float]], fraction: float = 0.2) -> int:
    """Index of the trace with the largest mean over its final ``fraction``."""
    scores = [tail_mean(t, fraction) for t in traces]
    return int(np.argmax(scores))


SweepFn = Callable[..., tuple[ModelState, SweepReport]]


@dataclass
class MultiStartResult:
    state: ModelState
    stage1_scores: list[float]
    stage2_scores: list[float]
    stage1_best: int
    stage2_best: int


class ZScaleAdapter:
    """Per-observation tuning of the Dirichlet concentration of the z proposal.

    Every ``every`` sweeps, ``log a_i`` moves by ``gain * (target - rate_i)``,
    where ``rate_i`` is the acceptance rate of row ``i`` over that window.
    Low acceptance therefore raises ``a_i`` (smaller steps).  Only used
    before draws are kept, so the archived chain runs with fixed proposals.
    """

    LOG_BOUNDS = (0.0, math.log(1e9))

    def __init__(self, ctx: SamplerContext, target: float, every: int, gain: float = 2.0):
        self.log_scale = np.full(ctx.N, math.log(ctx.hyper.a_z))
        self.target = target
        self.every = every
        self.gain = gain
        self._acc = np.zeros(ctx.N)
        self._n = 0
        self.ctx = ctx.with_z_scale(np.exp(self.log_scale))

    def observe(self, accepted_z: np.ndarray) -> SamplerContext:
        """Record one sweep's z acceptances; returns the context to use next."""
        self._acc += accepted_z
        self._n += 1
        if self._n == self.every:
            rate = self._acc / self._n
            self.log_scale = np.clip(self.log_scale + self.gain * (self.target - rate), *self.LOG_BOUNDS)
            self._acc[:] = 0.0
            self._n = 0
            self.ctx = self.ctx.with_z_scale(np.exp(self.log_scale))
        return self.ctx

    def summary(self) -> dict:
        q = np.exp(np.percentile(self.log_scale, [0, 50, 100]))
        return {"min": float(q[0]), "median": float(q[1]), "max": float(q[2])}


def _short_chain(state, ctx, n_iter, rng, blocks, sweep_fn, orthogonal, adapt=None):
    trace = np.empty(n_iter)
    adapter = None
    if adapt is not None and "z" in blocks:
        adapter = ZScaleAdapter(ctx, *adapt)
        ctx = adapter.ctx
    for it in range(n_iter):
        state, rep = sweep_fn(state, ctx, rng, blocks=blocks, orthogonal_phi=orthogonal)
        trace[it] = rep.log_likelihood
        if adapter is not None:
            ctx = adapter.observe(rep.z)
    return state, trace


def multiple_start(
    ctx: SamplerContext,
    config: RunConfig,
    chain_id: int = 0,
    sweep_fn: SweepFn = sweep,
) -> MultiStartResult:
    """Two-stage multiple-start initialisation.

    Stage 1 runs ``n_try1`` short chains with loadings and scores held at
    zero, updating only means, memberships, noise and their hyperparameters.
    Stage 2 fixes the winning means and memberships and runs ``n_try2`` short
    chains over everything else.  Chains are scored by the mean
    log-likelihood over their final ``score_fraction`` of iterations.
    """
    K, M, P, N = config.K, config.M, ctx.P, ctx.N
    dims = ModelDims(K, P, M, N)
    adapt = (config.adapt_target, config.adapt_every) if config.adapt_z else None
    stage1_states, stage1_traces = [], []
    for t in range(config.n_try1):
        rng = chain_rng(config.seed, chain_id, STAGE_ONE, t)
        st = initial_state(ctx, dims, rng)
        st, trace = _short_chain(st, ctx, config.n_mcmc1, rng, STAGE_ONE_BLOCKS, sweep_fn, False, adapt)
        stage1_states.append(st)
        stage1_traces.append(trace)
    best1 = select_best(stage1_traces, config.score_fraction)
    seed_state = stage1_states[best1]
    stage2_states, stage2_traces = [], []
    for t in range(config.n_try2):
        rng = chain_rng(config.seed, chain_id, STAGE_TWO, t)
        st = seed_state.copy()
        st.chi = rng.standard_normal((N, M))
        st, trace = _short_chain(st, ctx, config.n_mcmc2, rng, STAGE_TWO_BLOCKS, sweep_fn, config.orthogonal_phi,
                                 adapt)
        stage2_states.append(st)
        stage2_traces.append(trace)
    best2 = select_best(stage2_traces, config.score_fraction)
    return MultiStartResult(
        state=stage2_states[best2],
        stage1_scores=[tail_mean(t, config.score_fraction) for t in stage1_traces],
        stage2_scores=[tail_mean(t, config.score_fraction) for t in stage2_traces],
        stage1_best=best1,
        stage2_best=best2,
    )


# ---------------------------------------------------------------- archive


class ChainArchive:
    """Thinned draws stored field by field as ``(n_draws, *shape)`` arrays."""

    def __init__(self, dims: ModelDims, header: dict | None = None):
        self.dims = dims
        self.header = dict(header or {})
        self.meta: dict = {}
        self._rows: dict[str, list[np.ndarray]] = {f: [] for f in STATE_FIELDS}
        self._loglik: list[float] = []
        self.iterations: list[int] = []
        self.reports: list[SweepReport] | None = None

    @staticmethod
    def field_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
        K, P, M, N = dims.K, dims.P, dims.M, dims.N
        return {
            "nu": (K, P), "phi": (K, P, M), "chi": (N, M), "Z": (N, K), "pi": (K,), "alpha3": (),
            "sigma2": (), "delta": (M, K), "gamma": (K, P, M), "a1": (K,), "a2": (K,), "tau": (K,),
        }

    def append(self, state: ModelState, loglik: float, iteration: int | None = None) -> None:
        for f in STATE_FIELDS:
            self._rows[f].append(np.array(getattr(state, f), dtype=float, copy=True))
        self._loglik.append(float(loglik))
        self.iterations.append(len(self.iterations) if iteration is None else int(iteration))

    def __len__(self) -> int:
        return len(self._loglik)

    @property
    def loglik(self) -> np.ndarray:
        return np.asarray(self._loglik, dtype=float)

    def field(self, name: str) -> np.ndarray:
        shape = self.field_shapes(self.dims)[name]
        rows = self._rows[name]
        return np.stack(rows) if rows else np.zeros((0, *shape))

    def draw(self, i: int) -> ModelState:
        return ModelState.from_dict({f: self._rows[f][i] for f in STATE_FIELDS})

    def draws(self):
        for i in range(len(self)):
            yield self.draw(i)

    @property
    def basis(self) -> BasisSystem:
        return basis_from_config(self.header["basis"])

    # binary container: magic, uint64 header length, JSON header, float64 blocks

    def block_size(self) -> int:
        return 1 + sum(int(np.prod(s)) for s in self.field_shapes(self.dims).values())

    def to_bytes(self) -> bytes:
        return self._header_bytes() + b"".join(self._block_bytes(i) for i in range(len(self)))

    def _header_bytes(self) -> bytes:
        d = self.dims
        header = dict(self.header)
        header.update({
            "dims": {"K": d.K, "P": d.P, "M": d.M, "N": d.N},
            "fields": [[f, list(s)] for f, s in self.field_shapes(d).items()] + [["loglik", []]],
            "dtype": "<f8",
        })
        blob = json.dumps(header, sort_keys=True).encode()
        return ARCHIVE_MAGIC + struct.pack("<Q", len(blob)) + blob

    def _block_bytes(self, i: int) -> bytes:
        parts = [np.asarray(self._rows[f][i], dtype="<f8").ravel() for f in STATE_FIELDS]
        parts.append(np.array([self._loglik[i]], dtype="<f8"))
        return np.concatenate(parts).tobytes()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ChainArchive":
        if raw[:8] != ARCHIVE_MAGIC:
            raise ConfigError("not a chain archive")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode())
        dd = header.pop("dims")
        header.pop("fields", None)
        header.pop("dtype", None)
        arc = cls(ModelDims(dd["K"], dd["P"], dd["M"], dd["N"]), header)
        shapes = cls.field_shapes(arc.dims)
        bs = arc.block_size()
        payload = raw[16 + hlen:]
        # an interrupted write can leave a torn block; keep whole blocks only
        body = np.frombuffer(payload[: len(payload) - len(payload) % 8], dtype="<f8")
        n = body.size // bs
        blocks = body[: n * bs].reshape(n, bs)
        for row in blocks:
            off = 0
            for f in STATE_FIELDS:
                size = int(np.prod(shapes[f]))
                arc._rows[f].append(row[off:off + size].reshape(shapes[f]).astype(float))
                off += size
            arc._loglik.append(float(row[off]))
        arc.iterations = list(range(n))
        return arc

    @classmethod
    def load(cls, path: str | Path) -> "ChainArchive":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read archive: {exc}") from None

    def write_loglik_csv(self, path: str | Path) -> None:
        lines = ["iter,loglik"] + [f"{it},{v:.17g}" for it, v in zip(self.iterations, self._loglik)]
        Path(path).write_text("\n".join(lines) + "\n")


class _StreamingWriter:
    """Appends draw blocks to disk as they are produced."""

    def __init__(self, archive: ChainArchive, path: Path):
        self.archive = archive
        self.fh = open(path, "wb")
        self.fh.write(archive._header_bytes())

    def add(self, i: int) -> None:
        self.fh.write(self.archive._block_bytes(i))

    def close(self) -> None:
        self.fh.flush()
        self.fh.close()


# -------------------------------------------------------------- main loop


@dataclass
class AcceptanceCounter:
    K: int
    N: int
    sweeps: int = 0
    a1: np.ndarray = None
    a2: np.ndarray = None
    z: np.ndarray = None
    pi: int = 0
    alpha3: int = 0
    tempered_attempts: int = 0
    tempered_accepts: int = 0

    def __post_init__(self):
        self.a1 = np.zeros(self.K, dtype=int)
        self.a2 = np.zeros(self.K, dtype=int)
        self.z = np.zeros(self.N, dtype=int)

    def add(self, rep: SweepReport) -> None:
        self.sweeps += 1
        self.a1 += rep.a1
        self.a2 += rep.a2
        self.z += rep.z
        self.pi += int(rep.pi)
        self.alpha3 += int(rep.alpha3)

    def summary(self) -> dict:
        n = max(self.sweeps, 1)
        return {
            "sweeps": self.sweeps,
            "a1": (self.a1 / n).tolist(),
            "a2": (self.a2 / n).tolist(),
            "z_mean": float(np.mean(self.z) / n) if self.N else 0.0,
            "z": (self.z / n).tolist(),
            "pi": self.pi / n,
            "alpha3": self.alpha3 / n,
            "tempered_attempts": self.tempered_attempts,
            "tempered_accepts": self.tempered_accepts,
            "tempered_rate": self.tempered_accepts / self.tempered_attempts if self.tempered_attempts else None,
        }


def run_chain(
    ctx: SamplerContext,
    config: RunConfig,
    init: ModelState,
    rng: np.random.Generator,
    archive_path: str | Path | None = None,
    keep_reports: bool = False,
    header: dict | None = None,
) -> ChainArchive:
    """Run ``total_iterations`` iterations from ``init`` and archive thinned draws.

    Every ``tempered_every``-th iteration is a tempered transition when the
    ladder has at least one rung (``n_t >= 1``); the rest are plain sweeps.
    With ``archive_path`` draws are streamed to disk as they are kept, so an
    interrupted run leaves a readable partial archive.
    """
    state = init.copy()
    state.validate()
    dims = state.dims
    hdr = {"basis": config.basis if isinstance(config.basis, dict) else {}, "config_hash": config.digest()}
    hdr.update(header or {})
    archive = ChainArchive(dims, hdr)
    if keep_reports:
        archive.reports = []
    counter = AcceptanceCounter(dims.K, dims.N)
    ladder = build_ladder(config.n_t, config.beta_max) if config.n_t >= 1 else None
    writer = _StreamingWriter(archive, Path(archive_path)) if archive_path is not None else None
    burn = config.burn_in
    adapter = ZScaleAdapter(ctx, config.adapt_target, config.adapt_every) if config.adapt_z and burn > 0 else None
    if adapter is not None:
        ctx = adapter.ctx
    t0 = time.perf_counter()
    try:
        for it in range(config.total_iterations):
            if ladder is not None and (it + 1) % config.tempered_every == 0:
                state, accepted, _ = tempered_transition(
                    state, ctx, ladder, rng, orthogonal_phi=config.orthogonal_phi
                )
                counter.tempered_attempts += 1
                counter.tempered_accepts += int(accepted)
                loglik = ctx.log_likelihood(state)
            else:
                state, rep = sweep(state, ctx, rng, orthogonal_phi=config.orthogonal_phi)
                counter.add(rep)
                if adapter is not None and it < burn:
                    ctx = adapter.observe(rep.z)
                if keep_reports:
                    archive.reports.append(rep)
                loglik = rep.log_likelihood
            if it >= burn and (it - burn + 1) % config.thin == 0:
                if not np.isfinite(loglik):
                    raise FunmixError(f"non-finite log-likelihood at iteration {it}")
                archive.append(state, loglik, it)
                if writer is not None:
                    writer.add(len(archive) - 1)
    finally:
        if writer is not None:
            writer.close()
    archive.meta = {
        "config": config.to_dict(),
        "acceptance": counter.summary(),
        "z_proposal_scale": adapter.summary() if adapter is not None else None,
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    return archive


@dataclass
class ChainFailure:
    chain_id: int
    error: str
    traceback: str = ""


def fit_chain(data: Dataset, config: RunConfig, chain_id: int = 0, out_dir: str | Path | None = None):
    """Multiple start (if enabled) followed by the main run for one chain."""
    ctx = build_context(data, config)
    if config.multistart:
        start = multiple_start(ctx, config, chain_id)
        init = start.state
        ms = {"stage1_scores": start.stage1_scores, "stage2_scores": start.stage2_scores,
              "stage1_best": start.stage1_best, "stage2_best": start.stage2_best}
    else:
        init = initial_state(ctx, ModelDims(config.K, ctx.P, config.M, ctx.N), chain_rng(config.seed, chain_id, 0))
        ms = None
    path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / f"chain{chain_id}.bin"
    arc = run_chain(ctx, config, init, chain_rng(config.seed, chain_id, STAGE_MAIN), path,
                    header={"chain_id": chain_id, "seed": config.seed, "obs_ids": [o.obs_id for o in data]})
    arc.meta["multistart"] = ms
    arc.meta["chain_id"] = chain_id
    if out_dir is not None:
        write_chain_outputs(arc, Path(out_dir), chain_id)
    return arc


def write_chain_outputs(arc: ChainArchive, out_dir: Path, chain_id: int) -> None:
    arc.write_loglik_csv(out_dir / f"chain{chain_id}_loglik.csv")
    summary = {k: v for k, v in arc.meta.items()}
    (out_dir / f"chain{chain_id}_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


def _chain_job(args):
    data, config, chain_id, out_dir = args
    try:
        return fit_chain(data, config, chain_id, out_dir)
    except Exception as exc:  # reported per chain, siblings keep running
        return ChainFailure(chain_id, f"{type(exc).__name__}: {exc}", traceback.format_exc())


def run_parallel_chains(
    data: Dataset,
    config: RunConfig,
    n_chains: int | None = None,
    out_dir: str | Path | None = None,
    max_workers: int | None = None,
) -> list:
    """Independent chains on a process pool; results are ordered by chain id.

    Failed chains come back as :class:`ChainFailure` entries.
    """
    n = config.chains if n_chains is None else int(n_chains)
    if n < 1:
        raise ConfigError("need at least one chain")
    jobs = [(data, config, c, out_dir) for c in range(n)]
    workers = min(n, max_workers or os.cpu_count() or 1)
    if workers == 1:
        return [_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_chain_job, jobs))
