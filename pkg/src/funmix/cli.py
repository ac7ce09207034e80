"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``summarize``, ``select``, ``rescale`` and
``eval``.  Exit codes: 0 success, 2 usage, 3 data or schema problem,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .basis import BasisSystem, basis_from_config
from .data import StackedDesign, fmt, read_dataset, write_dataset
from .errors import ConfigError, FunmixError, NumericalError
from .model import ModelState
from .orchestration import ChainArchive, ChainFailure, load_config, run_parallel_chains
from .postprocess import eigen_decompose, rescale_draws, summarize_functions
from .selection import criteria_report, elbow_scan, recovery_metrics, write_criteria_csv
from .simgen import SimSpec, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _require(path: str | None, what: str) -> Path:
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _read_mapping(path: Path) -> dict:
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno) from None
    from .orchestration import _toml

    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None


def save_truth(truth: ModelState, basis: BasisSystem, path: Path, spec: SimSpec | None = None) -> None:
    doc = {
        "state": {k: np.asarray(v).tolist() for k, v in truth.to_dict().items()},
        "basis": basis.to_dict(),
        "spec": spec.to_dict() if spec is not None else None,
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_truth(path: Path) -> tuple[ModelState, BasisSystem]:
    try:
        doc = json.loads(path.read_text())
        return ModelState.from_dict(doc["state"]), basis_from_config(doc["basis"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad truth file: {exc}") from None


def _load_archives(paths) -> list[ChainArchive]:
    return [ChainArchive.load(_require(p, "archive")) for p in paths]


def _grid_for(basis: BasisSystem, n: int) -> np.ndarray:
    if basis.dimension != 1:
        raise ConfigError("function summaries are tabulated for one-dimensional domains only")
    lo, hi = basis.factors[0].domain
    return np.linspace(lo, hi, n)


# ------------------------------------------------------------- subcommands


def cmd_simulate(args) -> int:
    spec = SimSpec.from_dict(_read_mapping(_require(args.spec, "spec file")))
    if args.seed is not None:
        spec = SimSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    if args.N is not None:
        spec = SimSpec.from_dict({**spec.to_dict(), "N": args.N})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth, data = simulate(spec)
    write_dataset(data, out / f"data.{args.format}")
    save_truth(truth, spec.basis, out / "truth.json", spec)
    print(f"wrote {data.N} observations to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = read_dataset(_require(args.data, "data file"))
    config = load_config(_require(args.config, "config file"))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["total_iterations"] = args.iterations
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    n_chains = args.chains if args.chains is not None else config.chains
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_parallel_chains(data, config, n_chains, out_dir=out)
    failed = [r for r in results if isinstance(r, ChainFailure)]
    for r in results:
        if isinstance(r, ChainFailure):
            print(f"chain {r.chain_id} failed: {r.error}", file=sys.stderr)
        else:
            acc = r.meta["acceptance"]
            print(f"chain {r.meta['chain_id']}: {len(r)} draws, mean loglik {np.mean(r.loglik):.6g}, "
                  f"z acceptance {acc['z_mean']:.3f}")
    if failed:
        numeric = any("NumericalError" in f.error or "ConstraintSingular" in f.error for f in failed)
        return EXIT_NUMERIC if numeric else EXIT_DATA
    return EXIT_OK


def _pooled_draws(archives):
    draws = []
    for a in archives:
        draws.extend(a.draws())
    return draws


def cmd_summarize(args) -> int:
    archives = _load_archives(args.archive)
    basis = archives[0].basis
    draws = _pooled_draws(archives)
    if not draws:
        raise ConfigError("archive holds no draws")
    K = draws[0].Z.shape[1]
    targets = args.targets or [f"mean:{k + 1}" for k in range(K)] + [
        f"cov:{k + 1},{kp + 1}" for k in range(K) for kp in range(k, K)
    ]
    grid = _grid_for(basis, args.grid_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for alpha in args.alpha:
        suffix = "" if len(args.alpha) == 1 else f"_a{alpha:g}"
        try:
            summaries = summarize_functions(draws, basis, grid, targets, alpha=alpha, rescale=not args.no_rescale)
        except (ValueError, IndexError) as exc:
            raise UsageError(str(exc)) from None
        for s in summaries:
            s.to_csv(out / f"{s.name}{suffix}.csv")
    if not args.no_rescale and K == 2:
        draws, _ = rescale_draws(draws)
    eig = [eigen_decompose(d, basis).eigenvalues for d in draws]
    width = max((e.size for e in eig), default=0)
    padded = np.array([np.pad(e, (0, width - e.size)) for e in eig]) if width else np.zeros((len(eig), 0))
    med = np.median(padded, axis=0) if width else np.zeros(0)
    lines = ["index,eigenvalue_median"] + [f"{p + 1},{fmt(v)}" for p, v in enumerate(med)]
    (out / "eigenvalues.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote summaries for {len(targets)} targets to {out}")
    return EXIT_OK


def cmd_select(args) -> int:
    data = read_dataset(_require(args.data, "data file"))
    archives = _load_archives(args.archives)
    reports = []
    for a in archives:
        design = StackedDesign(data, a.basis)
        if a.dims.N != data.N:
            raise ConfigError(f"archive has {a.dims.N} observations, data has {data.N}")
        reports.append(criteria_report(list(a.draws()), design, a.loglik))
    reports.sort(key=lambda r: r.K)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_criteria_csv(reports, out / "criteria.csv")
    result = {"elbow_K": None, "no_elbow": None}
    if len(reports) >= 3:
        e = elbow_scan([r.K for r in reports], [r.mean_loglik for r in reports])
        result = {"elbow_K": e.K, "no_elbow": e.no_elbow, "curvature": [float(c) for c in e.curvature]}
    result["best_BIC_K"] = max(reports, key=lambda r: r.BIC).K
    result["best_AIC_K"] = min(reports, key=lambda r: r.AIC).K
    result["best_DIC_K"] = min(reports, key=lambda r: r.DIC).K
    (out / "selection.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    print(f"suggested K (elbow): {result['elbow_K']}")
    return EXIT_OK


def cmd_rescale(args) -> int:
    (arc,) = _load_archives([args.archive])
    draws, bad = rescale_draws(arc.draws())
    out = ChainArchive(arc.dims, {**arc.header, "rescaled": True})
    for d, ll in zip(draws, arc.loglik):
        out.append(d, ll)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    out.save(args.out)
    print(f"rescaled {len(draws) - bad} draws ({bad} degenerate passed through)")
    return EXIT_OK


def cmd_eval(args) -> int:
    truth, basis = load_truth(_require(args.truth, "truth file"))
    archives = _load_archives(args.archive)
    draws = _pooled_draws(archives)
    if not draws:
        raise ConfigError("archive holds no draws")
    if draws[0].Z.shape != truth.Z.shape:
        raise ConfigError("archive and truth differ in dimensions")
    grid = _grid_for(basis, args.grid_size)
    m = recovery_metrics(truth, draws, basis, grid, rescale=not args.no_rescale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["target,r_mise_pct"] + [f"{k},{fmt(v)}" for k, v in m.r_mise.items()]
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "z_rmse.csv").write_text(f"z_rmse\n{fmt(m.z_rmse)}\n")
    print(f"z_rmse {m.z_rmse:.6g}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="funmix", description="Bayesian functional mixed membership models")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset and its truth")
    s.add_argument("--spec", required=True, help="simulation spec (TOML or JSON)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run MCMC chains")
    f.add_argument("--data", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--chains", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--iterations", type=int)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="posterior medians and credible bands")
    m.add_argument("--archive", required=True, nargs="+")
    m.add_argument("--targets", nargs="*", help="e.g. mean:1 cov:1,2 (default: all)")
    m.add_argument("--out", required=True)
    m.add_argument("--alpha", type=float, nargs="+", default=[0.05])
    m.add_argument("--grid-size", type=int, default=101)
    m.add_argument("--no-rescale", action="store_true")
    m.set_defaults(func=cmd_summarize)

    c = sub.add_parser("select", help="information criteria across K")
    c.add_argument("--archives", required=True, nargs="+")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_select)

    r = sub.add_parser("rescale", help="rescale memberships of every draw (K=2)")
    r.add_argument("--archive", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rescale)

    e = sub.add_parser("eval", help="recovery metrics against a simulation truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--archive", required=True, nargs="+")
    e.add_argument("--out", required=True)
    e.add_argument("--grid-size", type=int, default=100)
    e.add_argument("--no-rescale", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FunmixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
