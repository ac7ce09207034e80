"""Functional datasets and their on-disk formats.

Two formats are supported:

* CSV long format with header ``obs_id,t1,...,td,value`` (one row per point).
* JSON lines, one observation per line: ``{"id": ..., "grid": [...], "values": [...]}``.

Floats are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import BasisSystem, evaluate
from .errors import ConfigError

FLOAT_FMT = "{:.17g}"


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


@dataclass
class Observation:
    grid: np.ndarray  # (n,) for 1-D domains, (n, d) otherwise
    values: np.ndarray  # (n,)
    obs_id: str = ""

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


@dataclass
class Dataset:
    observations: list[Observation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def __getitem__(self, i: int) -> Observation:
        return self.observations[i]

    @property
    def N(self) -> int:
        return len(self.observations)

    @property
    def n_points(self) -> np.ndarray:
        return np.array([o.n for o in self.observations], dtype=int)

    @property
    def total_points(self) -> int:
        return int(self.n_points.sum())

    @property
    def dimension(self) -> int:
        if not self.observations:
            return 1
        g = self.observations[0].grid
        return 1 if g.ndim == 1 else g.shape[1]

    @classmethod
    def from_arrays(cls, grids: Sequence, values: Sequence, ids: Sequence[str] | None = None) -> "Dataset":
        if len(grids) != len(values):
            raise ConfigError("grids and values must have the same length")
        obs = []
        for i, (g, v) in enumerate(zip(grids, values)):
            g = np.asarray(g, dtype=float)
            v = np.asarray(v, dtype=float).reshape(-1)
            if g.ndim == 2 and g.shape[1] == 1:
                g = g[:, 0]
            if g.shape[0] != v.shape[0]:
                raise ConfigError(f"observation {i}: grid and values differ in length")
            if v.size < 1:
                raise ConfigError(f"observation {i}: no points")
            if not np.all(np.isfinite(v)) or not np.all(np.isfinite(g)):
                raise ConfigError(f"observation {i}: non-finite entries")
            obs.append(Observation(g, v, str(ids[i]) if ids is not None else str(i)))
        return cls(obs)

    def with_values(self, values: Sequence[np.ndarray]) -> "Dataset":
        return Dataset([Observation(o.grid, np.asarray(v, float), o.obs_id) for o, v in zip(self.observations, values)])


class StackedDesign:
    """All observations' basis evaluations stacked row-wise.

    Attributes
    ----------
    Bt : (n_total, P) array, row ``l`` is ``B(t_l)'``.
    y : (n_total,) stacked responses.
    idx : (n_total,) observation index of each row.
    counts : (N,) points per observation.
    grams : (N, P, P) per-observation ``S_i S_i'``.
    """

    def __init__(self, data: Dataset, basis: BasisSystem):
        self.N = data.N
        self.P = basis.n_basis
        mats = [evaluate(basis, o.grid) for o in data.observations]
        self.designs = mats
        if mats:
            self.Bt = np.ascontiguousarray(np.concatenate([m.T for m in mats], axis=0))
            self.y = np.concatenate([o.values for o in data.observations])
        else:
            self.Bt = np.zeros((0, self.P))
            self.y = np.zeros(0)
        self.counts = data.n_points if mats else np.zeros(0, dtype=int)
        self.idx = np.repeat(np.arange(self.N), self.counts)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)]).astype(int)
        self.grams = (
            np.einsum("ipn,iqn->ipq", *(2 * [np.stack(mats)]))
            if mats and len(set(self.counts.tolist())) == 1
            else np.array([m @ m.T for m in mats]).reshape(self.N, self.P, self.P)
        )
        self.n_total = int(self.y.shape[0])

    def segment_sum(self, x: np.ndarray) -> np.ndarray:
        """Per-observation sums of a stacked vector."""
        return np.bincount(self.idx, weights=x, minlength=self.N)

    def with_y(self, y: np.ndarray) -> "StackedDesign":
        other = object.__new__(StackedDesign)
        other.__dict__.update(self.__dict__)
        other.y = np.asarray(y, dtype=float)
        return other

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


# ---------------------------------------------------------------- CSV / JSONL


def write_csv(data: Dataset, path: str | Path) -> None:
    d = data.dimension
    cols = ["obs_id"] + [f"t{j + 1}" for j in range(d)] + ["value"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for o in data.observations:
        g = o.grid.reshape(o.n, -1)
        for row, v in zip(g, o.values):
            buf.write(",".join([o.obs_id] + [fmt(x) for x in row] + [fmt(v)]) + "\n")
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path) -> Dataset:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ConfigError("empty data file", line=1)
    reader = csv.reader(text)
    header = [h.strip() for h in next(reader)]
    if len(header) < 3 or header[0] != "obs_id" or header[-1] != "value":
        raise ConfigError("header must be obs_id,t1,...,td,value", line=1)
    d = len(header) - 2
    order: list[str] = []
    pts: dict[str, list] = {}
    vals: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 2:
            raise ConfigError(f"expected {d + 2} fields, got {len(row)}", line=lineno)
        oid = row[0].strip()
        try:
            t = [float(c) for c in row[1:-1]]
            v = float(row[-1])
        except ValueError as exc:
            raise ConfigError(f"non-numeric field ({exc})", line=lineno) from None
        if not (np.isfinite(v) and np.all(np.isfinite(t))):
            raise ConfigError("non-finite value", line=lineno)
        if oid not in pts:
            order.append(oid)
            pts[oid], vals[oid] = [], []
        pts[oid].append(t)
        vals[oid].append(v)
    grids = [np.array(pts[o]) if d > 1 else np.array(pts[o])[:, 0] for o in order]
    return Dataset.from_arrays(grids, [np.array(vals[o]) for o in order], order)


def write_jsonl(data: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for o in data.observations:
            rec = {"id": o.obs_id, "grid": o.grid.tolist(), "values": o.values.tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path: str | Path) -> Dataset:
    grids, values, ids = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                grids.append(np.asarray(rec["grid"], dtype=float))
                values.append(np.asarray(rec["values"], dtype=float))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad observation record ({exc})", line=lineno) from None
            ids.append(str(rec.get("id", len(ids))))
    if not grids:
        raise ConfigError("no observations in file")
    return Dataset.from_arrays(grids, values, ids)


def read_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    if p.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        return read_jsonl(p)
    return read_csv(p)


def write_dataset(data: Dataset, path: str | Path) -> None:
    p = Path(path)
    if p.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        write_jsonl(data, p)
    else:
        write_csv(data, p)
