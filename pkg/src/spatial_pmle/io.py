"""CSV ingestion, result serialization and run manifests.

File formats (UTF-8, header row mandatory):

* regions: ``region_id,area,offset,count`` (``count`` may be blank when
  loading regions for prediction)
* covariates: ``region_id,<name_1>,...,<name_p>``
* edges: ``region_i,region_j[,weight]``

Regions are ordered lexicographically by id.  Floats are written with 17
significant digits so that a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import RegionGraph, build_graph
from .model import DataError, Dataset, ParamVector
from .penalties import PenaltyConfig
from .solver import FitResult

SCHEMA_VERSION = 1
REGION_HEADER = ("region_id", "area", "offset", "count")


def fmt(x) -> str:
    """Float as text with 17 significant digits (exact on re-reading)."""
    return format(float(x), ".17g")


def _read(path, required):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path.name}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path.name}: missing column(s) {missing}")
    body = [[c.strip() for c in r] for r in rows[1:] if any(c.strip() for c in r)]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path.name}: line {lineno} has {len(r)} fields, "
                            f"expected {len(header)}")
    return header, body


def _float(text, what, rid):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"region {rid!r}: {what} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise DataError(f"region {rid!r}: {what} is not finite")
    return v


def _count(text, rid):
    try:
        v = int(text)
    except ValueError:
        raise DataError(f"region {rid!r}: non-integer count {text!r}") from None
    if v < 0:
        raise DataError(f"region {rid!r}: negative count {v}")
    return v


@dataclass
class RegionTable:
    ids: list
    area: np.ndarray
    offset: np.ndarray
    count: np.ndarray  # NaN where missing


def read_regions(path, allow_missing_counts: bool = False) -> RegionTable:
    header, body = _read(path, REGION_HEADER)
    col = {c: header.index(c) for c in REGION_HEADER}
    seen, ids, area, offset, count = set(), [], [], [], []
    for r in body:
        rid = r[col["region_id"]]
        if rid in seen:
            raise DataError(f"duplicate region id {rid!r} in {Path(path).name}")
        seen.add(rid)
        ids.append(rid)
        area.append(_float(r[col["area"]], "area", rid))
        offset.append(_float(r[col["offset"]], "offset", rid))
        c = r[col["count"]]
        if c == "":
            if not allow_missing_counts:
                raise DataError(f"region {rid!r}: missing count")
            count.append(np.nan)
        else:
            count.append(_count(c, rid))
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    return RegionTable([ids[i] for i in order], np.asarray(area)[order],
                       np.asarray(offset)[order], np.asarray(count, dtype=float)[order])


def read_covariates(path, ids):
    header, body = _read(path, ("region_id",))
    names = [h for h in header if h != "region_id"]
    k = header.index("region_id")
    keep = [i for i, h in enumerate(header) if h != "region_id"]
    rows = {}
    for r in body:
        rid = r[k]
        if rid in rows:
            raise DataError(f"duplicate region id {rid!r} in {Path(path).name}")
        rows[rid] = [_float(r[i], f"covariate {header[i]}", rid) for i in keep]
    known = set(ids)
    for rid in rows:
        if rid not in known:
            raise DataError(f"covariates mention unknown region {rid!r}")
    X = np.empty((len(ids), len(names)))
    for i, rid in enumerate(ids):
        if rid not in rows:
            raise DataError(f"region {rid!r} is missing from the covariates file")
        X[i] = rows[rid]
    return X, tuple(names)


def read_edges(path, ids) -> RegionGraph:
    header, body = _read(path, ("region_i", "region_j"))
    i, j = header.index("region_i"), header.index("region_j")
    w = header.index("weight") if "weight" in header else None
    known = set(ids)
    edges = []
    for r in body:
        for end in (r[i], r[j]):
            if end not in known:
                raise DataError(f"edge references unknown region {end!r}")
        weight = 1.0 if w is None or r[w] == "" else _float(r[w], "edge weight", r[i])
        edges.append((r[i], r[j], weight))
    return build_graph(edges, ids)


def load_dataset(regions_csv, covariates_csv, edges_csv, allow_missing_counts: bool = False):
    """Read the three CSV files into an aligned ``(Dataset, RegionGraph)``.

    With ``allow_missing_counts``, blank counts are read as 0 and the third
    return value is a boolean mask of regions whose count was present.
    """
    reg = read_regions(regions_csv, allow_missing_counts)
    if not reg.ids:
        raise DataError("no regions")
    X, names = read_covariates(covariates_csv, reg.ids)
    g = read_edges(edges_csv, reg.ids)
    observed = ~np.isnan(reg.count)
    d = Dataset(np.where(observed, reg.count, 0.0), reg.offset, reg.area, X, tuple(reg.ids),
                names)
    if allow_missing_counts:
        return d, g, observed
    return d, g


def write_dataset(d: Dataset, g: RegionGraph, directory, prefix: str = ""):
    """Write ``regions.csv``, ``covariates.csv`` and ``edges.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = [str(r) for r in d.region_ids]
    paths = {k: directory / f"{prefix}{k}.csv" for k in ("regions", "covariates", "edges")}
    with paths["regions"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGION_HEADER)
        for i, rid in enumerate(ids):
            w.writerow([rid, fmt(d.area[i]), fmt(d.p_offset[i]), int(d.y[i])])
    with paths["covariates"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *d.covariate_names])
        for i, rid in enumerate(ids):
            w.writerow([rid, *(fmt(v) for v in d.X[i])])
    gids = [str(r) for r in g.region_ids]
    with paths["edges"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_i", "region_j", "weight"])
        for a, b, wt in g.edges():
            w.writerow([gids[a], gids[b], fmt(wt)])
    return paths


def write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path.name}: invalid JSON ({exc})") from None


def fit_to_dict(res: FitResult, standardized: bool = False) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "region_ids": [str(r) for r in res.region_ids],
        "alpha": res.alpha,
        "covariate_names": list(res.covariate_names),
        "beta": res.beta,
        "objective": res.objective,
        "iterations": res.iterations,
        "converged": res.converged,
        "standardized": standardized,
        "penalty": res.penalty.to_dict(),
        "solver": res.solver.to_dict(),
    }


def theta_from_fit_json(doc: dict, d: Dataset | None = None) -> ParamVector:
    """Parameters from a fit document, realigned to ``d``'s region order when given."""
    try:
        ids, alpha, beta = doc["region_ids"], doc["alpha"], doc["beta"]
    except KeyError as exc:
        raise DataError(f"fit document lacks key {exc}") from None
    alpha = np.asarray(alpha, dtype=float)
    if d is None:
        return ParamVector(alpha, beta)
    pos = {rid: i for i, rid in enumerate(ids)}
    missing = [r for r in d.region_ids if str(r) not in pos]
    if missing:
        raise DataError(f"fit has no baseline for region {missing[0]!r}")
    if len(beta) != d.p:
        raise DataError(f"fit has {len(beta)} coefficients, data has {d.p} covariates")
    return ParamVector(alpha[[pos[str(r)] for r in d.region_ids]], beta)


def penalty_from_dict(doc: dict) -> PenaltyConfig:
    kw = {k: doc[k] for k in ("gamma", "tau", "xi", "delta") if doc.get(k) is not None}
    if "fusion" in doc:
        kw["fusion_kind"] = doc["fusion"]
    return PenaltyConfig(**kw)


def library_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed as a distribution
        from . import __version__
        return __version__


@dataclass
class RunManifest:
    command: str
    inputs: dict
    config: dict
    seed: int | None = None
    version: str = field(default_factory=library_version)
    started: float = field(default_factory=time.perf_counter)
    duration_seconds: float | None = None

    def finish(self):
        self.duration_seconds = time.perf_counter() - self.started

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": {k: (str(v) if isinstance(v, (str, os.PathLike)) else v)
                       for k, v in self.inputs.items()},
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "python": platform.python_version(),
            "argv": sys.argv[1:],
            "duration_seconds": self.duration_seconds,
        }

    def write(self, path):
        if self.duration_seconds is None:
            self.finish()
        write_json(path, self.to_dict())
