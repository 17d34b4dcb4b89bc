"""Benchmark sweeps: generate semi-synthetic datasets over a grid, run
discovery on each, and score the p-value matrices against the truth.

A grid cell is one (generator, mode, conf_p, n, |X|, |Y|) combination; each
cell is replicated over a list of seeds.  The dataset for a replicate depends
only on the master seed, the replicate seed and the data-shaping parameters,
so every search mode in a sweep sees the same datasets.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .amortized import TrainConfig
from .data import DataMatrix, RngHandle, derive_seed, load_csv
from .discovery import DiscoveryConfig, discover
from .exceptions import ConfigError, SCSLError
from .metrics import compute_metrics
from .search import SearchConfig, SearchMode
from .synthgen import GenConfig, gen_real_confounding, gen_synth_confounding, simulate_base_dataset, simulate_x

__all__ = ["BenchSpec", "BenchCell", "BenchResult", "grid_cells", "make_dataset", "run_bench"]

log = logging.getLogger(__name__)

GENERATORS = ("synthetic", "real_confounding")
SUMMARY_COLUMNS = ["mode", "conf_p", "n", "|X|", "|Y|", "F1", "wall",
                   "generator", "seeds", "failed", "F1_sd", "precision", "recall"]


@dataclass(frozen=True)
class BenchSpec:
    """The sweep grid plus generator settings shared by every cell."""

    n: tuple = (2000,)
    shapes: tuple = ((5, 5),)
    conf_p: tuple = (0.0,)
    seeds: tuple = (0,)
    modes: tuple = ("hybrid",)
    generator: str = "synthetic"
    response: str = "logistic"
    k_parents: int = 2
    coef_mean: float = 2.0
    coef_sd: float = 1.0
    noise_sd: float = 1.0
    x_prob: float = 0.5
    base_conf_p: float = 0.5
    base_x: Optional[str] = None
    base_y: Optional[str] = None
    thresholds: Optional[tuple] = None

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be unique")
        for mode in self.modes:
            SearchMode.parse(mode)
        if self.generator == "real_confounding" and (self.base_x is None) != (self.base_y is None):
            raise ConfigError("base_x and base_y must be given together")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        for key in ("n", "conf_p", "seeds", "modes", "thresholds"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if "shapes" in d:
            d["shapes"] = tuple(tuple(int(v) for v in s) for s in d["shapes"])
        return cls(**d)


@dataclass(frozen=True)
class BenchCell:
    generator: str
    mode: str
    conf_p: Optional[float]
    n: int
    p: int
    m: int

    def data_key(self) -> tuple:
        conf = -1 if self.conf_p is None else int(round(self.conf_p * 1_000_000))
        return (GENERATORS.index(self.generator), self.n, self.p, self.m, conf + 1)


@dataclass
class BenchResult:
    records: list = field(default_factory=list)
    summary: list = field(default_factory=list)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in self.summary:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
        return buf.getvalue()

    def deterministic_records(self) -> list:
        return [{k: v for k, v in r.items() if k != "wall"} for r in self.records]


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if np.isnan(v) else format(v, ".6g")
    return v


def grid_cells(spec: BenchSpec) -> list:
    # conf_p only shapes the synthetic generator
    confs = spec.conf_p if spec.generator == "synthetic" else (None,)
    return [BenchCell(spec.generator, SearchMode.parse(mode).value, c, int(n), int(p), int(m))
            for mode, c, n, (p, m) in itertools.product(spec.modes, confs, spec.n, spec.shapes)]


def _load_base(spec: BenchSpec) -> Optional[DataMatrix]:
    if spec.base_x is None:
        return None
    return load_csv(spec.base_x, spec.base_y)


def _subsample(base: DataMatrix, n: int, p: int, m: int, rng) -> DataMatrix:
    if n > base.n or p > base.p or m > base.m:
        raise ConfigError(f"base data is {base.n}x({base.p},{base.m}); cannot take n={n}, shape=({p},{m})")
    rows = np.sort(rng.choice(base.n, size=n, replace=False))
    return DataMatrix(base.x_data[rows, :p], base.y_data[rows, :m], base.domain,
                      base.x_names[:p], base.y_names[:m])


def make_dataset(cell: BenchCell, seed: int, spec: BenchSpec, master_seed: int, base: Optional[DataMatrix] = None):
    """The semi-synthetic dataset of one replicate (independent of the search mode)."""
    rng = RngHandle(master_seed, (seed,) + cell.data_key())
    cfg = GenConfig(k_parents=spec.k_parents, conf_p=cell.conf_p or 0.0, coef_mean=spec.coef_mean,
                    coef_sd=spec.coef_sd, m_targets=cell.m, noise_sd=spec.noise_sd, seed=seed)
    if cell.generator == "synthetic":
        if base is not None:
            x = _subsample(base, cell.n, cell.p, base.m, rng.child(0)).x_data
        else:
            x = simulate_x(cell.n, cell.p, rng.child(0), prob=spec.x_prob)
        return gen_synth_confounding(x, cfg, rng.child(1), response=spec.response)
    if base is not None:
        source = _subsample(base, cell.n, cell.p, cell.m, rng.child(0))
    else:
        source = simulate_base_dataset(cell.n, cell.p, cell.m, rng.child(0), x_prob=spec.x_prob,
                                       y_conf_p=spec.base_conf_p)
    return gen_real_confounding(source, cfg, rng.child(1), response=spec.response)


def _run_one(cell: BenchCell, seed: int, spec: BenchSpec, train: TrainConfig, search: SearchConfig,
             fdr_q: float, master_seed: int, workers: int, base: Optional[DataMatrix]) -> dict:
    rec = {**asdict(cell), "seed": seed, "error": None}
    wall = {}
    try:
        t0 = time.perf_counter()
        out = make_dataset(cell, seed, spec, master_seed, base)
        wall["generate"] = time.perf_counter() - t0
        dcfg = DiscoveryConfig(train=train, search=SearchConfig(**{**asdict(search), "mode": cell.mode}),
                               fdr_q=fdr_q, parallelism=workers,
                               seed=derive_seed(master_seed, seed, *cell.data_key()))
        report = discover(out.data, dcfg)
        wall["train"] = report.timing["train_seconds"]
        wall["search"] = report.timing["search_seconds"]
        t0 = time.perf_counter()
        metrics = compute_metrics(report.p_matrix, out.truth, spec.thresholds)
        wall["metrics"] = time.perf_counter() - t0
    except (SCSLError, ArithmeticError, ValueError) as exc:
        log.warning("bench cell %s seed %s failed: %s", cell, seed, exc)
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["wall"] = wall
        return rec
    rec.update(metrics.to_dict())
    rec["failed_edges"] = [list(e) for e in report.failed_edges]
    rec["rejections"] = [list(e) for e in report.rejections]
    wall["total"] = sum(wall.values())
    rec["wall"] = wall
    return rec


def _summarize(cells: list, records: list) -> list:
    rows = []
    for cell in cells:
        recs = [r for r in records if BenchCell(*(r[f] for f in ("generator", "mode", "conf_p", "n", "p", "m"))) == cell]
        ok = [r for r in recs if r["error"] is None]
        f1 = np.array([r["f1"] for r in ok])
        row = {
            "mode": cell.mode, "conf_p": cell.conf_p, "n": cell.n, "|X|": cell.p, "|Y|": cell.m,
            "F1": float(f1.mean()) if ok else float("nan"),
            "wall": float(np.mean([r["wall"]["total"] for r in ok])) if ok else float("nan"),
            "generator": cell.generator, "seeds": len(recs), "failed": len(recs) - len(ok),
            "F1_sd": float(f1.std(ddof=1)) if len(ok) > 1 else float("nan"),
            "precision": float(np.mean([r["precision"] for r in ok])) if ok else float("nan"),
            "recall": float(np.mean([r["recall"] for r in ok])) if ok else float("nan"),
        }
        if ok:
            # pool null edges over seeds before taking the rate
            n_null = np.array([r["n_null"] for r in ok], dtype=float)
            fp = sum(np.asarray(r["fpr"]) * r["n_null"] for r in ok)
            pooled = fp / n_null.sum() if n_null.sum() else np.zeros_like(fp)
            row["pooled_fpr"] = pooled.tolist()
            row["pooled_fpr_ratio"] = (pooled / np.asarray(ok[0]["thresholds"])).tolist()
            row["thresholds"] = ok[0]["thresholds"]
        rows.append(row)
    return rows


def run_bench(spec: BenchSpec, train: TrainConfig = TrainConfig(), search: SearchConfig = SearchConfig(),
              fdr_q: float = 0.05, master_seed: int = 0, workers: int = 1) -> BenchResult:
    """Run every cell x seed of the sweep.  Failed replicates are recorded and skipped."""
    cells = grid_cells(spec)
    tasks = [(c, s) for c in cells for s in spec.seeds]
    if not tasks:
        return BenchResult()
    if spec.thresholds is not None:
        compute_metrics(np.zeros((1, 1)), np.zeros((1, 1), dtype=bool), spec.thresholds)  # validate early
    base = _load_base(spec)
    workers = max(1, int(workers))
    if workers > 1 and len(tasks) > 1:
        records = Parallel(n_jobs=min(workers, len(tasks)))(
            delayed(_run_one)(c, s, spec, train, search, fdr_q, master_seed, 1, base) for c, s in tasks)
    else:
        records = [_run_one(c, s, spec, train, search, fdr_q, master_seed, workers, base) for c, s in tasks]
    return BenchResult(list(records), _summarize(cells, records))
