"""``scsl`` command line: generate | discover | bench | trace.

Every verb reads a JSON config (``--config``) holding a top-level ``seed``
and a block named after the verb.  Configs are schema-checked before any
work starts.  Exit codes: 0 ok, 1 runtime failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .amortized import AmortizedModel, TrainConfig
from .bench import BenchSpec, run_bench
from .data import DataMatrix, Domain, RngHandle, atomic_write_text, load_csv, read_matrix_csv, write_csv
from .discovery import DiscoveryConfig, discover
from .exceptions import ConfigError, SCSLError
from .gcm import EdgeEvaluator
from .search import SearchConfig, SearchMode, code_to_subset, search_edge
from .synthgen import GenConfig, gen_real_confounding, gen_synth_confounding, simulate_x

__all__ = ["main", "build_parser", "load_config", "CONFIG_SCHEMA", "EXHAUSTIVE_LIMIT"]

log = logging.getLogger("scsl")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
EXHAUSTIVE_LIMIT = 1024  # evaluations per edge allowed without --force

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

# ---------------------------------------------------------------------------
# schema

_prob = {"type": "number", "minimum": 0, "maximum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 0}
_path = {"type": "string", "minLength": 1}
_modes = ["gso", "hybrid", "naive", "naive_random", "naiverandom", "random", "exhaustive"]

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_epochs": _count,
        "batch_size": {"type": "integer", "minimum": 1},
        "learning_rate": _pos,
        "p_mask": _prob,
        "l2_lambda": {"type": "number", "minimum": 0},
    },
}

_SEARCH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": _modes},
        "q": _count,
        "q1": _count,
        "q2": _count,
        "tau0": _pos,
        "tau_min": _pos,
        "tau_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "theta_lr": _pos,
        "theta_floor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "alpha_stop": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0, "maximum": 1}]},
        "enumerate_limit": _count,
        "record_trace": {"type": "boolean"},
    },
}

_GEN_FIELDS = {
    "k_parents": {"type": "integer", "minimum": 1},
    "conf_p": _prob,
    "coef_mean": {"type": "number"},
    "coef_sd": _pos,
    "noise_sd": {"type": "number", "minimum": 0},
    "x_prob": _prob,
    "response": {"enum": ["logistic", "gaussian"]},
}

_EDGE = {"type": "array", "minItems": 2, "maxItems": 2,
         "items": {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "string"}]}}

_GENERATE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mode"],
    "properties": {
        "mode": {"enum": ["synthetic", "real_confounding"]},
        "n": {"type": "integer", "minimum": 2},
        "p": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "x_path": _path,
        "y_path": _path,
        "fixed_coef": {"type": ["number", "null"]},
        **_GEN_FIELDS,
    },
    "allOf": [
        {"if": {"properties": {"mode": {"const": "real_confounding"}}},
         "then": {"required": ["x_path", "y_path"]}},
        {"if": {"properties": {"mode": {"const": "synthetic"}}},
         "then": {"required": ["m"]}},
        {"if": {"properties": {"mode": {"const": "synthetic"}}, "not": {"required": ["x_path"]}},
         "then": {"required": ["n", "p"]}},
    ],
}

_STRATUM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "x_path", "y_path"],
    "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}, "x_path": _path, "y_path": _path},
}

_DISCOVER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "x_path": _path,
        "y_path": _path,
        "strata": {"type": "array", "minItems": 1, "items": _STRATUM},
        "domain": {"enum": ["binary", "continuous"]},
        "train": _TRAIN,
        "search": _SEARCH,
        "fdr_q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "edges": {"type": "array", "items": _EDGE},
    },
    "oneOf": [{"required": ["x_path", "y_path"]}, {"required": ["strata"]}],
}

_TRACE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["x_path", "y_path", "edge"],
    "properties": {
        "x_path": _path,
        "y_path": _path,
        "domain": {"enum": ["binary", "continuous"]},
        "edge": _EDGE,
        "modes": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"enum": _modes}},
        "train": _TRAIN,
        "search": _SEARCH,
    },
}

_BENCH = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **_GEN_FIELDS,
        "generator": {"enum": ["synthetic", "real_confounding"]},
        "n": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "shapes": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                              "items": {"type": "integer", "minimum": 1}}},
        "conf_p": {"type": "array", "items": _prob},
        "seeds": {"type": "array", "uniqueItems": True, "items": {"type": "integer", "minimum": 0}},
        "modes": {"type": "array", "uniqueItems": True, "items": {"enum": _modes}},
        "base_conf_p": _prob,
        "base_x": _path,
        "base_y": _path,
        "thresholds": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0,
                                                                 "maximum": 1}},
        "train": _TRAIN,
        "search": _SEARCH,
        "fdr_q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "dependentRequired": {"base_x": ["base_y"], "base_y": ["base_x"]},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "generate": _GENERATE,
        "discover": _DISCOVER,
        "bench": _BENCH,
        "trace": _TRACE,
    },
}


# ---------------------------------------------------------------------------
# config loading


def _reject_duplicate_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}")
        seen[key] = value
    return seen


def _locate(text: str, path) -> int:
    """Best-effort 1-based line of the JSON node at ``path``."""
    pos = 0
    for part in path:
        if isinstance(part, str):
            hit = text.find(json.dumps(part), pos)
            if hit < 0:
                break
            pos = hit
    return text.count("\n", 0, pos) + 1


def load_config(path, verb: str, seed=None) -> dict:
    """Read and validate a config.  Raises ConfigError with ``file:line`` in the message."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault(verb, {})
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}:{_locate(text, err.absolute_path)}: {where}: {err.message}")
    return cfg


def _train_cfg(block: dict) -> TrainConfig:
    return TrainConfig(**block.get("train", {}))


def _search_cfg(block: dict, **overrides) -> SearchConfig:
    return SearchConfig(**{**block.get("search", {}), **overrides})


def _guard_exhaustive(search: SearchConfig, m: int, n_edges: int, force: bool) -> None:
    if search.mode is not SearchMode.EXHAUSTIVE:
        return
    per_edge = 1 << max(0, m - 1)
    if per_edge > EXHAUSTIVE_LIMIT and not force:
        raise ConfigError(
            f"exhaustive search with |Y|={m} needs 2^{m - 1} = {per_edge} GCM evaluations per edge, "
            f"{per_edge * n_edges} over {n_edges} edges (limit {EXHAUSTIVE_LIMIT} per edge); "
            "use --force to run anyway or pick mode hybrid")


def _resolve_edge(data: DataMatrix, edge) -> tuple:
    j, k = edge
    try:
        j = data.x_names.index(j) if isinstance(j, str) else int(j)
        k = data.y_names.index(k) if isinstance(k, str) else int(k)
    except ValueError as exc:
        raise ConfigError(f"unknown variable in edge {edge}: {exc}") from None
    if not (0 <= j < data.p and 0 <= k < data.m):
        raise ConfigError(f"edge {edge} is out of range for {data.p} X and {data.m} Y columns")
    return j, k


def _write_json(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# verbs


def cmd_generate(cfg: dict, args) -> int:
    block = dict(cfg["generate"])
    seed = cfg["seed"]
    mode = block.pop("mode")
    response = block.pop("response", "logistic")
    x_prob = block.pop("x_prob", 0.5)
    n, p = block.pop("n", None), block.pop("p", None)
    x_path, y_path = block.pop("x_path", None), block.pop("y_path", None)
    m = block.pop("m", None)
    gen = GenConfig(m_targets=m, seed=seed, **block)
    rng = RngHandle(seed)
    if mode == "synthetic":
        if x_path is not None:
            names, values = read_matrix_csv(x_path, Domain.BINARY)
            x_in = DataMatrix(values, np.zeros((values.shape[0], 1)), Domain.BINARY, names, ("Y_",))
        else:
            x_in = simulate_x(n, p, rng.child(0), prob=x_prob)
        out = gen_synth_confounding(x_in, gen, rng.child(1), response=response)
    else:
        domain = Domain.BINARY if response == "logistic" else Domain.CONTINUOUS
        base = load_csv(x_path, y_path, domain)
        out = gen_real_confounding(base, gen, rng.child(1), response=response)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    write_csv(out.data, dest / "X.csv", dest / "Y.csv")
    atomic_write_text(dest / "truth.json", out.sidecar_json())
    log.info("wrote %s/{X.csv,Y.csv,truth.json} (n=%d, p=%d, m=%d)", dest, out.data.n, out.data.p, out.data.m)
    return EXIT_OK


def _discover_one(data: DataMatrix, block: dict, seed: int, workers: int, force: bool, dest: Path) -> list:
    search = _search_cfg(block)
    edges = None
    if "edges" in block:
        edges = tuple(_resolve_edge(data, e) for e in block["edges"])
    n_edges = len(edges) if edges is not None else data.p * data.m
    _guard_exhaustive(search, data.m, n_edges, force)
    dcfg = DiscoveryConfig(train=_train_cfg(block), search=search, fdr_q=block.get("fdr_q", 0.05),
                           edge_filter=edges, parallelism=workers, seed=seed)
    report = discover(data, dcfg)
    dest.mkdir(parents=True, exist_ok=True)
    atomic_write_text(dest / "report.json", report.to_json())
    atomic_write_text(dest / "p_matrix.csv", report.p_matrix_csv())
    if search.record_trace:
        atomic_write_text(dest / "traces.jsonl", report.traces_jsonl())
    _write_json(dest / "timing.json", report.timing)
    log.info("%s: %d edges tested, %d rejected at q=%s", dest, int(report.tested.sum()),
             len(report.rejections), dcfg.fdr_q)
    return [(data.x_names[j], data.y_names[k], report.edge_results[(j, k)].error)
            for j, k in report.failed_edges]


def cmd_discover(cfg: dict, args) -> int:
    block = cfg["discover"]
    domain = Domain.parse(block.get("domain", "binary"))
    workers = args.workers or cfg.get("workers", 1)
    dest = Path(args.out)
    if "strata" in block:
        # one independent BH family per stratum
        jobs = [(s["x_path"], s["y_path"], dest / s["name"]) for s in block["strata"]]
    else:
        jobs = [(block["x_path"], block["y_path"], dest)]
    failed = []
    for x_path, y_path, out in jobs:
        data = load_csv(x_path, y_path, domain)
        failed += _discover_one(data, block, cfg["seed"], workers, args.force, out)
    for x, y, err in failed:
        print(f"scsl: edge {x} -> {y} failed: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_bench(cfg: dict, args) -> int:
    block = dict(cfg["bench"])
    train = _train_cfg(block)
    search = _search_cfg(block)
    fdr_q = block.pop("fdr_q", 0.05)
    block.pop("train", None)
    block.pop("search", None)
    spec = BenchSpec.from_dict(block)
    m_max = max((m for _, m in spec.shapes), default=0)
    if any(SearchMode.parse(mode) is SearchMode.EXHAUSTIVE for mode in spec.modes):
        _guard_exhaustive(SearchConfig(mode="exhaustive"), m_max, 1, args.force)
    result = run_bench(spec, train, search, fdr_q, cfg["seed"], args.workers or cfg.get("workers", 1))
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    atomic_write_text(dest / "summary.csv", result.summary_csv())
    atomic_write_text(dest / "metrics.jsonl", "".join(
        json.dumps(r, sort_keys=True) + "\n" for r in result.deterministic_records()))
    atomic_write_text(dest / "cells.json", json.dumps(
        [{k: v for k, v in row.items() if k != "wall"} for row in result.summary],
        indent=2, sort_keys=True, allow_nan=True) + "\n")
    _write_json(dest / "timing.json", [{**{k: r[k] for k in ("generator", "mode", "conf_p", "n", "p", "m", "seed")},
                                         "wall": r["wall"]} for r in result.records])
    n_fail = sum(r["error"] is not None for r in result.records)
    if n_fail:
        log.warning("%d of %d replicates failed; see metrics.jsonl", n_fail, len(result.records))
    return EXIT_OK


def _all_abs_stats(ev: EdgeEvaluator) -> np.ndarray:
    out = np.empty(1 << ev.d)
    for code in range(out.size):
        out[code] = abs(ev.hard(code_to_subset(code, ev.d).astype(float)).statistic)
    return np.sort(out)


def cmd_trace(cfg: dict, args) -> int:
    block = cfg["trace"]
    domain = Domain.parse(block.get("domain", "binary"))
    data = load_csv(block["x_path"], block["y_path"], domain)
    j, k = _resolve_edge(data, block["edge"])
    seed = cfg["seed"]
    train = _train_cfg(block)
    modes = [SearchMode.parse(m) for m in block.get("modes", ["gso", "hybrid", "naive"])]
    # a trace is about convergence, so early stopping is off unless asked for
    search_block = {"alpha_stop": None, **block.get("search", {}), "record_trace": True}
    for mode in modes:
        _guard_exhaustive(SearchConfig(**{**search_block, "mode": mode}), data.m, 1, args.force)
    x_in, y_in = data.model_inputs()
    y_model = AmortizedModel(target="y", target_index=k, domain=domain.value,
                             **{**train.estimator_params(), "random_state": RngHandle(seed, (1, k))})
    x_model = AmortizedModel(target="x", target_index=j, domain=domain.value,
                             **{**train.estimator_params(), "random_state": RngHandle(seed, (2, j))})
    y_model.fit(x_in, y_in, data.x_names, data.y_names)
    x_model.fit(x_in, y_in, data.x_names, data.y_names)
    ev = EdgeEvaluator(data, j, k, y_model, x_model)
    ref = _all_abs_stats(ev) if ev.d <= 16 else None
    lines, summary = [], {"x": data.x_names[j], "y": data.y_names[k], "seed": seed, "modes": {}}
    for mode in modes:
        scfg = SearchConfig(**{**search_block, "mode": mode})
        res = search_edge(data, j, k, y_model, x_model, scfg, RngHandle(seed, (3, j, k)), evaluator=ev)
        for rec in res.trace:
            row = {"mode": mode.value, **rec}
            if ref is not None:
                # 1 = the smallest |T| over every subset
                rank = int(np.searchsorted(ref, rec["best_abs_T"] * (1 - 1e-12), side="left")) + 1
                row["rank"] = rank
                row["log_rank"] = math.log10(rank)
            lines.append(json.dumps(row, sort_keys=True))
        summary["modes"][mode.value] = res.to_dict()
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    atomic_write_text(dest / "traces.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _write_json(dest / "trace_summary.json", summary)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "discover": cmd_discover, "bench": cmd_bench, "trace": cmd_trace}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scsl", description="Bipartite causal discovery with amortized GCM tests.")
    parser.add_argument("verb", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--workers", type=int, help="parallel workers")
    parser.add_argument("--force", action="store_true", help="allow expensive exhaustive runs")
    parser.add_argument("--out", default=".", help="output directory")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SCSL_LOG", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("scsl: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None and args.workers < 1:
        print("scsl: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.verb, args.seed)
        return COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"scsl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SCSLError, ArithmeticError, OSError, ValueError) as exc:
        print(f"scsl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
