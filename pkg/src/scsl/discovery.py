"""End-to-end edge discovery with FDR control.

:func:`discover` trains one amortized model per variable (p + m fits in
total, however many subsets are searched), runs :func:`search_edge` for
every requested (X_j, Y_k) pair, and applies Benjamini-Hochberg to the
resulting p-values.  :class:`SCSL` wraps the same pipeline in an sklearn
estimator.

Every random stream is derived from the master seed and a fixed key
(``(1, k)`` for the Y_k model, ``(2, j)`` for the X_j model, ``(3, j, k)``
for the search of edge (j, k)), so results do not depend on the worker
count or on scheduling order.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import chi2_contingency
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .amortized import AmortizedModel, TrainConfig
from .data import DataMatrix, Domain, RngHandle
from .exceptions import ConfigError, DomainViolation, SCSLError
from .search import EdgeResult, SearchConfig, SearchMode, search_edge
from .gcm import EdgeEvaluator

__all__ = [
    "DiscoveryConfig",
    "DiscoveryReport",
    "SCSL",
    "discover",
    "bh_procedure",
    "marginal_pvalues",
]

log = logging.getLogger(__name__)

_KEY_Y, _KEY_X, _KEY_SEARCH = 1, 2, 3


@dataclass(frozen=True)
class DiscoveryConfig:
    """Pipeline settings.  The seeds inside ``train`` and ``search`` are
    ignored; all streams derive from ``seed``."""

    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    fdr_q: float = 0.05
    edge_filter: Optional[tuple] = None
    parallelism: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fdr_q < 1:
            raise ConfigError("fdr_q must lie in (0, 1)")
        if int(self.parallelism) < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.edge_filter is not None:
            object.__setattr__(self, "edge_filter", tuple((int(a), int(b)) for a, b in self.edge_filter))


@dataclass
class DiscoveryReport:
    p_matrix: np.ndarray  # NaN where not tested
    tested: np.ndarray
    edge_results: dict
    rejections: list
    x_names: tuple
    y_names: tuple
    models_meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def failed_edges(self) -> list:
        return [e for e, r in sorted(self.edge_results.items()) if r.error is not None]

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock timing is kept out on purpose."""
        pm = [[None if not self.tested[j, k] or math.isnan(self.p_matrix[j, k]) else float(self.p_matrix[j, k])
               for k in range(self.p_matrix.shape[1])] for j in range(self.p_matrix.shape[0])]
        edges = []
        for (j, k), res in sorted(self.edge_results.items()):
            edges.append({"x": self.x_names[j], "y": self.y_names[k], "j": j, "k": k, **res.to_dict()})
        return {
            "x_names": list(self.x_names),
            "y_names": list(self.y_names),
            "p_matrix": pm,
            "rejections": [{"x": self.x_names[j], "y": self.y_names[k], "j": j, "k": k}
                           for j, k in self.rejections],
            "edges": edges,
            "models": self.models_meta,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def p_matrix_csv(self) -> str:
        lines = [",".join([""] + list(self.y_names))]
        for j, name in enumerate(self.x_names):
            cells = []
            for k in range(len(self.y_names)):
                v = self.p_matrix[j, k]
                cells.append("NA" if not self.tested[j, k] or math.isnan(v) else format(float(v), ".17g"))
            lines.append(",".join([name] + cells))
        return "\n".join(lines) + "\n"

    def traces_jsonl(self) -> str:
        out = []
        for (j, k), res in sorted(self.edge_results.items()):
            for rec in res.trace:
                out.append(json.dumps({"j": j, "k": k, **rec}, sort_keys=True))
        return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# multiple testing


def bh_procedure(p_values: Sequence[float], q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up procedure.

    Returns the (ascending) indices of rejected hypotheses: the r smallest
    p-values, where r is the largest rank with p_(r) <= r q / M.  Ties are
    ordered by original index.
    """
    p = np.asarray(p_values, dtype=float).reshape(-1)
    if not 0 < q < 1:
        raise ConfigError("q must lie in (0, 1)")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainViolation("p-values must lie in [0, 1]")
    M = p.size
    if M == 0:
        return np.empty(0, dtype=int)
    order = np.argsort(p, kind="stable")
    passed = np.flatnonzero(p[order] <= q * np.arange(1, M + 1) / M)
    if passed.size == 0:
        return np.empty(0, dtype=int)
    return np.sort(order[:passed[-1] + 1])


def marginal_pvalues(data: DataMatrix) -> np.ndarray:
    """Chi-square (Yates-corrected) independence p-values for every (X_j, Y_k).

    Tables with an empty margin, e.g. from a constant column, give p = 1.
    """
    if data.domain is not Domain.BINARY:
        raise DomainViolation("marginal tests need binary data")
    x, y = data.response_scale()
    out = np.ones((data.p, data.m))
    for j in range(data.p):
        for k in range(data.m):
            a = float(np.sum((x[:, j] == 1) & (y[:, k] == 1)))
            b = float(np.sum((x[:, j] == 1) & (y[:, k] == 0)))
            c = float(np.sum((x[:, j] == 0) & (y[:, k] == 1)))
            d = float(np.sum((x[:, j] == 0) & (y[:, k] == 0)))
            table = np.array([[a, b], [c, d]])
            if np.any(table.sum(axis=0) == 0) or np.any(table.sum(axis=1) == 0):
                continue
            out[j, k] = float(chi2_contingency(table, correction=True)[1])
    return out


# ---------------------------------------------------------------------------
# pipeline


def _fit_model(data: DataMatrix, kind: str, index: int, train: TrainConfig, seed: int):
    key = _KEY_Y if kind == "y" else _KEY_X
    rng = RngHandle(seed, (key, index))
    X, Y = data.model_inputs()
    params = {**train.estimator_params(), "random_state": rng}
    model = AmortizedModel(target=kind, target_index=index, domain=data.domain.value, **params)
    try:
        return model.fit(X, Y, data.x_names, data.y_names), None
    except SCSLError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _search_edges(data, edges, y_models, x_models, search: SearchConfig, seed: int):
    out = []
    for j, k in edges:
        try:
            ev = EdgeEvaluator(data, j, k, y_models[k], x_models[j])
            res = search_edge(data, j, k, y_models[k], x_models[j], search,
                              RngHandle(seed, (_KEY_SEARCH, j, k)), evaluator=ev)
        except (SCSLError, ArithmeticError) as exc:
            res = EdgeResult(float("nan"), error=f"{type(exc).__name__}: {exc}")
        out.append(((j, k), res))
    return out


def _chunks(items, n_chunks):
    n_chunks = max(1, min(n_chunks, len(items)))
    return [items[i::n_chunks] for i in range(n_chunks)]


def discover(data: DataMatrix, cfg: DiscoveryConfig) -> DiscoveryReport:
    """Run the full pipeline on one dataset (one stratum)."""
    p, m = data.p, data.m
    if cfg.edge_filter is None:
        edges = [(j, k) for j in range(p) for k in range(m)]
    else:
        edges = sorted(set(cfg.edge_filter))
        bad = [(j, k) for j, k in edges if not (0 <= j < p and 0 <= k < m)]
        if bad:
            raise ConfigError(f"edge_filter entries out of range: {bad}")
    workers = int(cfg.parallelism)
    timing = {}

    need_y = sorted({k for _, k in edges})
    need_x = sorted({j for j, _ in edges})
    jobs = [("y", k) for k in need_y] + [("x", j) for j in need_x]
    t0 = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        fitted = Parallel(n_jobs=min(workers, len(jobs)))(
            delayed(_fit_model)(data, kind, idx, cfg.train, cfg.seed) for kind, idx in jobs)
    else:
        fitted = [_fit_model(data, kind, idx, cfg.train, cfg.seed) for kind, idx in jobs]
    timing["train_seconds"] = time.perf_counter() - t0

    y_models, x_models, models_meta = {}, {}, {"n_trainings": len(jobs), "models": {}}
    for (kind, idx), (model, err) in zip(jobs, fitted):
        name = data.y_names[idx] if kind == "y" else data.x_names[idx]
        (y_models if kind == "y" else x_models)[idx] = model
        models_meta["models"][f"{kind}:{name}"] = (
            {"error": err} if model is None else
            {"final_loss": model.loss_history_[-1] if model.loss_history_ else None})

    runnable, results = [], {}
    for j, k in edges:
        if y_models.get(k) is None or x_models.get(j) is None:
            results[(j, k)] = EdgeResult(float("nan"), error="model training failed")
        else:
            runnable.append((j, k))

    t0 = time.perf_counter()
    if workers > 1 and len(runnable) > 1:
        parts = Parallel(n_jobs=workers)(
            delayed(_search_edges)(data, chunk, y_models, x_models, cfg.search, cfg.seed)
            for chunk in _chunks(runnable, workers))
        for part in parts:
            results.update(part)
    else:
        results.update(_search_edges(data, runnable, y_models, x_models, cfg.search, cfg.seed))
    timing["search_seconds"] = time.perf_counter() - t0

    p_matrix = np.full((p, m), np.nan)
    tested = np.zeros((p, m), dtype=bool)
    for (j, k), res in results.items():
        tested[j, k] = True
        p_matrix[j, k] = res.p_value
    ok = [e for e in edges if results[e].error is None]
    rejected = bh_procedure([results[e].p_value for e in ok], cfg.fdr_q) if ok else []
    rejections = [ok[i] for i in rejected]
    for e in edges:
        if results[e].error is not None:
            log.warning("edge %s failed: %s", e, results[e].error)

    config = {
        "train": asdict(cfg.train),
        "search": {**asdict(cfg.search), "mode": cfg.search.mode.value},
        "fdr_q": cfg.fdr_q,
        "seed": cfg.seed,
        "domain": data.domain.value,
        "rng": RngHandle.ALGORITHM,
    }
    config["train"].pop("seed")
    config["search"].pop("seed")
    return DiscoveryReport(p_matrix, tested, results, rejections, data.x_names, data.y_names,
                           models_meta, timing, config)


class SCSL(BaseEstimator):
    """Scalable causal structure learning for a two-layer (X -> Y) graph.

    ``fit(X, Y)`` tests every candidate edge X_j -> Y_k and stores a p-value
    matrix, the Benjamini-Hochberg rejection set at ``fdr_q`` and the
    per-edge search results.

    Attributes
    ----------
    p_values_ : ndarray of shape (p, m)
    adjacency_ : bool ndarray of shape (p, m)
        Edges rejected by BH.
    report_ : DiscoveryReport
    """

    def __init__(self, domain="binary", n_epochs=50, batch_size=128, learning_rate=0.1, p_mask=0.5,
                 l2_lambda=1e-3, search_mode="hybrid", q=400, q1=200, q2=200, tau0=1.0, tau_min=0.1,
                 tau_decay=0.99, theta_lr=0.05, alpha_stop=0.3, fdr_q=0.05, n_jobs=1, random_state=0,
                 record_trace=False):
        self.domain = domain
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.p_mask = p_mask
        self.l2_lambda = l2_lambda
        self.search_mode = search_mode
        self.q = q
        self.q1 = q1
        self.q2 = q2
        self.tau0 = tau0
        self.tau_min = tau_min
        self.tau_decay = tau_decay
        self.theta_lr = theta_lr
        self.alpha_stop = alpha_stop
        self.fdr_q = fdr_q
        self.n_jobs = n_jobs
        self.random_state = random_state
        self.record_trace = record_trace

    def _config(self, edges) -> DiscoveryConfig:
        train = TrainConfig(self.n_epochs, self.batch_size, self.learning_rate, self.p_mask, self.l2_lambda)
        search = SearchConfig(mode=SearchMode.parse(self.search_mode), q=self.q, q1=self.q1, q2=self.q2,
                              tau0=self.tau0, tau_min=self.tau_min, tau_decay=self.tau_decay,
                              theta_lr=self.theta_lr, alpha_stop=self.alpha_stop,
                              record_trace=self.record_trace)
        return DiscoveryConfig(train, search, self.fdr_q, edges, int(self.n_jobs), int(self.random_state))

    def fit(self, X, Y=None, edges=None, x_names=None, y_names=None):
        """Fit on arrays X (n, p) and Y (n, m), or on a DataMatrix passed as X."""
        if isinstance(X, DataMatrix):
            data = X
        else:
            if Y is None:
                raise ConfigError("Y is required unless X is a DataMatrix")
            X = check_array(X, dtype=float)
            Y = check_array(Y, dtype=float)
            data = DataMatrix(X, Y, Domain.parse(self.domain), tuple(x_names or ()), tuple(y_names or ()))
        self.report_ = discover(data, self._config(edges))
        self.p_values_ = self.report_.p_matrix
        self.adjacency_ = np.zeros(self.p_values_.shape, dtype=bool)
        for j, k in self.report_.rejections:
            self.adjacency_[j, k] = True
        self.n_features_in_ = data.p
        return self
