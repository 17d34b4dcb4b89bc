"""Search over conditioning subsets S of Y_{-k} for the largest GCM p-value.

The edge p-value is bounded by the maximum over S of the conditional
independence p-values, so every mode returns the max over the subsets it
actually evaluated.  Subsets are boolean vectors over Y_{-k}; internally a
subset is also identified by its integer code (bit i set iff coordinate i is
in S).

Modes
-----
gso
    ``q`` Gumbel-Softmax gradient steps on the inclusion probabilities
    ``theta`` (minimizing |T| through the relaxation), hard-evaluating the
    subset sampled at each step, then the thresholded subset
    ``{i: theta_i > 0.5}``.
hybrid
    ``q1`` such steps, then ``q2`` unvisited subsets drawn without
    replacement with probability proportional to
    ``prod_i theta_i^[i in S] (1 - theta_i)^[i not in S]``.
naive
    ``q2`` subsets drawn uniformly without replacement.
exhaustive
    Every subset, in code order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .amortized import AmortizedModel
from .data import DataMatrix, as_rng
from .exceptions import ConfigError, DegenerateVariance, DomainViolation, LengthMismatch
from .gcm import EdgeEvaluator

__all__ = [
    "SearchMode",
    "SearchConfig",
    "SearchState",
    "EdgeResult",
    "gumbel_relax",
    "gumbel_relax_grad",
    "subset_weight",
    "relaxed_statistic_grad",
    "temperature",
    "theta_step",
    "search_edge",
    "subset_code",
    "code_to_subset",
]


class SearchMode(str, enum.Enum):
    GSO = "gso"
    HYBRID = "hybrid"
    NAIVE = "naive"
    EXHAUSTIVE = "exhaustive"

    @classmethod
    def parse(cls, value) -> "SearchMode":
        if isinstance(value, SearchMode):
            return value
        aliases = {"naiverandom": "naive", "naive_random": "naive", "random": "naive"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown search mode {value!r}") from None


@dataclass(frozen=True)
class SearchConfig:
    """Search budget and annealing schedule.

    ``alpha_stop=None`` disables early stopping.  Hybrid stage 2 enumerates
    all subset weights when ``|Y_{-k}| <= enumerate_limit`` and otherwise
    falls back to rejection sampling from independent Bernoulli(theta)
    draws, giving up after ``50 * q2`` attempts.
    """

    mode: SearchMode = SearchMode.HYBRID
    q: int = 400
    q1: int = 200
    q2: int = 200
    tau0: float = 1.0
    tau_min: float = 0.1
    tau_decay: float = 0.99
    theta_lr: float = 0.05
    theta_floor: float = 1e-3
    alpha_stop: Optional[float] = 0.3
    enumerate_limit: int = 16
    record_trace: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SearchMode.parse(self.mode))
        for name in ("q", "q1", "q2"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not (self.tau0 >= self.tau_min > 0):
            raise ConfigError("need tau0 >= tau_min > 0")
        if not 0 < self.tau_decay <= 1:
            raise ConfigError("tau_decay must lie in (0, 1]")
        if not self.theta_lr > 0:
            raise ConfigError("theta_lr must be > 0")
        if not 0 < self.theta_floor < 0.5:
            raise ConfigError("theta_floor must lie in (0, 0.5)")
        if self.alpha_stop is not None and not 0 < self.alpha_stop <= 1:
            raise ConfigError("alpha_stop must lie in (0, 1] or be None")


@dataclass
class SearchState:
    theta: np.ndarray
    tau: float
    visited: dict = field(default_factory=dict)  # code -> (T, p)
    iteration: int = 0


@dataclass
class EdgeResult:
    p_value: float
    best_subset: Optional[tuple] = None
    early_stopped: bool = False
    n_evaluations: int = 0
    statistic: Optional[float] = None
    trace: list = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self, with_trace: bool = False) -> dict:
        d = {
            "p_value": self.p_value,
            "best_subset": None if self.best_subset is None else [bool(b) for b in self.best_subset],
            "early_stopped": self.early_stopped,
            "n_evaluations": self.n_evaluations,
            "statistic": self.statistic,
            "error": self.error,
        }
        if with_trace:
            d["trace"] = self.trace
        return d


# ---------------------------------------------------------------------------
# relaxation primitives


def _check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if np.any(~(theta > 0.0)) or np.any(~(theta < 1.0)):
        raise DomainViolation("theta entries must lie strictly inside (0, 1)")
    return theta


def gumbel_relax(theta, g1, g2, tau: float) -> np.ndarray:
    """Binary-concrete sample: softmax of (log theta + g1, log(1 - theta) + g2) / tau, first entry."""
    theta = _check_theta(theta)
    if not tau > 0:
        raise DomainViolation("tau must be > 0")
    z = (np.log(theta) + np.asarray(g1, float) - np.log1p(-theta) - np.asarray(g2, float)) / tau
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gumbel_relax_grad(theta, s_soft, tau: float) -> np.ndarray:
    """Elementwise d s_soft / d theta for :func:`gumbel_relax`."""
    theta = np.asarray(theta, dtype=float)
    return s_soft * (1.0 - s_soft) / tau * (1.0 / theta + 1.0 / (1.0 - theta))


def subset_weight(theta, subset) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    s = np.asarray(subset, dtype=bool).reshape(-1)
    if theta.size != s.size:
        raise LengthMismatch("theta and subset must have equal length")
    return float(np.exp(np.sum(np.where(s, np.log(theta), np.log1p(-theta)))))


def relaxed_statistic_grad(data: DataMatrix, j: int, k: int, soft_subset,
                           y_model: AmortizedModel, x_model: AmortizedModel):
    """(T, d|T|/d soft_subset) at a fractional subset."""
    return EdgeEvaluator(data, j, k, y_model, x_model).relaxed(soft_subset)


def temperature(cfg: SearchConfig, t: int) -> float:
    """Temperature used at (0-based) relaxed iteration t."""
    return max(cfg.tau_min, cfg.tau0 * cfg.tau_decay ** t)


def theta_step(theta, grad, cfg: SearchConfig) -> np.ndarray:
    return np.clip(np.asarray(theta) - cfg.theta_lr * np.asarray(grad), cfg.theta_floor, 1.0 - cfg.theta_floor)


def subset_code(subset) -> int:
    return sum(1 << i for i, b in enumerate(np.asarray(subset, dtype=bool)) if b)


def code_to_subset(code: int, d: int) -> np.ndarray:
    return np.array([(code >> i) & 1 for i in range(d)], dtype=bool)


def _bitstring(code: int, d: int) -> str:
    return "".join("1" if (code >> i) & 1 else "0" for i in range(d))


def _gumbel(rng, size) -> np.ndarray:
    u = rng.random(size)
    u = np.maximum(u, np.finfo(float).tiny)
    return -np.log(-np.log(u))


# ---------------------------------------------------------------------------


class _EarlyStop(Exception):
    pass


class _Search:
    def __init__(self, evaluator: EdgeEvaluator, cfg: SearchConfig, rng):
        self.ev = evaluator
        self.cfg = cfg
        self.rng = rng
        self.d = evaluator.d
        self.state = SearchState(theta=np.full(self.d, 0.5), tau=cfg.tau0)
        self.trace = []
        self.n_evals = 0
        self.best_abs_t = math.inf

    def evaluate(self, code: int, stage: str):
        visited = self.state.visited
        if code in visited:
            return visited[code]
        res = self.ev.hard(code_to_subset(code, self.d).astype(float))
        visited[code] = (res.statistic, res.p_value)
        self.n_evals += 1
        self.best_abs_t = min(self.best_abs_t, abs(res.statistic))
        if self.cfg.record_trace:
            self.trace.append({
                "iter": self.n_evals - 1,
                "stage": stage,
                "subset": _bitstring(code, self.d),
                "T": res.statistic,
                "p": res.p_value,
                "best_abs_T": self.best_abs_t,
            })
        if self.cfg.alpha_stop is not None and res.p_value > self.cfg.alpha_stop:
            raise _EarlyStop
        return visited[code]

    def relaxed_phase(self, iters: int):
        st = self.state
        for t in range(iters):
            st.tau = temperature(self.cfg, t)
            g1 = _gumbel(self.rng, self.d)
            g2 = _gumbel(self.rng, self.d)
            s_soft = gumbel_relax(st.theta, g1, g2, st.tau)
            self.evaluate(subset_code(s_soft > 0.5), "relaxed")
            try:
                _, grad_s = self.ev.relaxed(s_soft)
            except DegenerateVariance:
                grad_s = np.zeros(self.d)
            st.theta = theta_step(st.theta, grad_s * gumbel_relax_grad(st.theta, s_soft, st.tau), self.cfg)
            st.iteration = t + 1
        st.tau = temperature(self.cfg, iters)

    def sample_phase(self, theta, count: int):
        if count <= 0:
            return
        visited = self.state.visited
        if self.d <= self.cfg.enumerate_limit:
            codes = np.arange(1 << self.d, dtype=np.int64)
            bits = ((codes[:, None] >> np.arange(self.d)) & 1).astype(bool)
            logw = np.where(bits, np.log(theta), np.log1p(-theta)).sum(axis=1)
            fresh = np.array([int(c) not in visited for c in codes], dtype=bool)
            # Gumbel-top-k: ordering by log w + Gumbel is sequential
            # weighted sampling without replacement
            keys = logw + _gumbel(self.rng, codes.size)
            keys[~fresh] = -np.inf
            order = np.argsort(-keys, kind="stable")[:min(count, int(fresh.sum()))]
            for c in order:
                self.evaluate(int(codes[c]), "sample")
            return
        done = 0
        for _ in range(50 * count):
            if done >= count:
                break
            code = subset_code(self.rng.random(self.d) < theta)
            if code in visited:
                continue
            self.evaluate(code, "sample")
            done += 1

    def result(self, early: bool) -> EdgeResult:
        if early:
            return EdgeResult(1.0, None, True, self.n_evals, None, self.trace)
        visited = self.state.visited
        best = max(visited, key=lambda c: (visited[c][1], -abs(visited[c][0]), -c))
        t, p = visited[best]
        return EdgeResult(p, tuple(bool(b) for b in code_to_subset(best, self.d)), False,
                          self.n_evals, t, self.trace)


def search_edge(data: DataMatrix, j: int, k: int, y_model: AmortizedModel, x_model: AmortizedModel,
                cfg: SearchConfig, rng=None, evaluator: Optional[EdgeEvaluator] = None) -> EdgeResult:
    """Search conditioning subsets for edge X_j -> Y_k and return its p-value bound.

    If any evaluated subset has p > ``cfg.alpha_stop`` the search ends at once
    with p-value 1.  ``rng`` defaults to ``cfg.seed``.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    ev = evaluator if evaluator is not None else EdgeEvaluator(data, j, k, y_model, x_model)
    s = _Search(ev, cfg, rng)
    mode = cfg.mode
    try:
        if s.d == 0:
            s.evaluate(0, "exhaustive")
        elif mode is SearchMode.EXHAUSTIVE:
            for code in range(1 << s.d):
                s.evaluate(code, "exhaustive")
        elif mode is SearchMode.GSO:
            s.relaxed_phase(int(cfg.q))
            s.evaluate(subset_code(s.state.theta > 0.5), "final")
        elif mode is SearchMode.HYBRID:
            s.relaxed_phase(int(cfg.q1))
            s.sample_phase(s.state.theta, int(cfg.q2))
        elif mode is SearchMode.NAIVE:
            s.sample_phase(np.full(s.d, 0.5), int(cfg.q2))
        if not s.state.visited:
            # a zero budget still has to test something
            s.evaluate(0, "fallback")
    except _EarlyStop:
        return s.result(early=True)
    return s.result(early=False)
