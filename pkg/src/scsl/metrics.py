"""Benchmark metrics for a p-value matrix against a known graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ShapeMismatch

__all__ = ["BenchMetrics", "default_thresholds", "compute_metrics", "confusion", "f1_score"]

F1_THRESHOLD = 0.1


def default_thresholds() -> np.ndarray:
    """50 log-spaced thresholds in [1e-4, 0.5]."""
    return np.geomspace(1e-4, 0.5, 50)


@dataclass
class BenchMetrics:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    fpr_ratio: np.ndarray
    f1_at_threshold: float
    precision: float
    recall: float
    n_true: int
    n_null: int
    wall_seconds: Optional[float] = None

    def to_dict(self, with_wall: bool = False) -> dict:
        d = {
            "thresholds": self.thresholds.tolist(),
            "tpr": self.tpr.tolist(),
            "fpr": self.fpr.tolist(),
            "fpr_ratio": self.fpr_ratio.tolist(),
            "f1": self.f1_at_threshold,
            "precision": self.precision,
            "recall": self.recall,
            "n_true": self.n_true,
            "n_null": self.n_null,
        }
        if with_wall:
            d["wall_seconds"] = self.wall_seconds
        return d


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return tp, fp, fn, tn


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def compute_metrics(p_matrix, truth, thresholds=None, f1_threshold: float = F1_THRESHOLD,
                    wall_seconds: Optional[float] = None) -> BenchMetrics:
    """TPR/FPR per threshold (edge drawn when p <= threshold) and F1 at ``f1_threshold``.

    NaN entries (untested or failed edges) are left out of every count.
    """
    P = np.asarray(p_matrix, dtype=float)
    T = np.asarray(getattr(truth, "adjacency", truth), dtype=bool)
    if P.shape != T.shape:
        raise ShapeMismatch(f"p_matrix is {P.shape} but truth is {T.shape}")
    th = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    if th.ndim != 1 or np.any(np.diff(th) <= 0):
        raise ConfigError("thresholds must be strictly increasing")
    keep = ~np.isnan(P)
    p_true, p_null = P[keep & T], P[keep & ~T]
    n_true, n_null = p_true.size, p_null.size
    tpr = np.array([np.sum(p_true <= t) / n_true if n_true else 0.0 for t in th])
    fpr = np.array([np.sum(p_null <= t) / n_null if n_null else 0.0 for t in th])
    tp, fp, fn, _ = confusion((P <= f1_threshold) & keep, T & keep)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return BenchMetrics(th, tpr, fpr, fpr / th, f1_score(tp, fp, fn), precision, recall,
                        n_true, n_null, wall_seconds)
