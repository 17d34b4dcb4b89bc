"""Generalized Covariance Measure test for X_j _||_ Y_k | S, X_{-j}.

The statistic is the normalized mean of the residual products
``R_i = (X_j - Xhat_j)(Y_k - Yhat_k)``; it is asymptotically N(0, 1) under
the null and the two-sided normal tail gives the p-value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .amortized import AmortizedModel
from .data import DataMatrix, Domain
from .exceptions import ConfigError, DegenerateVariance, LengthMismatch, MaskShapeError

__all__ = [
    "GcmResult",
    "residual_products",
    "gcm_statistic",
    "gcm_pvalue",
    "gcm_test",
    "EdgeEvaluator",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GcmResult:
    statistic: float
    p_value: float
    n_used: int
    a_f: float
    a_g: float

    def to_dict(self) -> dict:
        return asdict(self)


def residual_products(x_col, x_hat, y_col, y_hat) -> np.ndarray:
    vecs = [np.asarray(v, dtype=float).reshape(-1) for v in (x_col, x_hat, y_col, y_hat)]
    n = vecs[0].size
    if any(v.size != n for v in vecs):
        raise LengthMismatch("x_col, x_hat, y_col and y_hat must have equal length")
    if n < 2:
        raise LengthMismatch("at least two samples are required")
    return (vecs[0] - vecs[1]) * (vecs[2] - vecs[3])


def gcm_statistic(r) -> float:
    """sqrt(n) * mean(R) / sd(R), with sd the 1/n standard deviation (two-pass)."""
    r = np.asarray(r, dtype=float).reshape(-1)
    n = r.size
    if n < 2:
        raise LengthMismatch("at least two samples are required")
    mean = float(np.mean(r))
    var = float(np.mean((r - mean) ** 2))
    if not var > 0.0 or r.min() == r.max():
        raise DegenerateVariance("residual products are constant", constant=float(r[0]))
    return math.sqrt(n) * mean / math.sqrt(var)


def gcm_pvalue(t: float) -> float:
    """Two-sided normal tail 2 * (1 - Phi(|t|)), evaluated as erfc(|t| / sqrt 2)."""
    return math.erfc(abs(float(t)) / _SQRT2)


def _stat_grad(r):
    """T and dT/dR for the GCM statistic."""
    n = r.size
    mean = float(np.mean(r))
    c = r - mean
    var = float(np.mean(c ** 2))
    if not var > 0.0 or r.min() == r.max():
        raise DegenerateVariance("residual products are constant", constant=float(r[0]))
    sd = math.sqrt(var)
    t = math.sqrt(n) * mean / sd
    dt_dr = math.sqrt(n) * (1.0 / (n * sd) - mean * c / (n * sd ** 3))
    return t, dt_dr


class EdgeEvaluator:
    """GCM evaluations for one (X_j, Y_k) pair at arbitrary (soft) subsets.

    Both models are reduced once to ``link(base + A @ s)`` form, so each
    evaluation costs two n x (m-1) matrix-vector products.  Subsets are
    vectors over Y_{-k} in column order.
    """

    def __init__(self, data: DataMatrix, j: int, k: int, y_model: AmortizedModel, x_model: AmortizedModel):
        if not (0 <= j < data.p and 0 <= k < data.m):
            raise ConfigError(f"edge ({j}, {k}) is out of range")
        if y_model.target != "y" or int(y_model.target_index) != k:
            raise ConfigError(f"y_model does not target Y_{k}")
        if x_model.target != "x" or int(x_model.target_index) != j:
            raise ConfigError(f"x_model does not target X_{j}")
        self.j, self.k = j, k
        self.n = data.n
        self.d = data.m - 1
        x_in, y_in = data.model_inputs()
        x_resp, y_resp = data.response_scale()
        self._x_target = np.ascontiguousarray(x_resp[:, j])
        self._y_target = np.ascontiguousarray(y_resp[:, k])
        self._binary = data.domain is Domain.BINARY
        self._base_y, self._A_y = y_model.linear_parts(x_in, y_in, x_excluded=j)
        base_x, A_x = x_model.linear_parts(x_in, y_in)
        others = [i for i in range(data.m) if i != k]
        self._base_x = base_x
        self._A_x = np.ascontiguousarray(A_x[:, others])

    def _link(self, z):
        if self._binary:
            out = np.empty_like(z)
            pos = z >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            out[~pos] = ez / (1.0 + ez)
            return out
        return z

    def _check(self, s, soft=True) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1)
        if s.size != self.d:
            raise MaskShapeError(f"subset has length {s.size}, expected {self.d}")
        return s

    def predictions(self, s):
        s = self._check(s)
        return self._link(self._base_x + self._A_x @ s), self._link(self._base_y + self._A_y @ s)

    def residuals(self, s):
        x_hat, y_hat = self.predictions(s)
        return self._x_target - x_hat, self._y_target - y_hat

    def hard(self, subset) -> GcmResult:
        """GCM test at a 0/1 subset.  Products that are identically zero give p = 1."""
        s = self._check(subset)
        if not np.all(np.isin(s, (0.0, 1.0))):
            raise MaskShapeError("hard subsets must be 0/1")
        rx, ry = self.residuals(s)
        r = rx * ry
        a_f, a_g = float(np.mean(rx ** 2)), float(np.mean(ry ** 2))
        try:
            t = gcm_statistic(r)
        except DegenerateVariance as exc:
            if exc.constant != 0.0:
                raise
            return GcmResult(0.0, 1.0, self.n, a_f, a_g)
        return GcmResult(t, gcm_pvalue(t), self.n, a_f, a_g)

    def statistic(self, s) -> float:
        rx, ry = self.residuals(s)
        return gcm_statistic(rx * ry)

    def relaxed(self, soft_subset):
        """Return (T, d|T|/d soft_subset) with soft-masked predictions."""
        s = self._check(soft_subset)
        zx = self._base_x + self._A_x @ s
        zy = self._base_y + self._A_y @ s
        x_hat, y_hat = self._link(zx), self._link(zy)
        rx, ry = self._x_target - x_hat, self._y_target - y_hat
        t, dt_dr = _stat_grad(rx * ry)
        if self._binary:
            gx = (x_hat * (1.0 - x_hat))[:, None] * self._A_x
            gy = (y_hat * (1.0 - y_hat))[:, None] * self._A_y
        else:
            gx, gy = self._A_x, self._A_y
        # dR/ds = -(ry * dxhat/ds + rx * dyhat/ds)
        dt_ds = -((dt_dr * ry) @ gx + (dt_dr * rx) @ gy)
        return t, float(np.sign(t)) * dt_ds


def gcm_test(data: DataMatrix, j: int, k: int, subset, y_model: AmortizedModel, x_model: AmortizedModel) -> GcmResult:
    """One GCM test of X_j _||_ Y_k given the subset of Y_{-k} and X_{-j}."""
    return EdgeEvaluator(data, j, k, y_model, x_model).hard(subset)
