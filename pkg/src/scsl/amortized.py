"""Amortized, mask-conditioned GLMs.

One model per target variable serves every conditioning subset.  During
training each mini-batch draws a Bernoulli(p_mask) keep-bit for every
candidate Y input and, for Y-target models, one X column to drop; masked
inputs are multiplied by zero.  At prediction time the caller supplies the
mask that encodes the conditioning set.

Binary data enter the model on the {-1, +1} scale (so zero means "masked")
and predictions are probabilities of the original value 1.  Continuous data
additionally feed the mask bits themselves as inputs, which lets the model
tell a masked zero from an observed zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import DataMatrix, Domain, RngHandle, as_rng
from .exceptions import ConfigError, DomainViolation, MaskShapeError, NonFiniteLoss

__all__ = [
    "TrainConfig",
    "MaskState",
    "AmortizedModel",
    "train_y_model",
    "train_x_model",
    "predict",
    "predict_soft",
    "fit_count",
]

_FITS = [0]


def fit_count() -> int:
    """Number of AmortizedModel.fit calls made in this process."""
    return _FITS[0]


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.1
    p_mask: float = 0.5
    l2_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if int(self.n_epochs) < 0:
            raise ConfigError("n_epochs must be >= 0")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1")
        if not float(self.learning_rate) > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= float(self.p_mask) <= 1.0:
            raise ConfigError("p_mask must lie in [0, 1]")
        if float(self.l2_lambda) < 0:
            raise ConfigError("l2_lambda must be >= 0")

    def estimator_params(self) -> dict:
        d = asdict(self)
        d["random_state"] = d.pop("seed")
        return d


@dataclass(frozen=True)
class MaskState:
    """Conditioning mask.

    ``y_mask[i]`` is True when the i-th candidate Y input is in the
    conditioning set.  ``x_excluded`` names the X column left out (required
    for Y-target models, implicit for X-target models).
    """

    y_mask: tuple
    x_excluded: Optional[int] = None


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class AmortizedModel(BaseEstimator):
    """Mask-conditioned logistic (binary) or linear (continuous) regression.

    Parameters
    ----------
    target : {"y", "x"}
        Whether the response is a Y column or an X column.
    target_index : int
        Column index of the response within its block.
    domain : {"binary", "continuous"}
    n_epochs, batch_size, learning_rate, p_mask, l2_lambda
        Mini-batch SGD settings.  The step size decays as
        ``learning_rate / sqrt(epoch + 1)``.
    random_state : int
        Seed for the shuffling and mask draws.

    Attributes
    ----------
    coef_ : ndarray
        Weights aligned with ``input_layout_``.
    intercept_ : float
    input_layout_ : list of str
        ``"x:<name>"`` / ``"y:<name>"`` value inputs, followed for
        continuous data by ``"xmask:<name>"`` / ``"ymask:<name>"`` indicators.
    loss_history_ : list of float
        Mean training loss (including the L2 term) per epoch.
    """

    def __init__(self, target="y", target_index=0, domain="binary", n_epochs=50, batch_size=128,
                 learning_rate=0.1, p_mask=0.5, l2_lambda=1e-3, random_state=0):
        self.target = target
        self.target_index = target_index
        self.domain = domain
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.p_mask = p_mask
        self.l2_lambda = l2_lambda
        self.random_state = random_state

    # ------------------------------------------------------------------
    # layout helpers

    def _y_inputs(self, m: int) -> np.ndarray:
        """Indices of the Y columns that are mask-controlled inputs."""
        if self.target == "y":
            return np.array([i for i in range(m) if i != self.target_index], dtype=int)
        return np.arange(m)

    def _validate_params(self, p: int, m: int):
        if self.target not in ("x", "y"):
            raise ConfigError(f"target must be 'x' or 'y', got {self.target!r}")
        limit = m if self.target == "y" else p
        if not 0 <= int(self.target_index) < limit:
            raise ConfigError(f"target_index {self.target_index} out of range for {limit} columns")
        TrainConfig(self.n_epochs, self.batch_size, self.learning_rate, self.p_mask, self.l2_lambda)
        Domain.parse(self.domain)

    # ------------------------------------------------------------------

    def fit(self, X, Y, x_names: Optional[Sequence[str]] = None, y_names: Optional[Sequence[str]] = None):
        """Train on model-scale inputs (binary data already in {-1, +1})."""
        X = check_array(X, dtype=float)
        Y = check_array(Y, dtype=float)
        if X.shape[0] != Y.shape[0]:
            raise ConfigError("X and Y must have the same number of rows")
        n, p = X.shape
        m = Y.shape[1]
        self._validate_params(p, m)
        domain = Domain.parse(self.domain)
        binary = domain is Domain.BINARY
        if binary and not (np.all(np.isin(X, (-1.0, 1.0))) and np.all(np.isin(Y, (-1.0, 1.0)))):
            raise DomainViolation("binary inputs must be recoded to {-1, +1} before training")
        _FITS[0] += 1

        x_names = list(x_names) if x_names is not None else [f"X{i + 1}" for i in range(p)]
        y_names = list(y_names) if y_names is not None else [f"Y{i + 1}" for i in range(m)]
        y_in = self._y_inputs(m)
        d = y_in.size
        j = int(self.target_index)

        if self.target == "y":
            t = Y[:, j].copy()
        else:
            t = X[:, j].copy()
        if binary:
            t = (t + 1.0) / 2.0
            self.x_scale_ = np.ones(p)
            self.y_scale_ = np.ones(m)
            self.target_center_, self.target_scale_ = 0.0, 1.0
        else:
            self.x_scale_ = _safe_scale(X)
            self.y_scale_ = _safe_scale(Y)
            self.target_center_ = float(np.mean(t))
            self.target_scale_ = float(_safe_scale(t[:, None])[0])
            t = (t - self.target_center_) / self.target_scale_
        Xs = X / self.x_scale_
        Ys = Y[:, y_in] / self.y_scale_[y_in]

        layout = [f"x:{s}" for s in x_names] + [f"y:{y_names[i]}" for i in y_in]
        if not binary:
            layout += [f"xmask:{s}" for s in x_names] + [f"ymask:{y_names[i]}" for i in y_in]
        n_feat = len(layout)
        w = np.zeros(n_feat)
        b = 0.0
        lam = float(self.l2_lambda)
        rng = as_rng(self.random_state)
        batch = int(self.batch_size)
        n_batches = max(1, math.ceil(n / batch))
        history = []

        for epoch in range(int(self.n_epochs)):
            lr = float(self.learning_rate) / math.sqrt(epoch + 1.0)
            order = rng.permutation(n)
            total = 0.0
            for bi in range(n_batches):
                rows = order[bi * batch:(bi + 1) * batch]
                if rows.size == 0:
                    continue
                keep_y = (rng.random(d) < float(self.p_mask)).astype(float)
                keep_x = np.ones(p)
                if self.target == "y":
                    keep_x[rng.integers(p)] = 0.0
                else:
                    keep_x[j] = 0.0
                blocks = [Xs[rows] * keep_x, Ys[rows] * keep_y]
                if not binary:
                    blocks += [np.broadcast_to(keep_x, (rows.size, p)), np.broadcast_to(keep_y, (rows.size, d))]
                F = np.hstack(blocks)
                tb = t[rows]
                with np.errstate(over="ignore", invalid="ignore"):
                    z = F @ w + b
                    if binary:
                        resid = _sigmoid(z) - tb
                        data_loss = float(np.mean(np.logaddexp(0.0, z) - tb * z))
                    else:
                        resid = z - tb
                        data_loss = 0.5 * float(np.mean(resid ** 2))
                    loss = data_loss + 0.5 * lam * float(w @ w)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss} in epoch {epoch}; lower the learning rate")
                total += loss * rows.size
                w = w - lr * (F.T @ resid / rows.size + lam * w)
                b = b - lr * float(np.mean(resid))
            history.append(total / n)
            if not (np.all(np.isfinite(w)) and math.isfinite(b)):
                raise NonFiniteLoss(f"weights diverged in epoch {epoch}; lower the learning rate")

        self.coef_ = w
        self.intercept_ = float(b)
        self.input_layout_ = layout
        self.loss_history_ = history
        self.n_x_ = p
        self.n_y_ = m
        self.n_features_in_ = n_feat
        return self

    # ------------------------------------------------------------------
    # prediction

    @property
    def mask_length(self) -> int:
        check_is_fitted(self, "coef_")
        return self.n_y_ - 1 if self.target == "y" else self.n_y_

    def _resolve_excluded(self, x_excluded) -> int:
        if self.target == "y":
            if x_excluded is None:
                raise MaskShapeError("a Y-target model needs x_excluded")
            if not 0 <= int(x_excluded) < self.n_x_:
                raise MaskShapeError(f"x_excluded={x_excluded} is not a valid X column")
            return int(x_excluded)
        if x_excluded is not None and int(x_excluded) != int(self.target_index):
            raise MaskShapeError("an X-target model always excludes its own target column")
        return int(self.target_index)

    def linear_parts(self, X, Y, x_excluded=None):
        """Decompose the model output as ``link(base + A @ s)``.

        ``s`` is the (soft) Y mask.  Returns ``(base, A)`` with shapes
        (n,) and (n, mask_length), computed once and reused for every mask.
        """
        check_is_fitted(self, "coef_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        p, m = self.n_x_, self.n_y_
        if X.shape[1] != p or Y.shape[1] != m:
            raise MaskShapeError(f"expected rows with {p} X and {m} Y values")
        excl = self._resolve_excluded(x_excluded)
        y_in = self._y_inputs(m)
        d = y_in.size
        w = self.coef_
        wx, wy = w[:p].copy(), w[p:p + d]
        keep_x = np.ones(p)
        keep_x[excl] = 0.0
        base = (X / self.x_scale_) @ (wx * keep_x) + self.intercept_
        A = (Y[:, y_in] / self.y_scale_[y_in]) * wy
        if Domain.parse(self.domain) is Domain.CONTINUOUS:
            wxm, wym = w[p + d:2 * p + d], w[2 * p + d:]
            base = base + float(keep_x @ wxm)
            A = A + wym
            base = self.target_center_ + self.target_scale_ * base
            A = self.target_scale_ * A
        return base, A

    def _check_mask(self, mask, soft: bool) -> np.ndarray:
        s = np.asarray(mask, dtype=float).reshape(-1)
        if s.size != self.mask_length:
            raise MaskShapeError(f"mask has length {s.size}, model expects {self.mask_length}")
        if soft:
            if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
                raise DomainViolation("soft mask entries must lie in [0, 1]")
        elif not np.all(np.isin(s, (0.0, 1.0))):
            raise MaskShapeError("hard mask entries must be 0/1")
        return s

    def _link(self, z):
        if Domain.parse(self.domain) is Domain.BINARY:
            return _sigmoid(z)
        return z

    def predict_soft(self, X, Y, soft_mask, x_excluded=None, return_grad=False):
        """Estimate at a fractional mask; optionally also d estimate / d mask (n x d)."""
        s = self._check_mask(soft_mask, soft=True)
        base, A = self.linear_parts(X, Y, x_excluded)
        z = base + A @ s
        out = self._link(z)
        if not return_grad:
            return out
        if Domain.parse(self.domain) is Domain.BINARY:
            grad = (out * (1.0 - out))[:, None] * A
        else:
            grad = np.array(A, copy=True)
        return out, grad

    def predict(self, X, Y, y_mask, x_excluded=None):
        """Estimate E[target | X without the excluded column, masked Y]."""
        s = self._check_mask(y_mask, soft=False)
        return self.predict_soft(X, Y, s, x_excluded)

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "target": {"kind": self.target, "index": int(self.target_index)},
            "domain": Domain.parse(self.domain).value,
            "input_layout": list(self.input_layout_),
            "weights": [float(v) for v in self.coef_],
            "bias": self.intercept_,
            "scaling": {
                "x": [float(v) for v in self.x_scale_],
                "y": [float(v) for v in self.y_scale_],
                "target_center": self.target_center_,
                "target_scale": self.target_scale_,
            },
            "training_meta": {
                "epochs": int(self.n_epochs),
                "batch_size": int(self.batch_size),
                "learning_rate": float(self.learning_rate),
                "p_mask": float(self.p_mask),
                "l2_lambda": float(self.l2_lambda),
                "seed": _seed_repr(self.random_state),
                "loss_history": [float(v) for v in self.loss_history_],
            },
            "n_x": self.n_x_,
            "n_y": self.n_y_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AmortizedModel":
        meta = d["training_meta"]
        model = cls(target=d["target"]["kind"], target_index=d["target"]["index"], domain=d["domain"],
                    n_epochs=meta["epochs"], batch_size=meta["batch_size"],
                    learning_rate=meta["learning_rate"], p_mask=meta["p_mask"],
                    l2_lambda=meta["l2_lambda"], random_state=meta["seed"])
        model.coef_ = np.asarray(d["weights"], dtype=float)
        model.intercept_ = float(d["bias"])
        model.input_layout_ = list(d["input_layout"])
        if model.coef_.size != len(model.input_layout_):
            raise ConfigError("weights and input_layout lengths differ")
        sc = d["scaling"]
        model.x_scale_ = np.asarray(sc["x"], dtype=float)
        model.y_scale_ = np.asarray(sc["y"], dtype=float)
        model.target_center_ = float(sc["target_center"])
        model.target_scale_ = float(sc["target_scale"])
        model.loss_history_ = list(meta.get("loss_history", []))
        model.n_x_ = int(d["n_x"])
        model.n_y_ = int(d["n_y"])
        model.n_features_in_ = model.coef_.size
        return model


def _safe_scale(A) -> np.ndarray:
    sd = np.std(A, axis=0)
    return np.where(sd > 0, sd, 1.0)


def _seed_repr(rs):
    if isinstance(rs, RngHandle):
        return {"seed": rs.seed, "key": list(rs.key)}
    return rs


def _train(data: DataMatrix, kind: str, index: int, cfg: TrainConfig, rng) -> AmortizedModel:
    X, Y = data.model_inputs()
    model = AmortizedModel(target=kind, target_index=index, domain=data.domain.value,
                           **{**cfg.estimator_params(), "random_state": rng})
    return model.fit(X, Y, data.x_names, data.y_names)


def train_y_model(data: DataMatrix, k: int, cfg: TrainConfig, rng=None) -> AmortizedModel:
    """Fit the amortized model for Y_k (0-based).  ``rng`` defaults to ``cfg.seed``."""
    if not 0 <= int(k) < data.m:
        raise ConfigError(f"k={k} out of range for {data.m} Y columns")
    return _train(data, "y", int(k), cfg, as_rng(cfg.seed if rng is None else rng))


def train_x_model(data: DataMatrix, j: int, cfg: TrainConfig, rng=None) -> AmortizedModel:
    """Fit the amortized model for X_j (0-based); X_j is never one of its own inputs."""
    if not 0 <= int(j) < data.p:
        raise ConfigError(f"j={j} out of range for {data.p} X columns")
    return _train(data, "x", int(j), cfg, as_rng(cfg.seed if rng is None else rng))


def predict(model: AmortizedModel, x_row, y_row, mask: MaskState):
    """Row-level convenience wrapper; returns a scalar for 1-D rows."""
    out = model.predict(x_row, y_row, mask.y_mask, mask.x_excluded)
    return float(out[0]) if np.ndim(x_row) == 1 else out


def predict_soft(model: AmortizedModel, x_row, y_row, soft_y_mask, x_excluded=None, return_grad=False):
    res = model.predict_soft(x_row, y_row, soft_y_mask, x_excluded, return_grad=return_grad)
    if np.ndim(x_row) != 1:
        return res
    if return_grad:
        return float(res[0][0]), res[1][0]
    return float(res[0])
