"""Semi-synthetic datasets with known ground truth.

Two constructions are provided.  ``gen_real_confounding`` keeps the joint
distribution of the observed Y rows and only synthesizes how X drives them,
by resampling whole Y rows with weights given by a logistic (or Gaussian)
response model.  ``gen_synth_confounding`` generates every Y column from
scratch, one at a time, letting earlier Y columns act as extra parents with
probability ``conf_p``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import DataMatrix, Domain, GroundTruthGraph, RngHandle, as_rng
from .exceptions import ConfigError, DegenerateLikelihood, DomainViolation, LengthMismatch

__all__ = [
    "GenConfig",
    "SemiSynthOutput",
    "logistic_likelihood",
    "gen_real_confounding",
    "gen_synth_confounding",
    "gen_continuous_variants",
    "simulate_x",
    "simulate_base_dataset",
]


@dataclass(frozen=True)
class GenConfig:
    """Generator settings.

    ``fixed_coef`` pins every beta and gamma to one value instead of drawing
    them from Normal(coef_mean, coef_sd); it exists for controlled tests.
    """

    k_parents: int = 2
    conf_p: float = 0.0
    coef_mean: float = 2.0
    coef_sd: float = 1.0
    m_targets: Optional[int] = None
    noise_sd: float = 1.0
    fixed_coef: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.k_parents) < 1:
            raise ConfigError("k_parents must be >= 1")
        if not 0.0 <= float(self.conf_p) <= 1.0:
            raise ConfigError(f"conf_p must lie in [0, 1], got {self.conf_p}")
        if not float(self.coef_sd) > 0:
            raise ConfigError("coef_sd must be > 0")
        if self.m_targets is not None and int(self.m_targets) < 1:
            raise ConfigError("m_targets must be >= 1")
        if float(self.noise_sd) < 0:
            raise ConfigError("noise_sd must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SemiSynthOutput:
    data: DataMatrix
    truth: GroundTruthGraph
    y_internal_edges: np.ndarray
    coefficients: list = field(default_factory=list)
    config: Optional[GenConfig] = None
    generator: str = ""

    def sidecar(self) -> dict:
        """JSON-ready record of the ground truth and how it was produced."""
        return {
            "generator": self.generator,
            "x_names": list(self.data.x_names),
            "y_names": list(self.data.y_names),
            "truth": self.truth.adjacency.astype(int).tolist(),
            "y_internal_edges": np.asarray(self.y_internal_edges).astype(int).tolist(),
            "coefficients": self.coefficients,
            "config": self.config.to_dict() if self.config else None,
            "seed": self.config.seed if self.config else None,
            "rng": RngHandle.ALGORITHM,
        }

    def sidecar_json(self) -> str:
        return json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n"


def logistic_likelihood(beta, x_star) -> float:
    """Return 1 / (1 + exp(-beta . x_star))."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if beta.shape != x_star.shape:
        raise LengthMismatch(f"beta has length {beta.size} but x_star has {x_star.size}")
    z = float(beta @ x_star)
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


def _as_x(x_data) -> np.ndarray:
    if isinstance(x_data, DataMatrix):
        x = x_data.response_scale()[0]
    else:
        x = np.asarray(x_data, dtype=float)
    if x.ndim != 2:
        raise ConfigError("x_data must be a 2-D matrix")
    if not np.all(np.isin(x, (0.0, 1.0))):
        raise DomainViolation("x_data must be binary {0, 1}")
    return x


def _x_names(x_data, p):
    if isinstance(x_data, DataMatrix):
        return x_data.x_names
    return tuple(f"X{j + 1}" for j in range(p))


def _draw_coefs(cfg: GenConfig, rng: RngHandle, size: int) -> np.ndarray:
    if cfg.fixed_coef is not None:
        return np.full(size, float(cfg.fixed_coef))
    return rng.normal(cfg.coef_mean, cfg.coef_sd, size=size)


def _pick_parents(cfg: GenConfig, rng: RngHandle, p: int) -> np.ndarray:
    if cfg.k_parents > p:
        raise ConfigError(f"k_parents={cfg.k_parents} exceeds the number of X columns ({p})")
    return np.sort(rng.choice(p, size=cfg.k_parents, replace=False))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def gen_real_confounding(data: DataMatrix, cfg: GenConfig, rng, response: str = "logistic") -> SemiSynthOutput:
    """Resample observed Y rows so that Y_k responds to K sampled X parents.

    X and Y rows are shuffled independently, which breaks any link present
    in the input.  Then for each output row i a Y row l is drawn with
    probability proportional to ``count(l) * prod_k L_k(y_l | x_i)``, where
    ``L_k`` is the Bernoulli likelihood with success probability
    ``sigmoid(beta_k . x*_{k,i})`` (or, for ``response="gaussian"``, the
    Normal(beta_k . x*_{k,i}, noise_sd^2) density).  Draws are with
    replacement, so every output row is a copy of some input row.
    """
    rng = as_rng(rng)
    if response not in ("logistic", "gaussian"):
        raise ConfigError(f"unknown response {response!r}")
    x_all, y_all = data.response_scale()
    x_all = _as_x(x_all)
    n, p = x_all.shape
    m = data.m if cfg.m_targets is None else int(cfg.m_targets)
    if m > data.m:
        raise ConfigError(f"m_targets={m} exceeds the {data.m} available Y columns")
    if cfg.k_parents > p:
        raise ConfigError(f"k_parents={cfg.k_parents} exceeds the number of X columns ({p})")
    if response == "gaussian" and cfg.noise_sd <= 0:
        raise ConfigError("the gaussian response needs noise_sd > 0")
    y_all = y_all[:, :m]
    if response == "logistic" and not np.all(np.isin(y_all, (0.0, 1.0))):
        raise DomainViolation("the logistic response needs binary Y rows")

    x = x_all[rng.permutation(n)]
    y = y_all[rng.permutation(n)]

    truth = np.zeros((p, m), dtype=bool)
    mu = np.empty((n, m))
    coefs = []
    for k in range(m):
        parents = _pick_parents(cfg, rng, p)
        beta = _draw_coefs(cfg, rng, parents.size)
        truth[parents, k] = True
        mu[:, k] = x[:, parents] @ beta
        coefs.append({"y": k, "x_parents": parents.tolist(), "beta": beta.tolist(),
                      "y_parents": [], "gamma": []})

    # weights only depend on the distinct Y rows, so group them
    patterns, inverse, counts = np.unique(y, axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    members = [np.flatnonzero(inverse == u) for u in range(patterns.shape[0])]
    log_counts = np.log(counts.astype(float))

    chosen = np.empty(n, dtype=int)
    uniforms = rng.random((n, 2))
    chunk = max(1, 2_000_000 // max(1, patterns.shape[0] * m))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        mu_c = mu[start:stop]  # (c, m)
        if response == "logistic":
            ll = patterns[None, :, :] * _log_sigmoid(mu_c)[:, None, :] \
                + (1.0 - patterns[None, :, :]) * _log_sigmoid(-mu_c)[:, None, :]
        else:
            resid = patterns[None, :, :] - mu_c[:, None, :]
            ll = -0.5 * (resid / cfg.noise_sd) ** 2
        logw = ll.sum(axis=2) + log_counts[None, :]
        logw -= np.max(logw, axis=1, keepdims=True)
        w = np.exp(logw)
        if not np.all(np.isfinite(w)) or np.any(w.sum(axis=1) <= 0):
            raise DegenerateLikelihood("categorical resampling weights are all non-finite")
        cdf = np.cumsum(w, axis=1)
        cdf /= cdf[:, -1:]
        for r, i in enumerate(range(start, stop)):
            u = min(int(np.searchsorted(cdf[r], uniforms[i, 0], side="right")), patterns.shape[0] - 1)
            pool = members[u]
            chosen[i] = pool[min(int(uniforms[i, 1] * pool.size), pool.size - 1)]

    domain = Domain.BINARY if response == "logistic" else Domain.CONTINUOUS
    out = DataMatrix(x, y[chosen], domain, _x_names(data, p), data.y_names[:m])
    return SemiSynthOutput(out, GroundTruthGraph(truth), np.zeros((m, m), dtype=bool), coefs, cfg,
                           generator=f"real_confounding/{response}")


def gen_synth_confounding(x_data, cfg: GenConfig, rng, response: str = "logistic") -> SemiSynthOutput:
    """Generate Y columns sequentially from X parents and earlier Y columns.

    Y_k has K parents drawn from X; each earlier Y_l (l < k) joins its parent
    set with probability ``conf_p``.  With ``response="logistic"``,
    Y_k ~ Bernoulli(sigmoid(beta_k . x* + gamma_k . y*)); with
    ``response="gaussian"`` Y_k = beta_k . x* + gamma_k . y* + Normal(0, noise_sd^2).
    """
    rng = as_rng(rng)
    if response not in ("logistic", "gaussian"):
        raise ConfigError(f"unknown response {response!r}")
    x_all = _as_x(x_data)
    n, p = x_all.shape
    if cfg.m_targets is None:
        raise ConfigError("m_targets is required for synthetic confounding")
    m = int(cfg.m_targets)
    if cfg.k_parents > p:
        raise ConfigError(f"k_parents={cfg.k_parents} exceeds the number of X columns ({p})")

    x = x_all[rng.permutation(n)]
    y = np.zeros((n, m))
    truth = np.zeros((p, m), dtype=bool)
    internal = np.zeros((m, m), dtype=bool)  # internal[k, l]: Y_l -> Y_k, l < k
    coefs = []
    for k in range(m):
        parents = _pick_parents(cfg, rng, p)
        truth[parents, k] = True
        y_parents = np.flatnonzero(rng.random(k) < cfg.conf_p) if k else np.empty(0, dtype=int)
        internal[k, y_parents] = True
        beta = _draw_coefs(cfg, rng, parents.size)
        gamma = _draw_coefs(cfg, rng, y_parents.size)
        eta = x[:, parents] @ beta + y[:, y_parents] @ gamma
        if response == "logistic":
            prob = np.exp(_log_sigmoid(eta))
            y[:, k] = (rng.random(n) < prob).astype(float)
        else:
            y[:, k] = eta + cfg.noise_sd * rng.standard_normal(n)
        coefs.append({"y": k, "x_parents": parents.tolist(), "beta": beta.tolist(),
                      "y_parents": y_parents.tolist(), "gamma": gamma.tolist()})

    domain = Domain.BINARY if response == "logistic" else Domain.CONTINUOUS
    out = DataMatrix(x, y, domain, _x_names(x_data, p), tuple(f"Y{k + 1}" for k in range(m)))
    return SemiSynthOutput(out, GroundTruthGraph(truth), internal, coefs, cfg,
                           generator=f"synthetic_confounding/{response}")


def gen_continuous_variants(data, cfg: GenConfig, rng, confounding: str = "synthetic") -> SemiSynthOutput:
    """Gaussian-response versions of both generators.

    ``data`` is an X matrix (or DataMatrix) for ``confounding="synthetic"``
    and a DataMatrix with continuous Y rows for ``confounding="real"``.
    """
    if confounding == "synthetic":
        return gen_synth_confounding(data, cfg, rng, response="gaussian")
    if confounding == "real":
        if not isinstance(data, DataMatrix):
            raise ConfigError("real confounding needs a DataMatrix with Y rows to resample")
        return gen_real_confounding(data, cfg, rng, response="gaussian")
    raise ConfigError(f"unknown confounding {confounding!r}")


def simulate_x(n: int, p: int, rng, prob: float = 0.5) -> np.ndarray:
    """Independent Bernoulli(prob) source matrix, for when no real X is at hand."""
    rng = as_rng(rng)
    return (rng.random((n, p)) < prob).astype(float)


def simulate_base_dataset(n: int, p: int, m: int, rng, x_prob: float = 0.5,
                          y_conf_p: float = 0.5) -> DataMatrix:
    """Stand-in for an observed dataset: X from :func:`simulate_x`, and Y rows
    with internal dependence drawn from the synthetic-confounding mechanism
    with centred Normal(0, 1) coefficients."""
    rng = as_rng(rng)
    x = simulate_x(n, p, rng.child(0), prob=x_prob)
    base_cfg = GenConfig(k_parents=min(2, p), conf_p=y_conf_p, coef_mean=0.0, coef_sd=1.0, m_targets=m)
    return gen_synth_confounding(x, base_cfg, rng.child(1)).data
