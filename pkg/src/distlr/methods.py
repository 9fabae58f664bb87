"""The three LR methods behind one fit/score interface.

* ``direct``              scalar distance, Gaussian-mixture likelihoods
* ``indirect_scalar``     scalar distance, logistic regression
* ``indirect_vectorial``  per-feature absolute differences, logistic regression

Every fitted model scores a pair by its natural-log likelihood ratio; the
posterior log-odds under a prior is that plus ``logit(prior)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .direct import DirectModel, fit_gmm2
from .errors import ConfigError, ModeError
from .indirect import LogisticModel, fit_logistic, fit_logistic_stream
from .pairs import (
    DEFAULT_BATCH,
    DEFAULT_MEMORY_BUDGET,
    SCALAR_KINDS,
    PairSet,
    check_pairs,
    compute_distances,
    scalar_distances,
    vectorial_batches,
)
from .traces import TraceMatrix

METHODS = ("direct", "indirect_scalar", "indirect_vectorial")

Model = Union[DirectModel, LogisticModel]


@dataclass(frozen=True)
class MethodConfig:
    method: str = "indirect_scalar"
    distance: str | None = None
    features: tuple[int, ...] | None = None
    ridge: float = 0.0
    restarts: int = 3
    seed: int = 0
    ds_subsample: float | None = None
    max_iter: int = 100
    tol: float = 1e-8
    batch_size: int = DEFAULT_BATCH
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        method = self.method.replace("-", "_")
        if method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        distance = self.distance
        if method == "indirect_vectorial":
            if distance not in (None, "vectorial"):
                raise ConfigError("indirect_vectorial works on the vectorial distance only")
            distance = "vectorial"
        else:
            distance = distance or "spearman"
            if distance == "vectorial" and method == "direct":
                raise ConfigError("the direct method is not available with a vectorial distance")
            if distance not in SCALAR_KINDS:
                raise ConfigError(f"{method} needs a scalar distance, got {distance!r}")
        if self.ds_subsample is not None and not 0.0 < self.ds_subsample <= 1.0:
            raise ConfigError("ds_subsample must lie in (0, 1]")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "distance", distance)
        if self.features is not None:
            object.__setattr__(self, "features", tuple(int(k) for k in self.features))

    def with_features(self, features) -> "MethodConfig":
        return dataclasses.replace(self, features=None if features is None else tuple(features))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["features"] = None if self.features is None else list(self.features)
        return d


def _subsample_ds(p: PairSet, rate: float, seed: int) -> tuple[PairSet, float]:
    rng = np.random.default_rng(seed)
    keep = p.same | (rng.random(p.n_pairs) < rate)
    n_ds_kept = int(np.count_nonzero(keep & ~p.same))
    return p.subset(keep), n_ds_kept / max(p.n_ds, 1)


def fit_method(m: TraceMatrix, p: PairSet, cfg: MethodConfig) -> Model:
    """Fit ``cfg.method`` on all pairs of a calibration matrix."""
    check_pairs(m, p)
    meta = dict(distance_kind=cfg.distance, feature_subset=cfg.features, data_mode=m.mode)
    if cfg.method == "direct":
        d = scalar_distances(m, p, cfg.distance, cfg.features, cfg.batch_size)
        return DirectModel(fit_gmm2(d[p.same], cfg.restarts, cfg.seed),
                           fit_gmm2(d[~p.same], cfg.restarts, cfg.seed), **meta)

    full_f_ss = p.n_ss / p.n_pairs
    rate = 1.0
    fit_pairs = p
    if cfg.ds_subsample is not None and cfg.ds_subsample < 1.0:
        fit_pairs, rate = _subsample_ds(p, cfg.ds_subsample, cfg.seed)
    y = fit_pairs.labels()
    opts = dict(ridge=cfg.ridge, max_iter=cfg.max_iter, tol=cfg.tol)

    if cfg.method == "indirect_scalar":
        d = scalar_distances(m, fit_pairs, cfg.distance, cfg.features, cfg.batch_size)
        model = fit_logistic(d, y, mode="scalar", **opts, **meta)
    else:
        width = m.n_features if cfg.features is None else len(cfg.features)
        if fit_pairs.n_pairs * width * 8 <= cfg.memory_budget:
            D = compute_distances(m, fit_pairs, "vectorial", cfg.features, cfg.memory_budget)
            model = fit_logistic(D, y, mode="vectorial", **opts, **meta)
        else:
            def batches():
                for sl, block in vectorial_batches(m, fit_pairs, cfg.features, cfg.batch_size):
                    yield block, y[sl]

            model = fit_logistic_stream(batches, width, mode="vectorial", **opts, **meta)

    if rate < 1.0:
        # Dropping H_ds pairs at rate r scales the fitted odds by 1/r; undo it so
        # that the full-set proportions keep the posterior and LR formulas valid.
        model = dataclasses.replace(model, b=model.b + math.log(rate), f_ss=full_f_ss,
                                    ds_subsample=rate)
    return model


def log_lr_scores(model: Model, m: TraceMatrix, p: PairSet,
                  batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """Natural-log LR for every pair of ``p``."""
    if model.data_mode is not None and m.mode != model.data_mode:
        raise ModeError(f"model was fitted on {model.data_mode} data, got {m.mode}")
    features = model.feature_subset
    if isinstance(model, DirectModel):
        return model.log_lr(scalar_distances(m, p, model.distance_kind, features, batch_size))
    if model.mode == "scalar":
        return np.asarray(model.log_lr(scalar_distances(m, p, model.distance_kind, features,
                                                        batch_size)))
    out = np.empty(p.n_pairs)
    corr = model.log_prior_correction()
    for sl, block in vectorial_batches(m, p, features, batch_size):
        out[sl] = block @ model.a + model.b + corr
    return out


def pair_log_lr(model: Model, x, y) -> float:
    """Log LR for one pair of feature vectors (full feature space)."""
    from .pairs import euclidean, pearson_distance, spearman_distance, vectorial_distance

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if model.feature_subset is not None:
        idx = np.asarray(model.feature_subset, dtype=np.int64)
        x, y = x[idx], y[idx]
    if isinstance(model, LogisticModel) and model.mode == "vectorial":
        return float(model.log_lr(vectorial_distance(x, y)))
    fn = {"euclidean": euclidean, "pearson": pearson_distance,
          "spearman": spearman_distance}[model.distance_kind]
    d = fn(x, y)
    if isinstance(model, DirectModel):
        return float(model.log_lr(d)[0])
    return float(model.log_lr(d))
