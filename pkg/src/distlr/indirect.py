"""Indirect method: logistic regression on distances, inverted to a posterior
and a likelihood ratio through the calibration class proportions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.blas import dsyrk
from scipy.special import expit

from .errors import ConvergenceWarning, DimensionError, FitError

BatchSource = Callable[[], Iterable[tuple[np.ndarray, np.ndarray]]]

_ILL_CONDITIONED = 1e12


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Fitted ``r(d) = 1 / (1 + exp(-(a.d + b)))`` plus the H_ss share ``f_ss``
    of the data it was fitted on."""

    a: np.ndarray
    b: float
    f_ss: float
    converged: bool = True
    iterations: int = 0
    ridge: float = 0.0
    mode: str = "scalar"
    distance_kind: str = "spearman"
    feature_subset: tuple[int, ...] | None = None
    data_mode: str | None = None
    separated: bool = False
    grad_norm: float = 0.0
    loglik: float = float("nan")
    ds_subsample: float | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64, copy=True).ravel()
        if a.size < 1:
            raise FitError("coefficient vector is empty")
        if not (np.all(np.isfinite(a)) and math.isfinite(self.b)):
            raise FitError("coefficients must be finite")
        if not 0.0 < self.f_ss < 1.0:
            raise FitError(f"f_ss must lie in (0, 1), got {self.f_ss}")
        if self.mode not in ("scalar", "vectorial"):
            raise FitError(f"unknown mode {self.mode!r}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def f_ds(self) -> float:
        return 1.0 - self.f_ss

    @property
    def dim(self) -> int:
        return self.a.size

    def score(self, d) -> np.ndarray | float:
        """``a.d + b`` for one distance or a batch of them."""
        arr = np.asarray(d, dtype=np.float64)
        if arr.ndim == 0 or (arr.ndim == 1 and self.dim > 1):
            if arr.size != self.dim:
                raise DimensionError(f"distance has {arr.size} components, model expects {self.dim}")
            return float(arr.ravel() @ self.a + self.b)
        if arr.ndim == 1:
            return arr * self.a[0] + self.b
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DimensionError(f"distance batch has shape {arr.shape}, model expects (k, {self.dim})")
        return arr @ self.a + self.b

    def log_prior_correction(self) -> float:
        """``ln(f_ds / f_ss)``, added to the score to obtain the log LR."""
        return math.log(self.f_ds) - math.log(self.f_ss)

    def log_lr(self, d):
        return self.score(d) + self.log_prior_correction()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "a": [float(v) for v in self.a], "b": self.b,
            "f_ss": self.f_ss, "f_ds": self.f_ds, "ridge": self.ridge,
            "converged": self.converged, "iterations": self.iterations,
            "separated": self.separated, "distance_kind": self.distance_kind,
            "feature_subset": None if self.feature_subset is None else list(self.feature_subset),
            "data_mode": self.data_mode, "ds_subsample": self.ds_subsample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        fs = d.get("feature_subset")
        return cls(np.array(d["a"], dtype=np.float64), float(d["b"]), float(d["f_ss"]),
                   bool(d.get("converged", True)), int(d.get("iterations", 0)),
                   float(d.get("ridge", 0.0)), d.get("mode", "scalar"),
                   d.get("distance_kind", "spearman"), None if fs is None else tuple(fs),
                   d.get("data_mode"), bool(d.get("separated", False)),
                   ds_subsample=d.get("ds_subsample"))


def logistic_output(model: LogisticModel, d):
    return expit(model.score(d))


def indirect_posterior_log_odds(model: LogisticModel, d, prior_ss: float):
    """log P(H_ss | d) / P(H_ds | d) under prior ``prior_ss``."""
    if not 0.0 < prior_ss < 1.0:
        raise ValueError("prior_ss must lie strictly between 0 and 1")
    # grouped so that prior_ss == f_ss cancels to exactly 0
    shift = (math.log(prior_ss) - math.log(model.f_ss)) + (math.log(model.f_ds)
                                                          - math.log(1.0 - prior_ss))
    return model.score(d) + shift


def indirect_posterior(model: LogisticModel, d, prior_ss: float):
    """P(H_ss | d) under prior ``prior_ss``; equals :func:`logistic_output`
    when ``prior_ss == f_ss``."""
    return expit(indirect_posterior_log_odds(model, d, prior_ss))


def indirect_lr(model: LogisticModel, d):
    """``exp(a.d + b) * f_ds / f_ss``, evaluated in log space."""
    return np.exp(model.log_lr(d))


# --------------------------------------------------------------------------
# Fitting


def _column_stats(batches: BatchSource, m: int):
    n = 0
    n_pos = 0.0
    s1 = np.zeros(m)
    s2 = np.zeros(m)
    for X, y in batches():
        if X.shape[1] != m:
            raise DimensionError(f"batch has {X.shape[1]} columns, expected {m}")
        n += X.shape[0]
        n_pos += float(np.sum(y))
        s1 += X.sum(axis=0)
        s2 += np.einsum("ij,ij->j", X, X)
    if n == 0:
        raise FitError("empty design")
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0)
    return n, n_pos, mean, np.sqrt(var)


def _accumulate(batches, theta, mean, sd, active, need_hessian=True):
    """Log-likelihood, gradient and Hessian in standardized coordinates.

    Blocks are only centered; the 1/sd scaling is folded into the slopes and
    applied to the accumulated sums, which saves a pass over every block.
    """
    k = active.size
    full = k == mean.size
    mu, s_d = mean[active], sd[active]
    g = np.zeros(k + 1)
    H = np.zeros((k + 1, k + 1)) if need_hessian else None
    ll = 0.0
    pos_min, neg_max = math.inf, -math.inf
    a_raw, b = theta[:k] / s_d, theta[k]
    for X, y in batches():
        Xc = X - mu if full else X[:, active] - mu
        s = Xc @ a_raw + b
        p = expit(s)
        ll += float(np.sum(y * s - np.logaddexp(0.0, s)))
        r = y - p
        g[:k] += Xc.T @ r
        g[k] += r.sum()
        if need_hessian and k:
            sw = np.sqrt(p * (1.0 - p))
            Xc *= sw[:, None]
            # symmetric rank-k update: half the flops of a general product
            H[:k, :k] += dsyrk(1.0, Xc.T, lower=1)
            col = Xc.T @ sw
            H[k, :k] += col
            H[k, k] += float(sw @ sw)
        elif need_hessian:
            H[k, k] += float(np.sum(p * (1.0 - p)))
        if np.any(y > 0.5):
            pos_min = min(pos_min, float(s[y > 0.5].min()))
        if np.any(y < 0.5):
            neg_max = max(neg_max, float(s[y < 0.5].max()))
    g[:k] /= s_d
    if need_hessian:
        # lower triangle (with the intercept row) is filled; mirror and rescale
        H = np.tril(H) + np.tril(H, -1).T
        scale = np.append(1.0 / s_d, 1.0)
        H *= scale[:, None] * scale[None, :]
    return ll, g, H, pos_min > neg_max


def _fit(batches: BatchSource, m: int, ridge: float, max_iter: int, tol: float,
         intercept_only: bool):
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    n, n_pos, mean, sd = _column_stats(batches, m)
    if n_pos <= 0 or n_pos >= n:
        raise FitError("design contains a single class; need both H_ss and H_ds samples")
    # zero-variance columns carry no information and would make the Hessian singular
    active = np.array([], dtype=np.int64) if intercept_only else np.flatnonzero(sd > 0)
    k = active.size
    # ridge acts on raw-scale slopes: ridge * a_raw^2 = ridge * (a_z / sd)^2
    pen = np.zeros(k + 1)
    pen[:k] = ridge / sd[active] ** 2 if k else 0.0

    theta = np.zeros(k + 1)
    theta[k] = math.log(n_pos) - math.log(n - n_pos)

    obj_prev = -math.inf
    theta_prev = theta
    step = None
    t = 1.0
    halvings = 0
    converged = False
    separated = False
    gnorm = math.inf
    ll = math.nan
    it = 0
    newton_steps = 0
    while True:
        ll, g, H, separated = _accumulate(batches, theta, mean, sd, active)
        obj = ll - 0.5 * float(np.sum(pen * theta * theta))
        if step is not None and obj < obj_prev and halvings < 40:
            halvings += 1
            t *= 0.5
            theta = theta_prev + t * step
            continue
        halvings = 0
        g = g - pen * theta
        H = H + np.diag(pen)
        gnorm = float(np.linalg.norm(g)) / n
        if gnorm < tol:
            converged = True
            break
        if newton_steps >= max_iter:
            break
        step = None
        try:
            c = cho_factor(H, lower=True)
            diag = np.abs(np.diag(c[0]))
            if diag.min() > 0 and (diag.max() / diag.min()) ** 2 < _ILL_CONDITIONED:
                step = cho_solve(c, g)
        except LinAlgError:
            pass
        if step is None:
            # ill-conditioned Hessian: steepest ascent with a safe step length
            lip = 0.25 * max(float(np.linalg.eigvalsh(H).max()), 1e-300) + 1.0
            step = g / lip
        theta_prev, obj_prev, t = theta, obj, 1.0
        theta = theta + step
        newton_steps += 1
        it = newton_steps
        if not np.all(np.isfinite(theta)):
            raise FitError("logistic fit diverged to non-finite coefficients")

    a_z = theta[:k]
    a = np.zeros(m)
    a[active] = a_z / sd[active]
    b = float(theta[k] - np.sum(a_z * mean[active] / sd[active]))
    return dict(a=a, b=b, f_ss=n_pos / n, converged=converged, iterations=it,
                separated=bool(separated and k > 0), grad_norm=gnorm, loglik=ll, n=n)


def _finish(res: dict, ridge: float, **meta) -> LogisticModel:
    converged = res["converged"]
    if res["separated"] and ridge == 0:
        converged = False
        warnings.warn("H_ss and H_ds training samples are completely separated; the "
                      "maximum-likelihood coefficients do not exist. Refit with ridge > 0.",
                      ConvergenceWarning, stacklevel=3)
    elif not converged:
        warnings.warn(f"logistic fit did not converge in {res['iterations']} iterations "
                      f"(gradient norm {res['grad_norm']:.3g})", ConvergenceWarning, stacklevel=3)
    return LogisticModel(res["a"], res["b"], res["f_ss"], converged, res["iterations"], ridge,
                         separated=res["separated"], grad_norm=res["grad_norm"],
                         loglik=res["loglik"], **meta)


def fit_logistic(X, y, ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-8,
                 intercept_only: bool = False, batch_size: int = 65536,
                 **meta) -> LogisticModel:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Parameters
    ----------
    X : array, shape (N,) or (N, m)
        Distance features, one row per pair.
    y : array, shape (N,)
        1 for same-source pairs, 0 for different-source pairs.
    ridge : float
        L2 penalty ``ridge/2 * |a|^2`` on the slopes (never on the intercept).
    tol : float
        Convergence threshold on the per-sample gradient norm, measured on
        internally standardized features.
    intercept_only : bool
        Freeze all slopes at 0; the intercept is then ``ln(n_ss / n_ds)``.

    Completely separated data has no finite MLE; the fit then returns with
    ``converged=False`` and ``separated=True`` and emits a ConvergenceWarning.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise DimensionError(f"{X.shape[0]} rows but {y.size} labels")
    if X.shape[1] < 1:
        raise DimensionError("design needs at least one distance feature")
    if not np.all((y == 0) | (y == 1)):
        raise FitError("labels must be coded 1 (H_ss) / 0 (H_ds)")

    def batches():
        for s in range(0, y.size, batch_size):
            yield X[s:s + batch_size], y[s:s + batch_size]

    res = _fit(batches, X.shape[1], ridge, max_iter, tol, intercept_only)
    meta.setdefault("mode", "scalar" if X.shape[1] == 1 else "vectorial")
    return _finish(res, ridge, **meta)


def fit_logistic_stream(batches: BatchSource, m: int, ridge: float = 0.0, max_iter: int = 100,
                        tol: float = 1e-8, **meta) -> LogisticModel:
    """Same fit as :func:`fit_logistic`, reading the design through ``batches``.

    ``batches()`` must return a fresh iterable of ``(X_block, y_block)`` on every
    call; it is called once per IRLS pass, so the design is never held in memory.
    """
    res = _fit(batches, m, ridge, max_iter, tol, intercept_only=False)
    meta.setdefault("mode", "vectorial" if m > 1 else "scalar")
    return _finish(res, ridge, **meta)
