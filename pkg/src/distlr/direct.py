"""Direct method: Gaussian-mixture likelihoods of a scalar distance under each
hypothesis, and the likelihood ratio / posterior they imply."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DegenerateFitError, FitError, IndeterminateLRError, LRUnderflowWarning

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

VARIANCE_FLOOR_RATIO = 1e-6
EM_TOL = 1e-8
EM_MAX_ITER = 500


@dataclass(frozen=True)
class Gmm2:
    """Two-component univariate Gaussian mixture, components sorted by mean."""

    weights: tuple[float, float]
    means: tuple[float, float]
    variances: tuple[float, float]
    log_likelihood: float = float("nan")
    n_samples: int = 0
    iterations: int = 0
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise FitError(f"invalid mixture weights {self.weights}")
        if min(self.variances) <= 0:
            raise FitError(f"variances must be positive, got {self.variances}")

    def to_dict(self) -> dict:
        return {"w": list(self.weights), "mu": list(self.means), "sigma2": list(self.variances),
                "loglik": self.log_likelihood, "n": self.n_samples}

    @classmethod
    def from_dict(cls, d: dict) -> "Gmm2":
        return cls(tuple(map(float, d["w"])), tuple(map(float, d["mu"])),
                   tuple(map(float, d["sigma2"])), float(d.get("loglik", float("nan"))),
                   int(d.get("n", 0)))


def _component_logpdf(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    # shape (len(x), 2)
    z = (x[:, None] - means) ** 2 / variances
    return -0.5 * z - 0.5 * np.log(variances) - _LOG_SQRT_2PI


def gmm_logpdf(g: Gmm2, d) -> np.ndarray:
    x = np.atleast_1d(np.asarray(d, dtype=np.float64))
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(g.weights))
    comp = _component_logpdf(x, np.asarray(g.means), np.asarray(g.variances))
    return logsumexp(comp + logw, axis=1)


def gmm_pdf(g: Gmm2, d):
    """Mixture density; scalar in, scalar out."""
    out = np.exp(gmm_logpdf(g, d))
    return float(out[0]) if np.ndim(d) == 0 else out


def _e_step(x, means, variances, weights):
    """Per-sample log mixture density and first-component responsibility."""
    lw = np.log(weights) - 0.5 * np.log(variances) - _LOG_SQRT_2PI
    l1 = lw[0] - 0.5 * (x - means[0]) ** 2 / variances[0]
    l2 = lw[1] - 0.5 * (x - means[1]) ** 2 / variances[1]
    hi = np.maximum(l1, l2)
    norm = hi + np.log1p(np.exp(-np.abs(l1 - l2)))
    return norm, np.exp(l1 - norm)


def _em(x: np.ndarray, means, variances, weights, floor: float):
    n = x.size
    means = np.array(means, dtype=np.float64)
    variances = np.maximum(np.array(variances, dtype=np.float64), floor)
    weights = np.array(weights, dtype=np.float64)
    history = []
    prev = -np.inf
    converged = False
    it = 0
    for it in range(1, EM_MAX_ITER + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            norm, r1 = _e_step(x, means, variances, weights)
        ll = float(norm.sum())
        history.append(ll)
        if not math.isfinite(ll):
            break
        if ll - prev < EM_TOL * n:
            converged = True
            break
        prev = ll
        n1 = float(r1.sum())
        nk = np.array([n1, n - n1])
        if np.any(nk <= 0):
            break
        r2 = 1.0 - r1
        weights = nk / n
        means = np.array([np.dot(r1, x), np.dot(r2, x)]) / nk
        # clamping at the floor is the exact constrained M-step, so EM stays monotone
        variances = np.maximum(
            np.array([np.dot(r1, (x - means[0]) ** 2), np.dot(r2, (x - means[1]) ** 2)]) / nk,
            floor)
    else:
        # iteration cap reached: score the parameters actually returned
        with np.errstate(divide="ignore", invalid="ignore"):
            history.append(float(_e_step(x, means, variances, weights)[0].sum()))
    return weights, means, variances, history, it, converged


def _hard_assignment(x: np.ndarray, mu0: np.ndarray, var: float, floor: float):
    """Weights and variances of the groups formed by assigning x to the nearer mean."""
    near0 = np.abs(x - mu0[0]) <= np.abs(x - mu0[1])
    weights, variances = [], []
    for g in (x[near0], x[~near0]):
        weights.append(max(g.size, 1) / x.size)
        variances.append(max(float(g.var()), floor) if g.size > 1 else var)
    w = np.array(weights)
    return w / w.sum(), variances


def fit_gmm2(samples, restarts: int = 3, seed: int = 0) -> Gmm2:
    """Fit a two-Gaussian mixture by EM, keeping the best of ``restarts`` runs.

    The first run starts with means at the sample quartiles; later runs draw
    one mean at random and the second with probability proportional to its
    squared distance from the first (k-means++ seeding).  Weights and
    variances start from the nearest-mean assignment.  EM stops when the mean
    per-sample log-likelihood gains less than 1e-8, or after 500 iterations.
    Variances are floored at 1e-6 times the sample variance.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 4:
        raise FitError(f"need at least 4 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise FitError("samples must be finite")
    var = float(x.var())
    if var == 0 or np.ptp(x) == 0:
        raise FitError("samples have zero spread")
    floor = VARIANCE_FLOOR_RATIO * var
    rng = np.random.default_rng(seed)
    best = None
    for r in range(max(1, restarts)):
        if r == 0:
            mu0 = np.quantile(x, [0.25, 0.75])
        else:
            first = x[rng.integers(x.size)]
            d2 = (x - first) ** 2
            mu0 = np.array([first, x[rng.choice(x.size, p=d2 / d2.sum())]])
        if mu0[0] == mu0[1]:
            mu0 = np.array([x.min(), x.max()])
        w0, s0 = _hard_assignment(x, mu0, var, floor)
        w, mu, s2, hist, it, conv = _em(x, mu0, s0, w0, floor)
        ll = hist[-1] if hist else -np.inf
        if not (math.isfinite(ll) and np.all(np.isfinite(mu)) and np.all(w > 0)):
            continue
        # strict > keeps the lowest restart index on ties
        if best is None or ll > best[0]:
            best = (ll, w, mu, s2, hist, it, conv)
    if best is None:
        raise DegenerateFitError("every EM restart collapsed to a singular component")
    ll, w, mu, s2, hist, it, conv = best
    order = np.argsort(mu, kind="stable")
    w = w[order] / w.sum()
    return Gmm2((float(w[0]), float(1.0 - w[0])), tuple(map(float, mu[order])),
                tuple(map(float, s2[order])), float(ll), int(x.size), int(it), bool(conv),
                tuple(hist))


def bic_by_components(samples, max_components: int = 3, seed: int = 0) -> dict[int, float]:
    """BIC of 1..max_components mixtures; a diagnostic for the two-component choice."""
    from sklearn.mixture import GaussianMixture

    x = np.asarray(samples, dtype=np.float64).reshape(-1, 1)
    out = {}
    for k in range(1, max_components + 1):
        gm = GaussianMixture(n_components=k, n_init=3, random_state=seed, reg_covar=1e-9)
        out[k] = float(gm.fit(x).bic(x))
    return out


# --------------------------------------------------------------------------
# Likelihood ratio and posterior


@dataclass(frozen=True)
class DirectModel:
    model_ss: Gmm2
    model_ds: Gmm2
    distance_kind: str = "spearman"
    feature_subset: tuple[int, ...] | None = None
    data_mode: str | None = None

    def log_lr(self, d) -> np.ndarray:
        """Natural-log LR, evaluated in log space."""
        lss = gmm_logpdf(self.model_ss, d)
        lds = gmm_logpdf(self.model_ds, d)
        with np.errstate(invalid="ignore"):
            out = lss - lds
        if np.any(np.isneginf(lss) & np.isneginf(lds)):
            raise IndeterminateLRError("both likelihoods vanish; LR is 0/0")
        return out


def direct_lr(model: DirectModel, d: float) -> float:
    """``f(d|H_ss) / f(d|H_ds)``.

    Returns ``math.inf`` with an :class:`LRUnderflowWarning` when the ratio
    exceeds the float range (the different-source density underflows), and
    warns likewise when it falls below the smallest normal float.  The exact
    value is always available from ``model.log_lr``.
    """
    log_lr = float(model.log_lr(d)[0])
    if log_lr > 709.0:
        warnings.warn(f"LR overflows at d={d}: log LR = {log_lr:.1f}", LRUnderflowWarning,
                      stacklevel=2)
        return math.inf
    if log_lr < -708.0:
        warnings.warn(f"LR underflows at d={d}: log LR = {log_lr:.1f}", LRUnderflowWarning,
                      stacklevel=2)
    return math.exp(log_lr)


def direct_posterior_log_odds(model: DirectModel, d: float, prior_ss: float) -> float:
    """log P(H_ss | d) / P(H_ds | d) under prior ``prior_ss``."""
    if not 0.0 < prior_ss < 1.0:
        raise ValueError("prior_ss must lie strictly between 0 and 1")
    return float(model.log_lr(d)[0]) + math.log(prior_ss) - math.log1p(-prior_ss)


def direct_posterior(model: DirectModel, d: float, prior_ss: float) -> float:
    """Posterior P(H_ss | d) from Bayes' formula with prior ``prior_ss``."""
    return float(expit(direct_posterior_log_odds(model, d, prior_ss)))


def lr_monotonicity(model: DirectModel, lo: float, hi: float, n_grid: int = 512) -> str:
    """'decreasing', 'increasing' or 'non-monotone' over ``[lo, hi]``.

    The direct LR is not forced to be monotone; this only reports its shape.
    """
    grid = np.linspace(lo, hi, n_grid)
    steps = np.diff(model.log_lr(grid))
    if np.all(steps <= 0):
        return "decreasing"
    if np.all(steps >= 0):
        return "increasing"
    return "non-monotone"
