"""ROC analysis, Youden operating point, grouped folds and method evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import CVError, EvaluationError, LeakageError
from .methods import MethodConfig, Model, fit_method, log_lr_scores
from .pairs import enumerate_pairs
from .traces import TraceMatrix


@dataclass(frozen=True, eq=False)
class RocCurve:
    """ROC points ordered by decreasing threshold.

    A pair is called same-source when its score is strictly above the
    threshold.  Thresholds are +inf, the midpoints between consecutive
    distinct scores, and -inf.
    """

    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.thresholds.tolist(), self.sensitivity.tolist(),
                        self.specificity.tolist()))

    def to_csv_text(self) -> str:
        lines = ["threshold,sensitivity,specificity"]
        lines += [f"{t!r},{sn!r},{sp!r}" for t, sn, sp in self.points()]
        return "\n".join(lines) + "\n"


def auc_mann_whitney(scores_ss, scores_ds) -> float:
    """P(score_ss > score_ds) + 0.5 P(tie), via pooled average ranks."""
    ss = np.asarray(scores_ss, dtype=np.float64).ravel()
    ds = np.asarray(scores_ds, dtype=np.float64).ravel()
    n1, n2 = ss.size, ds.size
    if n1 == 0 or n2 == 0:
        raise EvaluationError("both score lists must be non-empty")
    if np.any(np.isnan(ss)) or np.any(np.isnan(ds)):
        raise EvaluationError("scores contain NaN")
    ranks = rankdata(np.concatenate([ss, ds]), method="average")
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def roc_auc(scores_ss, scores_ds) -> RocCurve:
    ss = np.sort(np.asarray(scores_ss, dtype=np.float64).ravel())
    ds = np.sort(np.asarray(scores_ds, dtype=np.float64).ravel())
    auc = auc_mann_whitney(ss, ds)
    distinct = np.unique(np.concatenate([ss, ds]))[::-1]
    mids = distinct[:-1] / 2.0 + distinct[1:] / 2.0
    thresholds = np.concatenate([[np.inf], mids, [-np.inf]])
    sens = (ss.size - np.searchsorted(ss, thresholds, side="right")) / ss.size
    spec = np.searchsorted(ds, thresholds, side="right") / ds.size
    return RocCurve(thresholds, sens, spec, auc)


def youden_best(roc: RocCurve) -> tuple[float, float, float]:
    """Threshold maximizing Sn + Sp - 1; ties go to the higher specificity."""
    if roc.thresholds.size == 0:
        raise EvaluationError("empty ROC curve")
    j = roc.sensitivity + roc.specificity - 1.0
    best = np.flatnonzero(j == j.max())
    k = best[np.argmax(roc.specificity[best])]
    return float(roc.thresholds[k]), float(roc.sensitivity[k]), float(roc.specificity[k])


def grouped_kfold(m: TraceMatrix, k: int, seed: int = 0) -> list[np.ndarray]:
    """Split trace rows into ``k`` folds with every subject wholly in one fold.

    Subjects are shuffled with ``seed`` and dealt round-robin, so fold
    subject counts differ by at most one.  Returns the row indices of each fold.
    """
    subjects = m.subjects()
    if k < 2:
        raise CVError("need k >= 2 folds")
    if k > len(subjects):
        raise CVError(f"{k} folds requested but only {len(subjects)} subjects")
    perm = np.random.default_rng(seed).permutation(len(subjects))
    fold_of = {subjects[s]: f % k for f, s in enumerate(perm)}
    labels = np.array([fold_of[s] for s in m.subject_ids])
    return [np.flatnonzero(labels == f) for f in range(k)]


# --------------------------------------------------------------------------
# Method evaluation


@dataclass(frozen=True)
class EvalReport:
    """Table-style summary; ``auc``, ``sn`` and ``sp`` are percentages and
    ``threshold`` is on the posterior-probability scale."""

    auc: float
    threshold: float
    sn: float
    sp: float
    n_ss: int
    n_ds: int
    method: str
    n_features: int
    dataset: str = ""
    prior_ss: float = 0.5
    roc: RocCurve | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"auc": self.auc, "threshold": self.threshold, "sn": self.sn, "sp": self.sp,
                "n_ss": self.n_ss, "n_ds": self.n_ds, "method": self.method,
                "n_features": self.n_features, "dataset": self.dataset,
                "prior_ss": self.prior_ss}


def logit(p: float) -> float:
    return math.log(p) - math.log(1.0 - p)


def evaluate_model(model: Model, m: TraceMatrix, prior_ss: float = 0.5, method: str = "",
                   dataset: str = "") -> EvalReport:
    """Score every pair of ``m`` by its posterior and summarize the ROC curve.

    The ROC is built on log LR, which orders pairs exactly like the posterior
    without saturating at 0 or 1; adding the prior before ranking could merge
    nearly equal scores in floating point and make the curve prior-dependent.
    Thresholds are then shifted by ``logit(prior)`` onto the posterior
    log-odds scale.
    """
    if not 0.0 < prior_ss < 1.0:
        raise ValueError("prior_ss must lie strictly between 0 and 1")
    p = enumerate_pairs(m)
    if p.n_ss == 0 or p.n_ds == 0:
        raise EvaluationError(f"{dataset or 'dataset'} needs both same- and different-source pairs")
    log_lr = log_lr_scores(model, m, p)
    roc = roc_auc(log_lr[p.same], log_lr[~p.same])
    roc = replace(roc, thresholds=roc.thresholds + logit(prior_ss))
    t, sn, sp = youden_best(roc)
    n_features = len(model.feature_subset) if model.feature_subset is not None else m.n_features
    return EvalReport(100.0 * roc.auc, float(expit(t)), 100.0 * sn, 100.0 * sp, p.n_ss, p.n_ds,
                      method, n_features, dataset, prior_ss, roc)


def evaluate_method(cal: TraceMatrix, test: TraceMatrix, cfg: MethodConfig,
                    prior_ss: float = 0.5, model: Model | None = None
                    ) -> tuple[EvalReport, EvalReport]:
    """Fit on the calibration pairs, report on calibration and test pairs."""
    shared = set(cal.subject_ids) & set(test.subject_ids)
    if shared:
        raise LeakageError(f"{len(shared)} subject(s) appear in both sets, e.g. {sorted(shared)[0]!r}")
    if model is None:
        model = fit_method(cal, enumerate_pairs(cal), cfg)
    return (evaluate_model(model, cal, prior_ss, cfg.method, "calibration"),
            evaluate_model(model, test, prior_ss, cfg.method, "test"))


_LABELS = {"direct": "Direct", "indirect_scalar": "Indirect scal. d",
           "indirect_vectorial": "Indirect vect. d"}


def format_table(rows: list[tuple[EvalReport, EvalReport]]) -> str:
    """Fixed-width table: AUC, threshold, Sn, Sp on calibration and test."""
    head1 = f"{'Method':<18}{'Calibration':^32}{'Test':^32}"
    cols = f"{'AUC':>8}{'thr':>8}{'Sn':>8}{'Sp':>8}"
    head2 = f"{'':<18}{cols}{cols}"
    lines = [head1, head2]
    for cal, test in rows:
        label = _LABELS.get(cal.method, cal.method)
        cells = "".join(f"{r.auc:8.1f}{r.threshold:8.2f}{r.sn:8.1f}{r.sp:8.1f}" for r in (cal, test))
        lines.append(f"{label:<18}{cells}")
    return "\n".join(lines)
