"""Filter feature selection: rank features by a one-sided test on per-feature
pair differences, then choose how many to keep by grouped cross-validation."""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DistLRError, ModeError
from .evaluation import grouped_kfold, roc_auc
from .methods import MethodConfig, fit_method, log_lr_scores
from .pairs import PairSet, check_pairs, enumerate_pairs
from .stattests import fisher_exact, wilcoxon_ranksum
from .traces import TraceMatrix

DEFAULT_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 300, 400, 500, 600, 741)


def default_grid(n_features: int) -> list[int]:
    return sorted({g for g in DEFAULT_GRID if g <= n_features} | {n_features})


@dataclass(frozen=True, eq=False)
class FeatureRanking:
    order: np.ndarray
    p_values: np.ndarray
    log_p: np.ndarray
    test_kind: str
    feature_names: tuple[str, ...] = ()

    def top(self, count: int) -> tuple[int, ...]:
        return tuple(int(k) for k in self.order[:count])

    def to_csv_text(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["rank", "feature_index", "feature_name", "p_value"])
        for r, k in enumerate(self.order, start=1):
            name = self.feature_names[k] if self.feature_names else f"f_{k + 1}"
            w.writerow([r, int(k), name, repr(float(self.p_values[k]))])
        return out.getvalue()


def _binary_table(col: np.ndarray, p: PairSet, complete: bool) -> list[list[int]]:
    ss_diff = np.count_nonzero(col[p.i[p.same]] != col[p.j[p.same]])
    if complete:
        ones = int(np.count_nonzero(col))
        all_diff = ones * (col.size - ones)
    else:
        all_diff = int(np.count_nonzero(col[p.i] != col[p.j]))
    ds_diff = all_diff - ss_diff
    return [[p.n_ss - ss_diff, ss_diff], [p.n_ds - ds_diff, ds_diff]]


def rank_features(m: TraceMatrix, p: PairSet) -> FeatureRanking:
    """Order features from most to least discriminative.

    Each feature's absolute pair differences are compared between H_ss and
    H_ds pairs with a one-sided test (smaller under H_ss): Wilcoxon rank-sum
    for continuous features, Fisher's exact test for dichotomized ones.
    Ordering is by ascending p-value, ties broken by feature index.
    """
    check_pairs(m, p)
    if m.mode == "raw":
        raise ModeError("rank_features needs normalized or dichotomized features")
    if p.n_ss == 0 or p.n_ds == 0:
        raise ModeError("ranking needs both same- and different-source pairs")
    n = m.n_features
    log_p = np.empty(n)
    p_vals = np.empty(n)
    if m.mode == "dichotomized":
        kind = "fisher"
        complete = p.n_pairs == m.n_traces * (m.n_traces - 1) // 2
        for k in range(n):
            res = fisher_exact(_binary_table(m.X[:, k], p, complete))
            p_vals[k], log_p[k] = res
    else:
        kind = "wilcoxon"
        for k in range(n):
            diff = np.abs(m.X[p.i, k] - m.X[p.j, k])
            res = wilcoxon_ranksum(diff[p.same], diff[~p.same])
            p_vals[k], log_p[k] = res
    order = np.lexsort((np.arange(n), log_p))
    return FeatureRanking(order, p_vals, log_p, kind, m.names())


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Cross-validated AUC per candidate feature count.

    ``cv_auc_by_count[c] = (mean, sd)`` over folds; sd is the sample standard
    deviation of the per-fold AUCs.  Counts where the method could not be
    fitted or scored on some fold hold NaN and are never selected.
    """

    best_count: int
    cv_auc_by_count: dict[int, tuple[float, float]]
    grid: tuple[int, ...]
    features: tuple[int, ...]
    ranking: FeatureRanking | None = None
    fold_aucs: dict[int, tuple[float, ...]] = field(default_factory=dict)
    fold_train_subjects: tuple[tuple[str, ...], ...] = ()
    fold_rankings: tuple[FeatureRanking, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        return {
            "best_count": self.best_count,
            "grid": list(self.grid),
            "features": list(self.features),
            "cv_auc_by_count": {str(c): {"mean": num(mu), "sd": num(sd),
                                         "folds": [num(a) for a in self.fold_aucs.get(c, ())]}
                                for c, (mu, sd) in self.cv_auc_by_count.items()},
        }


def select_count_cv(cal: TraceMatrix, cfg: MethodConfig, grid=None, k: int = 3,
                    seed: int = 0) -> SelectionResult:
    """Pick the feature count with the highest mean held-out AUC.

    Within each fold the ranking is recomputed from the training subjects'
    pairs only, so held-out traces never influence which features are kept.
    Ties in mean AUC go to the smaller count.  The returned ``features`` are
    the top ``best_count`` of a ranking computed on the whole calibration set.
    """
    grid = tuple(sorted(set(default_grid(cal.n_features) if grid is None else grid)))
    if not grid:
        raise ValueError("grid must not be empty")
    if grid[0] < 1 or grid[-1] > cal.n_features:
        raise ValueError(f"grid counts must lie in [1, {cal.n_features}]")
    folds = grouped_kfold(cal, k, seed)
    per_count: dict[int, list[float]] = {c: [] for c in grid}
    train_subjects = []
    rankings = []
    for held_rows in folds:
        train_rows = np.setdiff1d(np.arange(cal.n_traces), held_rows)
        train, held = cal.take(train_rows), cal.take(held_rows)
        train_pairs = enumerate_pairs(train)
        held_pairs = enumerate_pairs(held)
        ranking = rank_features(train, train_pairs)
        rankings.append(ranking)
        train_subjects.append(tuple(train.subjects()))
        for c in grid:
            try:
                model = fit_method(train, train_pairs, cfg.with_features(ranking.top(c)))
                scores = log_lr_scores(model, held, held_pairs)
                auc = roc_auc(scores[held_pairs.same], scores[~held_pairs.same]).auc
            except DistLRError:
                auc = math.nan
            per_count[c].append(auc)

    table = {}
    for c, aucs in per_count.items():
        a = np.array(aucs)
        sd = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
        table[c] = (float(a.mean()), sd)
    feasible = [c for c in grid if not math.isnan(table[c][0])]
    if not feasible:
        raise DistLRError("no candidate feature count could be evaluated")
    best = max(feasible, key=lambda c: (table[c][0], -c))
    full_ranking = rank_features(cal, enumerate_pairs(cal))
    return SelectionResult(best, table, grid, full_ranking.top(best), full_ranking,
                           {c: tuple(v) for c, v in per_count.items()},
                           tuple(train_subjects), tuple(rankings))
