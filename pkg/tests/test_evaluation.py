import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distlr.errors import CVError, EvaluationError, LeakageError
from distlr.evaluation import (
    auc_mann_whitney,
    evaluate_method,
    evaluate_model,
    format_table,
    grouped_kfold,
    roc_auc,
    youden_best,
)
from distlr.methods import MethodConfig, fit_method
from distlr.pairs import enumerate_pairs
from distlr.synth import PanelConfig, generate_panel
from distlr.traces import SplitConfig, normalize_log, split_calibration_test

from conftest import make_matrix
from oracles import mann_whitney_auc, youden_sweep

# the low-noise panel below separates H_ss from H_ds completely, which is flagged
pytestmark = pytest.mark.filterwarnings("ignore::distlr.errors.ConvergenceWarning")

scores = st.lists(st.integers(0, 20).map(lambda v: v / 4), min_size=1, max_size=40)


# -- ROC / AUC --------------------------------------------------------------------

def test_auc_examples():
    assert roc_auc([0.9, 0.8], [0.3, 0.2]).auc == 1.0
    assert roc_auc([0.1, 0.5, 0.5], [0.5, 0.1, 0.5]).auc == 0.5
    assert roc_auc([0.8, 0.4], [0.6, 0.2]).auc == 0.75
    assert mann_whitney_auc([0.8, 0.4], [0.6, 0.2]) == float(Fraction(3, 4))


def test_auc_empty():
    with pytest.raises(EvaluationError):
        roc_auc([], [1.0])
    with pytest.raises(EvaluationError):
        auc_mann_whitney([1.0], [math.nan])


def test_roc_points():
    roc = roc_auc([0.8, 0.4], [0.6, 0.2])
    assert roc.thresholds[0] == math.inf and roc.thresholds[-1] == -math.inf
    np.testing.assert_array_equal(roc.thresholds[1:-1], [0.7, 0.5, 0.30000000000000004])
    assert roc.points()[0] == (math.inf, 0.0, 1.0)
    assert roc.points()[-1] == (-math.inf, 1.0, 0.0)
    lines = roc.to_csv_text().splitlines()
    assert lines[0] == "threshold,sensitivity,specificity"
    assert len(lines) == 6


@given(scores, scores)
def test_auc_matches_brute_force(ss, ds):
    roc = roc_auc(ss, ds)
    assert roc.auc == pytest.approx(mann_whitney_auc(ss, ds), abs=1e-12)
    assert np.all(np.diff(roc.sensitivity) >= 0)
    assert np.all(np.diff(roc.specificity) <= 0)
    assert np.all((roc.sensitivity >= 0) & (roc.sensitivity <= 1))


@given(scores, scores)
def test_auc_complement(ss, ds):
    assert roc_auc(ss, ds).auc + roc_auc(ds, ss).auc == pytest.approx(1.0, abs=1e-12)


@given(scores, scores, st.sampled_from([np.exp, np.arctan, lambda v: 5 * v - 2, np.cbrt]))
def test_auc_invariant_under_increasing_maps(ss, ds, f):
    a = roc_auc(ss, ds).auc
    assert roc_auc(f(np.array(ss)), f(np.array(ds))).auc == pytest.approx(a, abs=1e-12)


def test_youden_examples():
    t, sn, sp = youden_best(roc_auc([0.9, 0.8], [0.3, 0.2]))
    assert (sn, sp) == (1.0, 1.0) and 0.3 < t < 0.8
    same = [0.1, 0.2, 0.3]
    t, sn, sp = youden_best(roc_auc(same, same))
    assert sn + sp - 1 == pytest.approx(0.0, abs=1e-12)
    assert sp == 1.0
    t, sn, sp = youden_best(roc_auc([0.8, 0.4], [0.6, 0.2]))
    assert (sn + sp - 1, sp) == pytest.approx(youden_sweep([0.8, 0.4], [0.6, 0.2]))


@given(scores, scores)
def test_youden_matches_sweep(ss, ds):
    t, sn, sp = youden_best(roc_auc(ss, ds))
    j_ref, sp_ref = youden_sweep(ss, ds)
    assert sn + sp - 1 == pytest.approx(j_ref, abs=1e-12)
    assert sp == pytest.approx(sp_ref, abs=1e-12)
    # the threshold reproduces the reported point
    assert np.mean(np.array(ss) > t) == pytest.approx(sn)
    assert np.mean(np.array(ds) <= t) == pytest.approx(sp)


# -- grouped folds ---------------------------------------------------------------

def _subjects(counts):
    subj = [f"s{k}" for k, c in enumerate(counts) for _ in range(c)]
    return make_matrix(np.ones((len(subj), 1)), subj)


def test_kfold_six_subjects():
    m = _subjects([2, 1, 3, 2, 2, 1])
    folds = grouped_kfold(m, 3, seed=0)
    assert [len({m.subject_ids[r] for r in f}) for f in folds] == [2, 2, 2]


def test_kfold_deterministic():
    m = _subjects([1, 2, 3, 4] * 5)
    a, b = grouped_kfold(m, 3, 7), grouped_kfold(m, 3, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@given(st.lists(st.integers(1, 4), min_size=2, max_size=30), st.integers(2, 5),
       st.integers(0, 1000))
def test_kfold_integrity(counts, k, seed):
    m = _subjects(counts)
    if k > len(counts):
        with pytest.raises(CVError):
            grouped_kfold(m, k, seed)
        return
    folds = grouped_kfold(m, k, seed)
    rows = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(rows, np.arange(m.n_traces))
    owners = [{m.subject_ids[r] for r in f} for f in folds]
    for a in range(k):
        for b in range(a + 1, k):
            assert owners[a].isdisjoint(owners[b])
    sizes = [len(o) for o in owners]
    assert max(sizes) - min(sizes) <= 1


def test_kfold_errors():
    with pytest.raises(CVError):
        grouped_kfold(_subjects([1, 1]), 3)
    with pytest.raises(CVError):
        grouped_kfold(_subjects([1, 1]), 1)


# -- method evaluation -----------------------------------------------------------

@pytest.fixture(scope="module")
def separable():
    cfg = PanelConfig(n_subjects=40, n_features=30, n_informative=15, between_subject_sd=1.0,
                      within_subject_sd=0.1, seed=5)
    m = normalize_log(generate_panel(cfg))
    return split_calibration_test(m, SplitConfig(0.7, True, 0))


def test_separable_panel_test_auc(separable):
    cal, test = separable
    rc, rt = evaluate_method(cal, test, MethodConfig("indirect_scalar"))
    assert rt.auc > 95.0
    for r in (rc, rt):
        assert 0 <= r.sn <= 100 and 0 <= r.sp <= 100 and 0 <= r.threshold <= 1
    assert rt.dataset == "test" and rc.dataset == "calibration"
    assert rt.n_ss == enumerate_pairs(test).n_ss


def test_leakage_rejected(separable):
    cal, test = separable
    shared = cal.subjects()[0]
    leaky = test.take(np.arange(test.n_traces))
    rows = [i for i, s in enumerate(cal.subject_ids) if s == shared]
    from distlr.traces import TraceMatrix

    merged = TraceMatrix(np.vstack([leaky.X, cal.X[rows]]),
                         leaky.subject_ids + tuple(cal.subject_ids[r] for r in rows),
                         leaky.replicate_ids + tuple(cal.replicate_ids[r] for r in rows),
                         mode=cal.mode)
    with pytest.raises(LeakageError):
        evaluate_method(cal, merged, MethodConfig("indirect_scalar"))


@pytest.mark.parametrize("method", ["direct", "indirect_scalar", "indirect_vectorial"])
def test_prior_changes_threshold_not_auc(separable, method):
    cal, test = separable
    model = fit_method(cal, enumerate_pairs(cal), MethodConfig(method))
    reports = [evaluate_model(model, test, prior) for prior in (0.1, 0.5, 0.9)]
    assert reports[0].auc == reports[1].auc == reports[2].auc
    np.testing.assert_array_equal(reports[0].roc.sensitivity, reports[2].roc.sensitivity)
    assert reports[0].threshold <= reports[1].threshold <= reports[2].threshold


def test_evaluate_model_prior_bounds(separable):
    cal, test = separable
    model = fit_method(cal, enumerate_pairs(cal), MethodConfig("indirect_scalar"))
    with pytest.raises(ValueError):
        evaluate_model(model, test, 1.0)


def test_single_subject_test_set(separable):
    cal, test = separable
    one = test.take([i for i, s in enumerate(test.subject_ids) if s == test.subjects()[0]])
    model = fit_method(cal, enumerate_pairs(cal), MethodConfig("indirect_scalar"))
    with pytest.raises(EvaluationError):
        evaluate_model(model, one)


def test_format_table(separable):
    cal, test = separable
    rows = [evaluate_method(cal, test, MethodConfig(m)) for m in ("direct", "indirect_scalar")]
    text = format_table(rows)
    lines = text.splitlines()
    assert "Calibration" in lines[0] and "Test" in lines[0]
    assert lines[1].split() == ["AUC", "thr", "Sn", "Sp"] * 2
    assert lines[2].startswith("Direct") and lines[3].startswith("Indirect scal. d")
    cells = lines[3][18:].split()
    assert len(cells) == 8
    assert float(cells[0]) == round(rows[1][0].auc, 1)
    assert float(cells[5]) == round(rows[1][1].threshold, 2)
    d = rows[1][1].to_dict()
    assert {"auc", "threshold", "sn", "sp"} <= set(d)
