import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distlr.errors import (
    DiagnosticError,
    DuplicateTraceError,
    ModeError,
    NormalizationError,
    ParseError,
    SchemaError,
    SplitError,
)
from distlr.synth import PanelConfig, generate_panel
from distlr.traces import (
    SplitConfig,
    dichotomize,
    ingest_csv,
    normalize_log,
    read_csv_text,
    repeatability,
    split_calibration_test,
    to_csv_text,
    write_csv,
)

from conftest import make_matrix

E1 = math.e - 1.0


# -- ingest -----------------------------------------------------------------

def test_ingest_minimal(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("subject_id,replicate_id,gender,age,a,b,c\n"
                    "s1,r1,M,40,1.0,2.0,0\n"
                    "s2,r1,F,,3.5,0,7\n")
    m = ingest_csv(path)
    assert m.n_traces == 2 and m.n_features == 3
    assert m.mode == "raw"
    assert m.feature_names == ("a", "b", "c")
    assert m.genders == ("M", "F") and m.ages == (40, None)
    np.testing.assert_array_equal(m.X, [[1, 2, 0], [3.5, 0, 7]])


def test_ingest_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(SchemaError):
        ingest_csv(path)


def test_ingest_negative_value_names_row():
    text = "subject_id,replicate_id,f_1\ns1,r1,1.0\ns1,r2,-1.0\n"
    with pytest.raises(ParseError) as info:
        read_csv_text(text)
    assert info.value.row == 2
    assert "row 2" in str(info.value)


def test_ingest_non_numeric():
    with pytest.raises(ParseError):
        read_csv_text("subject_id,replicate_id,f_1\ns1,r1,abc\n")


def test_ingest_missing_column():
    with pytest.raises(SchemaError):
        read_csv_text("subject,replicate_id,f_1\ns1,r1,1\n")


def test_ingest_duplicate_trace():
    with pytest.raises(DuplicateTraceError):
        read_csv_text("subject_id,replicate_id,f_1\ns1,r1,1\ns1,r1,2\n")


def test_mode_comment_round_trip(small_panel):
    back = read_csv_text(to_csv_text(small_panel))
    assert back.mode == "normalized_log"
    np.testing.assert_array_equal(back.X, small_panel.X)
    assert back.subject_ids == small_panel.subject_ids


decimals = st.decimals(min_value=0, max_value=10**6, places=4, allow_nan=False,
                       allow_infinity=False)


@given(st.lists(st.lists(decimals, min_size=3, max_size=3), min_size=1, max_size=6))
def test_ingest_emit_ingest_bit_exact(rows):
    lines = ["subject_id,replicate_id,f_1,f_2,f_3"]
    lines += [f"s{i},r1," + ",".join(str(v) for v in row) for i, row in enumerate(rows)]
    first = read_csv_text("\n".join(lines) + "\n")
    second = read_csv_text(to_csv_text(first))
    assert first.X.tobytes() == second.X.tobytes()
    assert first.subject_ids == second.subject_ids


def test_write_csv_is_atomic_and_readable(tmp_path, small_panel):
    path = tmp_path / "out.csv"
    write_csv(small_panel, path)
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]
    assert ingest_csv(path).fingerprint() == small_panel.fingerprint()


# -- normalize / dichotomize -------------------------------------------------

def test_normalize_examples():
    m = make_matrix([[E1, E1], [0.0, E1]], ["a", "b"])
    out = normalize_log(m)
    np.testing.assert_allclose(out.X, [[0.5, 0.5], [0.0, 1.0]], atol=1e-15)
    assert out.mode == "normalized_log"


def test_normalize_all_zero_trace():
    m = make_matrix([[1.0, 2.0], [0.0, 0.0]], ["a", "b"])
    with pytest.raises(NormalizationError, match="trace 1"):
        normalize_log(m)


def test_normalize_requires_raw(small_panel):
    with pytest.raises(ModeError):
        normalize_log(small_panel)


@given(arrays(np.float64, (4, 7), elements=st.floats(0, 1e9)).filter(
    lambda a: np.all(a.max(axis=1) > 1e-3)))
def test_normalize_rows_sum_to_one(X):
    out = normalize_log(make_matrix(X, list("abcd")))
    np.testing.assert_allclose(out.X.sum(axis=1), 1.0, atol=1e-12)


def test_dichotomize_examples():
    m = make_matrix([[0, 5.2, 0], [0, 0, 0], [0, 1, 1]], ["a", "b", "c"])
    out = dichotomize(m)
    np.testing.assert_array_equal(out.X, [[0, 1, 0], [0, 0, 0], [0, 1, 1]])
    # re-applying to the binary values gives the same matrix
    again = dichotomize(make_matrix(out.X, ["a", "b", "c"]))
    np.testing.assert_array_equal(again.X, out.X)


def test_dichotomize_threshold():
    m = make_matrix([[0.5, 2.0]], ["a"])
    np.testing.assert_array_equal(dichotomize(m, threshold=1.0).X, [[0, 1]])


# -- split --------------------------------------------------------------------

def _panel(n_subjects, reps=2, gender_fraction=0.5, seed=0):
    cfg = PanelConfig(n_subjects=n_subjects, replicate_profile={reps: n_subjects},
                      n_features=3, n_informative=1, gender_fraction=gender_fraction, seed=seed)
    return generate_panel(cfg)


def test_split_four_subjects():
    m = _panel(4)
    cal, test = split_calibration_test(m, SplitConfig(0.5, stratify_gender=False, seed=1))
    assert len(cal.subjects()) == 2 and len(test.subjects()) == 2
    assert not set(cal.subject_ids) & set(test.subject_ids)
    assert cal.n_traces + test.n_traces == m.n_traces


def test_split_412_of_534():
    cfg = PanelConfig(n_subjects=534, replicate_profile={1: 44, 2: 77, 3: 160, 4: 253},
                      n_features=2, n_informative=1, gender_fraction=218 / 534)
    m = generate_panel(cfg)
    cal, test = split_calibration_test(m, SplitConfig(412 / 534, True, 3))
    assert len(cal.subjects()) == 412
    assert len(test.subjects()) == 122


def test_split_deterministic():
    m = _panel(30)
    a = split_calibration_test(m, SplitConfig(0.7, True, 5))
    b = split_calibration_test(m, SplitConfig(0.7, True, 5))
    assert a[0].subject_ids == b[0].subject_ids


def test_split_needs_two_subjects():
    with pytest.raises(SplitError):
        split_calibration_test(_panel(1), SplitConfig(0.5))


def test_split_fraction_bounds():
    with pytest.raises(SplitError):
        SplitConfig(1.0)


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.integers(0, 2**32))
def test_split_integrity_and_gender_balance(n, fraction, gfrac, seed):
    m = _panel(n, reps=1, gender_fraction=gfrac, seed=seed % 1000)
    cal, test = split_calibration_test(m, SplitConfig(fraction, True, seed))
    assert cal.n_traces > 0 and test.n_traces > 0
    assert set(cal.subject_ids).isdisjoint(test.subject_ids)
    assert set(cal.subject_ids) | set(test.subject_ids) == set(m.subject_ids)
    for g in ("M", "F"):
        total = sum(1 for x in m.genders if x == g)
        on_cal = sum(1 for x in cal.genders if x == g)
        if total >= 2:
            assert abs(on_cal - fraction * total) <= 1.0 + 1e-9


# -- repeatability ----------------------------------------------------------

def test_repeatability_two_replicates():
    m = make_matrix([[1.0], [3.0]], ["s", "s"])
    rep = repeatability(m)
    assert rep.per_feature_rsd[0] == pytest.approx(70.71067811865476, abs=1e-12)
    assert rep.per_feature_rsd[0] == pytest.approx(100 * math.sqrt(2) / 2, abs=1e-12)


def test_repeatability_constant_feature():
    m = make_matrix([[5.0, 1.0], [5.0, 2.0], [7.0, 3.0], [7.0, 3.0]], ["a", "a", "b", "b"])
    assert repeatability(m).per_feature_rsd[0] == 0.0


def test_repeatability_format_and_order():
    m = generate_panel(PanelConfig(n_subjects=20, n_features=15, n_informative=5, seed=4))
    rep = repeatability(m)
    assert rep.iqi[0] <= rep.median_rsd <= rep.iqi[1]
    text = rep.format()
    head, tail = text.split(" [")
    assert float(head) == round(rep.median_rsd, 1)
    assert tail.endswith("]") and " ; " in tail


def test_repeatability_format_literal():
    from distlr.traces import RepeatabilityReport

    rep = RepeatabilityReport(np.zeros(1), 33.2, (17.9, 48.8), 490)
    assert rep.format() == "33.2 [17.9 ; 48.8]"


def test_repeatability_needs_replicates():
    with pytest.raises(DiagnosticError):
        repeatability(make_matrix([[1.0], [2.0]], ["a", "b"]))
