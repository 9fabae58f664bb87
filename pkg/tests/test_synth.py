import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from distlr.errors import ConfigError, ConvergenceWarning
from distlr.evaluation import evaluate_method
from distlr.methods import MethodConfig
from distlr.pairs import enumerate_pairs, scalar_distances
from distlr.synth import (
    REFERENCE_REPLICATE_PROFILE,
    PanelConfig,
    feature_strengths,
    generate_panel,
    informative_features,
)
from distlr.traces import (
    SplitConfig,
    normalize_log,
    read_csv_text,
    split_calibration_test,
    to_csv_text,
)


def _test_auc(cfg, method="indirect_scalar"):
    m = normalize_log(generate_panel(cfg))
    cal, test = split_calibration_test(m, SplitConfig(0.6, True, cfg.seed))
    return evaluate_method(cal, test, MethodConfig(method))[1].auc / 100.0


def test_profile_counts():
    cfg = PanelConfig(n_subjects=534, replicate_profile=REFERENCE_REPLICATE_PROFILE, n_features=3,
                      n_informative=1)
    m = generate_panel(cfg)
    assert len(m.subjects()) == 534
    assert m.n_traces == cfg.n_traces == 1690
    assert enumerate_pairs(m).n_ss == cfg.n_same_source_pairs == 2075


@given(st.dictionaries(st.integers(1, 5), st.integers(1, 6), min_size=1, max_size=4),
       st.integers(0, 5))
def test_structure_matches_closed_form(profile, seed):
    n = sum(profile.values())
    assume(sum(r * c for r, c in profile.items()) >= 2)
    m = generate_panel(PanelConfig(n_subjects=n, replicate_profile=profile, n_features=4,
                                   n_informative=2, seed=seed))
    sizes = np.bincount(m.subject_codes())
    assert sorted(sizes.tolist()) == sorted(r for r, c in profile.items() for _ in range(c))
    p = enumerate_pairs(m)
    assert p.n_ss == sum(c * r * (r - 1) // 2 for r, c in profile.items())
    assert p.n_pairs == m.n_traces * (m.n_traces - 1) // 2


def test_determinism():
    cfg = PanelConfig(n_subjects=20, n_features=15, n_informative=4, sparsity=0.3, seed=8)
    a, b = generate_panel(cfg), generate_panel(cfg)
    assert a.X.tobytes() == b.X.tobytes()
    assert a.subject_ids == b.subject_ids and a.genders == b.genders and a.ages == b.ages
    c = generate_panel(PanelConfig(n_subjects=20, n_features=15, n_informative=4, sparsity=0.3,
                                   seed=9))
    assert a.X.tobytes() != c.X.tobytes()


def test_output_is_raw_non_negative_with_exact_zeros():
    cfg = PanelConfig(n_subjects=30, n_features=40, n_informative=10, sparsity=0.25, seed=1)
    m = generate_panel(cfg)
    assert m.mode == "raw"
    assert np.all(m.X >= 0)
    assert 0.15 < np.mean(m.X == 0) < 0.35


def test_config_embedded_in_csv():
    cfg = PanelConfig(n_subjects=5, n_features=3, n_informative=1, seed=2)
    text = to_csv_text(generate_panel(cfg))
    comment = next(line for line in text.splitlines() if line.startswith("#config: "))
    assert PanelConfig.from_json(comment[len("#config: "):]) == cfg
    back = read_csv_text(text)
    assert back.X.tobytes() == generate_panel(cfg).X.tobytes()


def test_zero_within_sd_gives_identical_replicates():
    cfg = PanelConfig(n_subjects=30, n_features=20, n_informative=8, within_subject_sd=0.0,
                      seed=4)
    m = normalize_log(generate_panel(cfg))
    p = enumerate_pairs(m)
    for kind in ("euclidean", "pearson", "spearman"):
        d = scalar_distances(m, p, kind)
        assert np.all(np.abs(d[p.same]) <= 1e-12)
    with pytest.warns(ConvergenceWarning, match="separated"):
        assert _test_auc(cfg) == 1.0


def test_no_informative_features_is_chance_level():
    cfg = PanelConfig(n_subjects=120, n_features=30, n_informative=0, seed=2)
    assert 0.45 <= _test_auc(cfg) <= 0.55


def test_informative_set_and_strengths():
    cfg = PanelConfig(n_features=50, n_informative=7, strength_spread=1.0, seed=3)
    idx = informative_features(cfg)
    assert idx.size == 7 and np.all(np.diff(idx) > 0)
    s = feature_strengths(cfg)
    assert s.min() == pytest.approx(np.exp(-1.0)) and s.max() == pytest.approx(np.exp(1.0))
    assert feature_strengths(PanelConfig(n_informative=0)).size == 0


def test_monotone_difficulty():
    # noise sd steps 0.2 -> 0.5 -> 1.0; the mean test AUC must not rise
    means = []
    for wsd in (0.2, 0.5, 1.0):
        aucs = [_test_auc(PanelConfig(n_subjects=40, n_features=20, n_informative=6,
                                      within_subject_sd=wsd, seed=s)) for s in range(5)]
        means.append(np.mean(aucs))
    assert means[1] <= means[0] + 0.01
    assert means[2] <= means[1] + 0.01


@pytest.mark.parametrize("kw", [
    dict(n_subjects=10, replicate_profile={2: 9}),
    dict(n_subjects=0),
    dict(n_features=5, n_informative=6),
    dict(between_subject_sd=0.0),
    dict(within_subject_sd=-0.1),
    dict(sparsity=1.0),
    dict(gender_fraction=1.5),
    dict(n_subjects=3, replicate_profile={0: 3}),
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        PanelConfig(**kw)
