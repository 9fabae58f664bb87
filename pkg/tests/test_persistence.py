import json

import numpy as np
import pytest

from distlr.errors import ModelParseError, ModelVersionError
from distlr.methods import MethodConfig, fit_method, log_lr_scores
from distlr.pairs import enumerate_pairs
from distlr.persistence import (
    RunManifest,
    atomic_write_text,
    file_digest,
    load_model,
    model_from_dict,
    save_model,
)


@pytest.fixture(scope="module", params=["direct", "indirect_scalar", "indirect_vectorial"])
def fitted(request, small_panel):
    cfg = MethodConfig(request.param, features=(0, 2, 3, 5, 7, 9) if request.param != "direct"
                       else None)
    return fit_method(small_panel, enumerate_pairs(small_panel), cfg)


def test_round_trip_bit_identical(fitted, small_panel, tmp_path):
    path = tmp_path / "model.json"
    save_model(fitted, path)
    back = load_model(path)
    width = 6 if getattr(fitted, "mode", "scalar") == "vectorial" else 1
    d = np.random.default_rng(0).uniform(0, 1.5, size=(100, width)).squeeze()
    assert np.asarray(back.log_lr(d)).tobytes() == np.asarray(fitted.log_lr(d)).tobytes()
    p = enumerate_pairs(small_panel)
    a, b = log_lr_scores(fitted, small_panel, p), log_lr_scores(back, small_panel, p)
    assert a.tobytes() == b.tobytes()
    assert back.feature_subset == fitted.feature_subset
    assert back.distance_kind == fitted.distance_kind


def test_truncated_file(fitted, tmp_path):
    path = tmp_path / "model.json"
    save_model(fitted, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelParseError):
        load_model(path)


def test_missing_file(tmp_path):
    with pytest.raises(ModelParseError):
        load_model(tmp_path / "absent.json")


def test_version_two_rejected(fitted, tmp_path):
    path = tmp_path / "model.json"
    save_model(fitted, path)
    d = json.loads(path.read_text())
    for version in (2, "2", None):
        d["schema"] = version
        path.write_text(json.dumps(d))
        with pytest.raises(ModelVersionError, match="version"):
            load_model(path)


@pytest.mark.parametrize("d", [[], {"schema": 1, "kind": "bayes"},
                               {"schema": 1, "kind": "indirect", "a": [1.0]},
                               {"schema": 1, "kind": "direct", "model_ss": {}}])
def test_malformed_models(d):
    with pytest.raises(ModelParseError):
        model_from_dict(d)


def test_manifest_reference_and_content(fitted, tmp_path):
    man = RunManifest("fit", {"method": "x"}, {"input": "abc"}, seed=3)
    path = tmp_path / "m.json"
    save_model(fitted, path, man)
    written = man.finish()
    assert written == tmp_path / "m.json.manifest.json"
    saved = json.loads(path.read_text())
    assert saved["manifest"] == {"id": man.run_id, "path": "m.json.manifest.json"}
    info = json.loads(written.read_text())
    assert info["schema"] == 1 and info["id"] == man.run_id
    assert info["seed"] == 3 and info["inputs"] == {"input": "abc"}
    assert info["outputs"] == [str(path)] and info["wall_time_s"] >= 0
    # the id depends on what was run, not when
    assert RunManifest("fit", {"method": "x"}, {"input": "abc"}, seed=3).run_id == man.run_id
    assert RunManifest("fit", {"method": "x"}, {"input": "abc"}, seed=4).run_id != man.run_id


def test_atomic_write_and_digest(tmp_path):
    path = tmp_path / "sub" / "out.txt"
    atomic_write_text(path, "hello\n")
    atomic_write_text(path, "world\n")
    assert path.read_text() == "world\n"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]
    assert file_digest(path) == \
        "e258d248fda94c63753607f7c4494ee0fcbe92f1a76bfdac795c9d84101eb317"
