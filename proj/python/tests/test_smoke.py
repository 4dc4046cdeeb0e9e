import json

import numpy as np
import pytest

import fsad


def test_feature_roundtrip(tmp_path):
    a = np.arange(24, dtype=np.float64).reshape(2, 3, 4) * 0.25
    fsad.write_features(tmp_path / "a.carg", a)
    b = fsad.read_features(tmp_path / "a.carg")
    assert b.shape == (2, 3, 4)
    np.testing.assert_array_equal(a, b)


def test_errors_surface_as_exceptions(tmp_path):
    (tmp_path / "bad.carg").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(fsad.FsadError, match="bad.carg"):
        fsad.read_features(tmp_path / "bad.carg")
    with pytest.raises(fsad.FsadError):
        fsad.fit(tmp_path / "bad.carg", tmp_path / "m.cadn", {"gamma": 3})


def test_metrics():
    assert fsad.roc_auc([0.1, 0.9], [0, 1]) == 1.0
    assert fsad.roc_auc([0.5, 0.5], [0, 1]) == 0.5
    eye = np.eye(2)
    assert fsad.gaussian_w2(np.array([1.0, 0.0]), eye, np.zeros(2), eye) == pytest.approx(1.0)
    rep = fsad.select_augmentations({"a": 1.0, "b": 3.0})
    assert rep["kept"] == ["a"]
    assert rep["threshold"] == 2.0


def test_identity_warp_is_exact():
    a = np.random.default_rng(0).normal(size=(3, 6, 5))
    np.testing.assert_array_equal(fsad.affine_warp(a, [1, 0, 0, 0, 1, 0]), a)


def test_pipeline(tmp_path):
    manifest = fsad.synthetic_dataset(tmp_path / "data", support=4, test_normal=4, test_anomalous=4, seed=3)
    assert len(fsad.load_manifest(manifest)["images"]) == 12
    cfg = fsad.default_config()
    cfg["estimator"] = "patchcore"
    fsad.fit(manifest, tmp_path / "m.cadn", cfg)
    scores = fsad.score(tmp_path / "m.cadn", manifest, tmp_path / "out", cfg)
    assert len(scores["images"]) == 8
    report = fsad.evaluate(manifest, tmp_path / "r.json", config=cfg)
    assert report["summary"]["image_auc"]["mean"] >= 0.9
    assert json.loads((tmp_path / "r.json").read_text())["estimator"] == "patchcore"
    assert [e["inference_order"] for e in fsad.bench()["estimators"]] == ["O(HWD³)", "O(HWD′³)", "O(γKH²W²D²)"]
