import math

import numpy as np
import pytest

import qkalign
from conftest import MICRO


def test_config_round_trip():
    text = qkalign.normalize_config(MICRO)
    assert qkalign.normalize_config(text) == text
    assert "model.dim = 16" in text


def test_bad_config_raises_with_category():
    with pytest.raises(qkalign.Error, match="^config:"):
        qkalign.normalize_config("model.colour = red\n")


def test_sinusoidal_map_is_offset_invariant():
    a = qkalign.sinusoidal_distance_map(6, 6, 32, 0, 0)
    b = qkalign.sinusoidal_distance_map(6, 6, 32, 2, 3)
    assert a[0, 0] == 0.0
    assert np.max(np.abs(a[:4, :3] - b[2:, 3:])) < 1e-9
    pe = qkalign.sinusoidal_encoding(6, 6, 32)
    assert pe.shape == (36, 32)
    assert np.allclose((pe**2).sum(axis=1), 16.0)


def test_entropy_and_purity():
    n = 9
    assert qkalign.attention_entropy(np.full((n, n), 1.0 / n)) == pytest.approx(math.log(n), abs=1e-12)
    assert qkalign.attention_entropy(np.eye(n)) == 0.0
    rng = np.random.default_rng(0)
    q = rng.normal(size=(16, 4))
    assert qkalign.purity(q, q + 100.0) == 1.0
    assert qkalign.centroid_distance(q, q + 1.0) == pytest.approx(2.0)


def test_metrics_match_numpy():
    rng = np.random.default_rng(1)
    p = rng.exponential(size=101)
    a = rng.exponential(scale=5.0, size=101)
    assert qkalign.median(list(p)) == float(np.median(p))
    assert qkalign.recall_at(list(p), list(a), 0.5, 5.0) == np.mean((p <= 0.5) & (a <= 5.0))


def test_train_evaluate_diagnose(tmp_path):
    data = tmp_path / "d.qkd"
    train_counts, test_counts = qkalign.generate_dataset(MICRO, 3, str(data))
    assert train_counts == [16, 16] and test_counts == [4, 4]
    result = qkalign.train(MICRO, str(data), str(tmp_path / "run"))
    assert len(result["loss"]) == 2
    assert all(math.isfinite(v) for v in result["loss"])
    ckpt = tmp_path / "run" / "checkpoint_final.qkc"
    report = qkalign.evaluate(str(ckpt), str(data))
    assert len(report["scenes"]) == 2
    assert 0.0 <= report["scene_accuracy"] <= 1.0
    records = qkalign.diagnose(str(ckpt), str(data), 2)
    assert len(records) == 2 * 2 * 4 * 2
    for r in records:
        assert 0.0 <= r["entropy_normalized"] <= 1.0
        assert r["purity"] is None or 0.0 <= r["purity"] <= 1.0
