import numpy as np
import pytest

import utilgate as ug


def test_tensor_round_trip(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(3, 4)
    ug.save_tensor(a, str(tmp_path / "a.utct"))
    b = ug.load_tensor(str(tmp_path / "a.utct"))
    assert b.dtype == np.float32 and np.array_equal(a, b)
    raw = ug.encode_tensor(np.array([0.0], dtype=np.float32))
    assert len(raw) == 36 and raw[:4] == b"UTCT"
    labels = np.array([[1, 2], [3, 255]], dtype=np.int32)
    assert np.array_equal(ug.decode_tensor(ug.encode_tensor(labels)), labels)


def test_nan_rejected():
    with pytest.raises(ug.FormatError):
        ug.encode_tensor(np.array([1.0, np.nan], dtype=np.float32))


def test_perturb_identity_and_determinism():
    logits, labels = ug.gen_blobs(classes=5, per_class=20, seed=1)
    assert np.array_equal(ug.perturb(logits, 0.0, seed=3), logits)
    a = ug.perturb(logits, 1.0, seed=3)
    assert np.array_equal(a, ug.perturb(logits, 0.5, seed=3, delta=2.0))
    assert not np.array_equal(a, logits)
    flipped = ug.perturb(logits, 0.5, mode="targeted_flip", seed=3, labels=labels)
    assert ug.evaluate("accuracy", ug.argmax_classes(flipped), labels)["value"] == 0.0


def test_region_mask():
    logits, truth, importance = ug.gen_scene(seed=2)
    mask = ug.make_mask(importance, tau=0.5)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    out = ug.perturb(logits, 2.0, mode="region", seed=1, mask=mask)
    assert np.array_equal(out[:, mask == 0], logits[:, mask == 0])
    with pytest.raises(ug.InvalidArgument):
        ug.perturb(logits, 2.0, mode="region", seed=1)
    with pytest.raises(ug.ShapeError):
        ug.perturb(logits, 2.0, mode="region", seed=1, mask=mask[:10])


def test_metrics():
    truth = np.array([[0, 1], [1, 255]], dtype=np.int32)
    r = ug.evaluate("miou", truth, truth, 2)
    assert r["value"] == 1.0 and r["sample_count"] == 3


def test_calibrate_fit_solve_tier():
    logits, labels = ug.gen_blobs(per_class=50, seed=4)
    table = ug.calibrate(logits, labels, grid=[0, 0.25, 0.5, 1, 2, 4], trials=5, seed=1)
    assert table.startswith("# utilgate calibration")
    assert table == ug.calibrate(logits, labels, grid=[0, 0.25, 0.5, 1, 2, 4], trials=5, seed=1, workers=3)
    fit = ug.fit(table, "auto")
    sigma, clamp = ug.solve_sigma(fit, 0.5)
    assert clamp == "none" and abs(ug.predict(fit, sigma) - 0.5) < 1e-9
    assert ug.solve_sigma(fit, 1.0) == (0.0, "above_max")
    policy = ug.make_policy(fit, "accuracy", 7, [("free", 0.3), ("full", 1.0)])
    assert ug.resolve_tier(policy, "full")[0] == 0.0
    assert np.array_equal(ug.apply_tier(policy, "full", logits, 5), logits)
    assert not np.array_equal(ug.apply_tier(policy, "free", logits, 5), logits)
