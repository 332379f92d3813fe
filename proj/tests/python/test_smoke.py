import numpy as np
import pytest

import oex

SMALL = {
    "data": {"train_per_class": 30, "test_per_class": 30, "aux_count": 60, "ood_count": 60},
    "model": {"hidden": [8]},
    "train": {"epochs": 1, "pretrain_epochs": 2, "id_batch": 32, "outlier_batch": 32},
}


def test_config_defaults_and_strictness():
    cfg = oex.default_config()
    assert cfg["schema_version"] == 1
    assert oex.load_config({}) == cfg
    assert oex.load_config({"seed": 4})["seed"] == 4
    with pytest.raises(oex.ConfigError):
        oex.load_config({"bogus": 1})
    with pytest.raises(oex.ConfigError):
        oex.load_config({"train": {"epochs": "three"}})
    assert len(oex.config_digest()) == 16
    assert oex.config_digest({"outputs": {"dir": "x"}}) == oex.config_digest()
    assert oex.config_digest({"seed": 1}) != oex.config_digest()


def test_metrics():
    assert oex.auroc([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.5)
    assert oex.auroc([3.0, 4.0], [1.0, 2.0]) == 1.0
    assert oex.fpr_at_tpr([3.0, 4.0], [1.0, 2.0]) == 0.0
    assert 0.0 <= oex.aupr([0.2, 0.9], [0.5]) <= 1.0
    with pytest.raises(ValueError):
        oex.auroc([], [1.0])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 2))
    assert oex.mmd_rbf(x, x) == pytest.approx(0.0, abs=1e-12)
    assert oex.mmd_rbf(x, x + 3.0) > 0.1
    assert oex.split_half_mmd(x, 1.0) >= 0.0


def test_benchmark_and_pipeline():
    b = oex.generate_benchmark(SMALL)
    assert set(b) == {"id_train", "id_test", "aux", "ood"}
    assert "ring" in b["ood"]
    first = oex.run_pipeline(SMALL)
    second = oex.run_pipeline(SMALL)
    assert first["reports"] == second["reports"]
    assert first["model"] == second["model"]
    assert first["history_csv"].startswith("epoch,step,lr")
    report = first["reports"][0]
    assert {"method", "score", "records"} <= set(report)

    x = np.asarray(b["aux"]["x"])[:5]
    out = oex.extrapolate(first["model"], x, epsilon=0.05, steps=3)
    syn = np.asarray(out["synthesized"])
    assert syn.shape == x.shape
    assert np.max(np.abs(syn - x)) <= 0.05 + 1e-12
    assert all(a >= b for a, b in zip(out["final_loss"], out["initial_loss"]))


def test_self_checks():
    g = oex.gradcheck(cases=10, seed=1)
    assert g["passed"] and g["cases"] == 10
    v = oex.verify_bound(seed=0)
    assert v["trials"] == 100
    assert v["violation_fraction"] <= 0.05
