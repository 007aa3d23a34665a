import math

import numpy as np
import pytest

import xvfg


def test_psnr_and_ssim_closed_forms():
    a = np.zeros((1, 3, 16, 16))
    b = np.full((1, 3, 16, 16), 127.5)
    assert xvfg.psnr(a, b) == pytest.approx(10 * math.log10(4), abs=1e-12)
    x = np.random.default_rng(0).uniform(0, 255, (1, 3, 16, 16))
    assert xvfg.ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert math.isinf(xvfg.psnr(x, x))


def test_kl_closed_form():
    assert xvfg.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-10)


def test_toy_pair_layout():
    s = xvfg.toy_pair(3, 32)
    assert s["aerial"].shape == (1, 3, 32, 32)
    assert s["ground"].shape == (1, 3, 32, 32)
    sem = s["ground_semantic"]
    assert sem.shape == (1, 4, 32, 32)
    np.testing.assert_array_equal(sem.sum(axis=1), 1.0)
    assert s["aerial"].min() >= -1.0 and s["aerial"].max() <= 1.0


def test_gradcheck_attention():
    results = xvfg.gradcheck("attention", 2)
    assert {r["op"] for r in results} >= {"channel_attention", "spatial_attention"}
    assert all(r["passed"] for r in results)


def test_short_training_run():
    cfg = {"size": "32", "iterations": "3", "batch_size": "2", "base_channels": "4",
           "feature_channels": "8", "disc_base_channels": "4", "ablation": "A", "seed": "1"}
    log = xvfg.train(cfg)
    assert [r["iter"] for r in log] == [1, 2, 3]
    assert all(r["d2"] is None for r in log)
    assert all(math.isfinite(r["total"]) for r in log)
    assert log == xvfg.train(cfg)


def test_errors_map_to_value_error():
    with pytest.raises(ValueError):
        xvfg.train({"colour": "red"})
    with pytest.raises(ValueError):
        xvfg.ssim(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 4)))
