import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

import cpl

TINY = {
    "seed": 3,
    "benchmark": {"resolution": 16, "n_train": 8, "n_test": 3},
    "model": {"layers": 1, "hidden": 8, "latent": 4, "encoder_channels": 4, "summary_hidden": 8},
    "generator": {"width": 4, "latent": 4},
    "schedule": {"iterations": 2, "iterations_g": 1, "batch_size": 4},
    "eval": {"batch_size": 4, "strips_per_task": 1},
}


@pytest.fixture
def tiny(tmp_path):
    return dict(TINY, data_dir=str(tmp_path / "data"), output_dir=str(tmp_path / "out"))


def test_psnr_and_ssim_match_skimage():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.random((1, 32, 32))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        ref_psnr = peak_signal_noise_ratio(a[0], b[0], data_range=1.0)
        ref_ssim = structural_similarity(
            a[0], b[0], data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
        )
        assert cpl.psnr(b, a) == pytest.approx(ref_psnr, abs=1e-6)
        assert cpl.ssim(b, a) == pytest.approx(ref_ssim, abs=1e-4)


def test_identical_frames_cap_psnr():
    a = np.full((1, 16, 16), 0.3)
    assert cpl.psnr(a, a) == 100.0
    assert cpl.ssim(a, a) == pytest.approx(1.0)


def test_gaussian_kl_closed_form():
    rng = np.random.default_rng(1)
    mq, lq, mp, lp = (rng.standard_normal(6) for _ in range(4))
    vq, vp = np.exp(lq), np.exp(lp)
    ref = 0.5 * np.sum(lp - lq + (vq + (mq - mp) ** 2) / vp - 1)
    assert cpl.gaussian_kl(mq, lq, mp, lp) == pytest.approx(ref, abs=1e-10)


def test_replay_bookkeeping():
    assert cpl.fraction_count(0.07, 100) == 7
    assert cpl.fraction_count(1 / 3, 300) == 100
    assert cpl.split_replay_volume(100, 3) == [34, 33, 33]
    assert cpl.argmin_task([0.3, 0.1, 0.1]) == 2


def test_config_defaults_and_errors(tiny):
    c = cpl.parse_config({})
    assert c["schedule"]["iterations"] == 30000
    assert c["benchmark"]["order"] == [1, 2, 3]
    with pytest.raises(cpl.ConfigError):
        cpl.parse_config({"ablation": {"random_k": True}})
    with pytest.raises(ValueError):
        cpl.parse_config({"mode": "greedy"})


def test_generate_train_evaluate(tiny):
    dirs = cpl.generate(tiny)
    assert len(dirs) == 6
    with pytest.raises(cpl.ConfigError):
        cpl.generate(tiny)

    out = cpl.train(tiny)
    rows = out["matrix"]["rows"]
    assert len(rows) == 3 and all(len(r) == 3 for r in rows)
    assert all(math.isfinite(e["psnr"]) for r in rows for e in r)

    again = cpl.train(tiny)
    with open(out["eval_csv"]) as f:
        first = f.read()
    with open(again["eval_csv"]) as f:
        assert f.read() == first

    model = cpl.load_checkpoint(out["checkpoint"])
    assert model.num_tasks == 3
    assert model.completed_periods == 3
    frames = np.random.default_rng(2).random((2, 15, 1, 16, 16))
    pred = model.predict(frames, label=2, context=5, horizon=10)
    assert pred.shape == (2, 10, 1, 16, 16)
    assert pred.min() >= 0 and pred.max() <= 1
    k, errors = model.infer(frames[0])
    assert 1 <= k <= 3 and len(errors) == 3

    ev = cpl.evaluate(tiny, out["checkpoint"])
    assert len(ev["tasks"]) == 3


def test_joint_mode_has_one_row(tiny):
    cpl.generate(tiny)
    out = cpl.train(tiny, mode="joint")
    assert len(out["matrix"]["rows"]) == 1
