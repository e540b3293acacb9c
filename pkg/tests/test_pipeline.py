import csv
import math

import numpy as np
import pytest
from conftest import TINY_CONFIG
from hypothesis import given, settings
from hypothesis import strategies as st

from rlpath import budget, dataset, nets
from rlpath.pipeline import (
    ConfigError,
    DivergenceError,
    SubSampleBudgetError,
    VariantConfig,
    build_models,
    evaluate,
    lr_schedule,
    step_frame,
    train,
)
from rlpath.pipeline.loop import a1_sampler_grads, frame_inputs
from rlpath.tensorgrad import backward


def tiny(**kw):
    d = dict(TINY_CONFIG)
    d.update(kw)
    return VariantConfig.from_dict(d)


@pytest.fixture(scope="module")
def data(tiny_data):
    return dataset.load(tiny_data)


# ---- schedule and config


def test_lr_schedule_shape():
    total = 1000
    assert lr_schedule(0, total, 1e-3, 1e-8) == pytest.approx(1e-8)
    assert lr_schedule(150, total, 1e-3, 1e-8) == pytest.approx(1e-3)
    assert lr_schedule(total, total, 1e-3, 1e-8) == pytest.approx(1e-8)
    lrs = [lr_schedule(s, total, 1e-3, 1e-8) for s in range(total + 1)]
    assert all(a <= b for a, b in zip(lrs[:150], lrs[1:151]))
    assert all(a >= b for a, b in zip(lrs[150:], lrs[151:]))
    # log-linear decay: the midpoint of the decay phase is the geometric mean
    mid = lr_schedule(575, total, 1e-3, 1e-8)
    assert mid == pytest.approx(math.sqrt(1e-3 * 1e-8), rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5000), st.integers(0, 6000))
def test_lr_schedule_bounded(total, step):
    lr = lr_schedule(step, total, 1e-3, 1e-8)
    assert 1e-8 * (1 - 1e-9) <= lr <= 1e-3 * (1 + 1e-9)


def test_config_rejections():
    for mode in ("A1_grad_approx", "A2_uniform"):
        with pytest.raises(SubSampleBudgetError, match="1 spp"):
            VariantConfig(mode=mode, spp_budget_avg=0.5)
    VariantConfig(mode="ours", spp_budget_avg=0.01)
    with pytest.raises(ConfigError):
        VariantConfig(mode="nope")
    with pytest.raises(ConfigError, match="16"):
        VariantConfig(resolution=(40, 64))
    with pytest.raises(ConfigError, match="overlap"):
        VariantConfig(train_scenes=("checker",), test_scenes=("checker",))
    with pytest.raises(ConfigError, match="unknown config keys"):
        VariantConfig.from_dict({"mdoe": "ours"})


def test_config_roundtrip():
    cfg = tiny(mode="C_averaged", spp_budget_avg=0.3)
    assert VariantConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.averaged and cfg.uses_policy and cfg.temporal
    b2 = tiny(mode="B2_no_temporal")
    assert not b2.temporal and not b2.uses_encoder


# ---- single frames


def _step(cfg, data, t=3, carried=None, spp=None, train_mode=False, models=None):
    models = models or build_models(cfg)
    clip = data.clips(["checker"])[0]
    inp = frame_inputs([clip], t)
    if carried is None:
        carried = np.random.default_rng(0).uniform(-1, 1, (1, nets.LATENT, 32, 32)).astype(np.float32)
    return models, inp, step_frame(cfg, models, inp, t, carried, seed=11, spp=spp, train=train_mode)


def test_first_frame_is_uniform(data):
    cfg = tiny(spp_budget_avg=2.0)
    _, _, out = _step(cfg, data, t=0)
    assert np.all(out.counts == 2) and out.action is None
    assert np.all(out.warped == 0)


def test_policy_frame_spends_the_budget(data):
    for spp in (0.3, 1.0, 2.0, 4.0):
        cfg = tiny(spp_budget_avg=spp)
        _, _, out = _step(cfg, data)
        alloc = budget.allocate(out.action.action[:, 0], cfg.budget_total(), cfg.cap)
        assert np.array_equal(out.counts, alloc.counts)
        # rounding slack is accepted, not redistributed
        assert abs(out.counts.sum() + alloc.shortfall.sum() - cfg.budget_total()) <= 32 * 32 / 2
        assert out.counts.min() >= 0 and out.counts.max() <= cfg.cap
        assert np.all(out.buffer.valid_count == out.counts)


def test_no_temporal_variant_sees_zero_state(data):
    _, _, out = _step(tiny(mode="B2_no_temporal"), data)
    assert np.all(out.warped == 0)
    _, _, out = _step(tiny(mode="ours"), data)
    assert np.any(out.warped != 0)


def test_no_encoder_variant_uses_fixed_features(data):
    models, _, out = _step(tiny(mode="B1_no_encoder"), data)
    assert models.encoder is None
    assert out.latent.shape == (1, nets.LATENT, 32, 32)
    assert np.all(out.latent.data[:, :24] == np.where(out.buffer.data >= 0, out.latent.data[:, :24], -1))


def test_averaged_variant_collapses_slots(data):
    _, _, out = _step(tiny(mode="C_averaged", spp_budget_avg=2.0), data)
    assert out.buffer.valid_count.max() <= 1
    assert np.all(out.buffer.data[:, 3:] == -1)


def test_uniform_variant_ignores_the_state(data):
    cfg = tiny(mode="A2_uniform", spp_budget_avg=2.0)
    _, _, out = _step(cfg, data)
    assert np.all(out.counts == 2)


def test_grad_approx_variant_floors_and_flows(data):
    cfg = tiny(mode="A1_grad_approx", spp_budget_avg=1.0)
    models, inp, out = _step(cfg, data, train_mode=True)
    assert out.counts.min() >= 1
    backward(out.loss.mixed, models.supervised_params())
    grads = a1_sampler_grads(cfg, models, out, inp.ref)
    assert set(grads) == {p.name for p in models.policy.params}
    assert all(np.all(np.isfinite(g)) for g in grads.values())
    assert any(np.any(g != 0) for k, g in grads.items() if k.startswith("importance"))
    assert np.all(grads["policy.log_std"] == 0)
    with pytest.raises(SubSampleBudgetError):
        evaluate(cfg, models, data, [0.5])


def test_nan_reference_aborts(data):
    cfg = tiny()
    models = build_models(cfg)
    clip = data.clips(["checker"])[0]
    inp = frame_inputs([clip], 2)
    inp.ref = inp.ref.copy()
    inp.ref[0, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        step_frame(cfg, models, inp, 2, np.zeros((1, 32, 32, 32), np.float32), seed=0)


# ---- training runs


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_training_is_deterministic_and_resumable(data, tmp_path):
    cfg = tiny(epochs=2)
    full = train(cfg, data, tmp_path / "full")
    rows = _read(tmp_path / "full" / "metrics.csv")
    assert len(rows) == 2 * 2
    assert [r["split"] for r in rows] == ["train", "test", "train", "test"]
    assert all(math.isfinite(float(r["psnr"])) for r in rows)
    assert len(_read(tmp_path / "full" / "telemetry.csv")) == 2

    again = train(cfg, data, tmp_path / "again")
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == (tmp_path / "full" / "metrics.csv").read_bytes()

    part = train(cfg, data, tmp_path / "part", stop_after_epoch=0)
    assert part.epochs_run == 1
    resumed = train(cfg, data, tmp_path / "part")
    assert resumed.epochs_run == 1
    assert (tmp_path / "part" / "metrics.csv").read_bytes() == (tmp_path / "full" / "metrics.csv").read_bytes()
    assert (tmp_path / "part" / "telemetry.csv").read_bytes() == (tmp_path / "full" / "telemetry.csv").read_bytes()
    for k, v in full.models.tensors().items():
        assert np.array_equal(v, resumed.models.tensors()[k]), k
    assert np.array_equal(full.models.value_norm.state(), resumed.models.value_norm.state())


def test_resume_rejects_foreign_checkpoint(data, tmp_path):
    train(tiny(epochs=1), data, tmp_path / "run")
    with pytest.raises(Exception, match="config hash"):
        train(tiny(epochs=1, mode="B1_no_encoder"), data, tmp_path / "run")


def test_evaluate_rows_and_repeatability(data):
    cfg = tiny()
    models = build_models(cfg)
    a = evaluate(cfg, models, data, [0.5, 1.0, 2.0, 4.0], seed=3)
    b = evaluate(cfg, models, data, [0.5, 1.0, 2.0, 4.0], seed=3)
    assert len(a) == 4 and a == b
    assert all(r["psnr"] > 0 and math.isfinite(r["psnr"]) for r in a)
    assert all(r["frames"] == 20 for r in a)


def test_saturated_head_bias_flattens_the_allocation(data):
    flat = _step(tiny(head_bias=2.0), data)[2].counts.astype(float)
    base = _step(tiny(), data)[2].counts.astype(float)
    assert flat.std() / flat.mean() < 0.5 * base.std() / base.mean()
