import csv
import json

import numpy as np
import pytest
from conftest import TINY_CONFIG
from hypothesis import given, settings
from hypothesis import strategies as st

from rlpath import cli, imageio


def test_budget_examples(capsys):
    assert cli.budget_spp(100, 22.5, 69.0) == pytest.approx(1.1232, abs=1e-4)
    assert cli.budget_spp(100, 31.3, 69.0) == pytest.approx(0.9957, abs=1e-4)
    assert cli.budget_spp(100, 120, 69.0) == 0.0
    assert cli.budget_spp(50, 50) == 0.0
    assert cli.main(["budget", "100", "22.5"]) == 0
    assert capsys.readouterr().out.strip() == "1.1232 spp (1.12 affordable)"
    assert cli.affordable(0.9957) == 0.99 and cli.affordable(0.29) == 0.29 and cli.affordable(1.0) == 1.0
    assert cli.main(["budget", "100", "1", "0"]) == cli.EXIT_CONFIG


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(1e-3, 1e3), st.floats(0.1, 1e3))
def test_budget_linear_above_floor(t, inf, per, dt):
    a, b = cli.budget_spp(t, inf, per), cli.budget_spp(t + dt, inf, per)
    assert b >= a >= 0
    if t >= inf:
        assert b - a == pytest.approx(dt / per, rel=1e-9, abs=1e-9)


def test_parsers():
    assert cli.parse_resolution("32x64") == (32, 64)
    assert cli.parse_budgets("0.5,1, 2,4") == [0.5, 1.0, 2.0, 4.0]
    for bad in ("32", "axb", "0x16"):
        with pytest.raises(cli.CliConfigError):
            cli.parse_resolution(bad)
    with pytest.raises(cli.CliConfigError):
        cli.parse_budgets("1,x")


@pytest.fixture(scope="module")
def run_dir(tiny_data, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps({"variant": TINY_CONFIG}))
    assert cli.main(["train", "--config", str(cfg), "--data", str(tiny_data), "--out", str(root / "run"), "-q"]) == 0
    return root


def test_train_rejects_sub_one_budget_before_compute(tmp_path, capsys):
    code = cli.main(["train", "--variant", "A1_grad_approx", "--spp", "0.5", "--out", str(tmp_path / "r"),
                     "--data", str(tmp_path / "missing")])
    assert code == cli.EXIT_CONFIG
    assert "1 spp" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_train_outputs(run_dir):
    rows = list(csv.DictReader(open(run_dir / "run" / "metrics.csv")))
    assert len(rows) == TINY_CONFIG["epochs"] * 2
    assert (run_dir / "run" / "checkpoint.bin").exists()


def test_eval_table_and_repeatability(run_dir, tiny_data):
    args = ["eval", "--checkpoint", str(run_dir / "run"), "--data", str(tiny_data), "--budgets", "0.5,1,2,4",
            "--seed", "5"]
    assert cli.main(args + ["--out", str(run_dir / "e1"), "--dump-frames"]) == 0
    assert cli.main(args + ["--out", str(run_dir / "e2")]) == 0
    rows = list(csv.DictReader(open(run_dir / "e1" / "psnr.csv")))
    assert [float(r["budget"]) for r in rows] == [0.5, 1.0, 2.0, 4.0]
    assert all(np.isfinite(float(r["psnr"])) and float(r["psnr"]) > 0 for r in rows)
    assert (run_dir / "e1" / "psnr.csv").read_bytes() == (run_dir / "e2" / "psnr.csv").read_bytes()
    frames = sorted((run_dir / "e1" / "frames" / "spp_1").glob("*.pfm"))
    assert len(frames) == 20
    counts = imageio.read_png16(run_dir / "e1" / "frames" / "spp_1" / (frames[3].stem + ".counts.png"))
    assert counts.shape == (32, 32) and counts.max() <= 8


def test_eval_config_mismatch(run_dir, tiny_data):
    code = cli.main(["eval", "--checkpoint", str(run_dir / "run"), "--data", str(tiny_data),
                     "--variant", "B1_no_encoder", "--budgets", "1"])
    assert code == cli.EXIT_CONFIG


def test_eval_missing_data(run_dir, tmp_path):
    code = cli.main(["eval", "--checkpoint", str(run_dir / "run"), "--data", str(tmp_path), "--budgets", "1"])
    assert code == cli.EXIT_DATA


def _frames(d, imgs):
    d.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(imgs):
        imageio.write_pfm(d / f"f_{k:04d}.pfm", img)


def test_analyze_identical_sets(tmp_path):
    gen = np.random.default_rng(0)
    ref = [gen.uniform(0, 1, (12, 10, 3)).astype(np.float32) for _ in range(3)]
    noisy = [r + gen.normal(0, 0.05, r.shape).astype(np.float32) for r in ref]
    _frames(tmp_path / "a", noisy)
    _frames(tmp_path / "b", noisy)
    _frames(tmp_path / "ref", ref)
    assert cli.main(["analyze", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"), "--ref",
                     str(tmp_path / "ref"), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["histogram_mass"] == 3 * 12 * 10 and summary["mean_diff"] == 0.0
    hist = [int(r["count"]) for r in csv.DictReader(open(tmp_path / "out" / "histogram.csv"))]
    from rlpath import quality

    assert hist[quality.zero_bin()] == 360
    from PIL import Image

    binary = np.asarray(Image.open(tmp_path / "out" / "maps" / "f_0001.binary.png"))
    assert np.all(binary == 128)


def test_analyze_detects_the_closer_method(tmp_path):
    gen = np.random.default_rng(1)
    ref = [gen.uniform(0, 1, (16, 16, 3)).astype(np.float32) for _ in range(4)]
    _frames(tmp_path / "a", [r + gen.normal(0, 0.02, r.shape).astype(np.float32) for r in ref])
    _frames(tmp_path / "b", [r + gen.normal(0, 0.2, r.shape).astype(np.float32) for r in ref])
    _frames(tmp_path / "ref", ref)
    cli.main(["analyze", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"), "--ref", str(tmp_path / "ref"),
              "--out", str(tmp_path / "out")])
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["mean_diff"] < 0


def test_analyze_lists_missing_frames(tmp_path, capsys):
    img = np.zeros((4, 4, 3), np.float32)
    _frames(tmp_path / "a", [img, img])
    _frames(tmp_path / "b", [img])
    _frames(tmp_path / "ref", [img, img])
    code = cli.main(["analyze", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b"), "--ref",
                     str(tmp_path / "ref"), "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_DATA
    assert "f_0001" in capsys.readouterr().err


def test_gen_data_is_seed_determined(tmp_path, capsys):
    args = ["gen-data", "--scenes", "mirror", "--frames", "20", "--resolution", "16x16", "--ref-spp", "4",
            "--seed", "9"]
    assert cli.main(args + ["--out", str(tmp_path / "x")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "y")]) == 0
    hx = json.loads((tmp_path / "x" / "manifest.json").read_text())["content_hash"]
    hy = json.loads((tmp_path / "y" / "manifest.json").read_text())["content_hash"]
    assert hx == hy
    assert cli.main(["gen-data", "--scenes", "nope", "--out", str(tmp_path / "z")]) == cli.EXIT_CONFIG
    assert cli.main(args[:4] + ["15", "--out", str(tmp_path / "w")]) == cli.EXIT_DATA


def test_divergence_exit_code(monkeypatch, run_dir, tiny_data):
    from rlpath import pipeline

    def boom(*a, **k):
        raise pipeline.DivergenceError("loss is nan")

    monkeypatch.setattr(pipeline, "train", boom)
    code = cli.main(["train", "--config", str(run_dir / "run.json"), "--data", str(tiny_data), "--out",
                     str(run_dir / "div")])
    assert code == cli.EXIT_DIVERGED
