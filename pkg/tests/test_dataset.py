import json

import numpy as np
import pytest

from rlpath import dataset
from rlpath.scenegen import rng, tracer
from rlpath.scenegen.scene import get_scene


def _small(tmp_path, name, seed=3):
    return dataset.generate([get_scene("mirror")], tmp_path / name, seed=seed, resolution=(16, 16), frames=20,
                            ref_spp=8)


def test_same_seed_same_hash(tmp_path):
    a = _small(tmp_path, "a")
    b = _small(tmp_path, "b")
    assert a["content_hash"] == b["content_hash"]
    assert _small(tmp_path, "c", seed=4)["content_hash"] != a["content_hash"]


def test_manifest_consistency(tiny_data):
    m = json.loads((tiny_data / "manifest.json").read_text())
    assert m["frame_count"] == sum(b - a for e in m["scenes"] for a, b in e["clips"])
    assert all(b - a == dataset.CLIP_LENGTH for e in m["scenes"] for a, b in e["clips"])
    ds = dataset.load(tiny_data, verify=True)
    assert ds.resolution == (32, 32)
    assert [c.length for c in ds.clips(["sphere_box", "checker"])] == [20, 20]


def test_roundtrip_bytes(tiny_data, tmp_path):
    ds = dataset.load(tiny_data)
    dataset.save(ds, tmp_path / "copy")
    for src in tiny_data.rglob("*"):
        if src.is_file():
            assert (tmp_path / "copy" / src.relative_to(tiny_data)).read_bytes() == src.read_bytes()
    assert dataset.load(tmp_path / "copy", verify=True).manifest == ds.manifest


def test_bank_entries_recompute_from_tracer(tiny_data):
    ds = dataset.load(tiny_data)
    entry = ds.manifest["scenes"][1]
    scene = get_scene(entry["id"])
    gen = np.random.default_rng(0)
    for _ in range(6):
        f, i, j, k = int(gen.integers(20)), int(gen.integers(32)), int(gen.integers(32)), int(gen.integers(8))
        fs = scene.at(f, 32, 32)
        want = tracer.trace_sample(fs, f, (i, j), k, seed=entry["bank_seed"]).astype(np.float32)
        assert np.array_equal(ds.scenes[entry["id"]].bank[f, k, :, i, j], want)


def test_bank_mean_tracks_reference(tiny_data):
    ds = dataset.load(tiny_data)
    bank = ds.scenes["checker"].bank.astype(np.float64)  # (F, 8, 3, H, W)
    gen = np.random.default_rng(1)
    n = 1024
    z, diff, var = [], [], []
    for _ in range(150):
        f, i, j = int(gen.integers(20)), int(gen.integers(32)), int(gen.integers(32))
        fs = get_scene("checker").at(f, 32, 32)
        # independent 1024-path estimate of this pixel's mean and spread
        paths = tracer.trace_paths(fs, rng.frame_key(777, f), np.full(n, i), np.full(n, j), np.arange(n))
        mu, sig2 = paths.mean(axis=0), paths.var(axis=0, ddof=1)
        d = bank[f, :, :, i, j].mean(axis=0) - mu
        diff.append(d)
        var.append(sig2 / 8 + sig2 / n)
        keep = sig2 > 1e-6  # skip (near-)deterministic pixels; the bank is float32
        z.extend(np.abs(d[keep]) / np.sqrt(sig2[keep] / 8))
    z = np.array(z)
    assert len(z) > 100
    # Chebyshev: at most 1/k^2 of unit-variance deviations exceed k
    assert np.mean(z > 4.5) < 1 / 4.5**2
    # pooled over pixels the bank mean is unbiased
    agg = np.sum(diff, axis=0) / np.sqrt(np.sum(var, axis=0))
    assert np.all(np.abs(agg) < 4)


def test_concurrent_writer_is_refused(tmp_path):
    out = tmp_path / "locked"
    (tmp_path / "locked.lock").write_text("123")
    with pytest.raises(dataset.DataError, match="another writer"):
        _small(tmp_path, "locked")
    assert not out.exists()


def test_frame_count_must_fill_clips(tmp_path):
    with pytest.raises(dataset.DataError, match="clip length"):
        dataset.generate([get_scene("mirror")], tmp_path / "x", seed=0, resolution=(16, 16), frames=15, ref_spp=2)
    assert not (tmp_path / "x").exists()
    assert not list(tmp_path.glob(".x.tmp-*"))


def test_load_errors(tmp_path, tiny_data):
    with pytest.raises(dataset.DataError, match="gen-data"):
        dataset.load(tmp_path)
    ds = dataset.load(tiny_data)
    dataset.save(ds, tmp_path / "bad")
    ref = tmp_path / "bad" / "checker" / "0003.ref"
    ref.write_bytes(ref.read_bytes()[:-4])
    with pytest.raises(dataset.DataError, match="bytes"):
        dataset.load(tmp_path / "bad")
    with pytest.raises(dataset.DataError, match="scene"):
        ds.clips(["nope"])
