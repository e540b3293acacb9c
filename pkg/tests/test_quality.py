import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import convolve2d

from gradcheck import max_rel_error
from rlpath import quality
from rlpath.tensorgrad import Tensor


def oracle_msssim(x, y):
    """Plain-numpy MS-SSIM for one channel: 2-D valid convolution, 2x2 mean pooling."""
    x = np.clip(x, 0, 1)
    y = np.clip(y, 0, 1)
    levels = 5 if min(x.shape) >= 256 else 3
    w = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])[:levels]
    w = w / w.sum()
    c1, c2 = 0.01**2, 0.03**2
    out = 1.0
    for lev in range(levels):
        n = min(11, min(x.shape))
        n -= 1 - n % 2
        g = np.exp(-((np.arange(n) - (n - 1) / 2) ** 2) / (2 * 1.5**2))
        k = np.outer(g, g) / g.sum() ** 2

        def f(a):
            return convolve2d(a, k, mode="valid")

        mx, my = f(x), f(y)
        vx, vy = f(x * x) - mx**2, f(y * y) - my**2
        cov = f(x * y) - mx * my
        cs = (2 * cov + c2) / (vx + vy + c2)
        if lev == levels - 1:
            cs = cs * (2 * mx * my + c1) / (mx**2 + my**2 + c1)
        out *= max(cs.mean(), 1e-6) ** w[lev]
        if lev < levels - 1:
            h, wd = x.shape
            x = x.reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
            y = y.reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
    return out


def _pair(seed, shape=(2, 3, 32, 32)):
    gen = np.random.default_rng(seed)
    a = gen.uniform(0.05, 0.95, shape)
    b = np.clip(a + gen.normal(0, 0.15, shape), 0, 1)
    return a, b


@pytest.mark.parametrize("seed", range(5))
def test_msssim_matches_oracle(seed):
    a, b = _pair(seed)
    got = quality.msssim_per_channel(Tensor(a), Tensor(b)).data
    for i in range(2):
        for c in range(3):
            assert abs(got[i, c] - oracle_msssim(a[i, c], b[i, c])) < 1e-9


def test_msssim_five_scales_match_oracle():
    a, b = _pair(9, (1, 1, 256, 256))
    assert quality.scale_count(256, 256) == 5
    got = quality.msssim(Tensor(a), Tensor(b)).item()
    assert abs(got - oracle_msssim(a[0, 0], b[0, 0])) < 1e-9


def test_msssim_identity_symmetry_and_inversion():
    a, b = _pair(1)
    assert quality.msssim(Tensor(a), Tensor(a)).item() == pytest.approx(1.0, abs=1e-12)
    ab = quality.msssim(Tensor(a), Tensor(b)).item()
    ba = quality.msssim(Tensor(b), Tensor(a)).item()
    assert abs(ab - ba) < 1e-6
    # structured content away from mid-gray, against its negative
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    img = np.where((yy // 4 + xx // 4) % 2 == 0, 0.1, 0.9)[None, None] * np.ones((1, 3, 1, 1))
    assert quality.msssim(Tensor(img), Tensor(1 - img)).item() < 0.5


def test_msssim_size_error():
    with pytest.raises(quality.QualityError, match="32"):
        quality.msssim(Tensor(np.zeros((1, 3, 16, 40))), Tensor(np.zeros((1, 3, 16, 40))))


def test_msssim_gradient_32():
    a, b = _pair(2, (1, 3, 32, 32))
    err = max_rel_error(lambda x: quality.msssim(x, Tensor(b)), [a], max_entries=60, seed=2)
    assert err < 1e-3


def test_mixed_loss_composition():
    for seed in range(10):
        a, b = _pair(seed)
        lv = quality.mixed_loss(Tensor(a), Tensor(b))
        l1 = np.abs(a - b).mean()
        ms = np.mean([oracle_msssim(a[i, c], b[i, c]) for i in range(2) for c in range(3)])
        assert abs(lv.mixed.item() - (0.16 * l1 + 0.84 * (1 - ms))) < 1e-7
        assert abs(lv.l1 - l1) < 1e-12
        per = quality.mixed_loss_per_image(a, b)
        assert abs(per.mean() - lv.mixed.item()) < 1e-9


def test_mixed_loss_identity_and_offset():
    a, _ = _pair(3)
    assert quality.mixed_loss(Tensor(a), Tensor(a)).mixed.item() == pytest.approx(0.0, abs=1e-12)
    ref = np.random.default_rng(4).uniform(0.1, 0.8, (1, 3, 32, 32))
    lv = quality.mixed_loss(Tensor(ref + 0.1), Tensor(ref))
    assert lv.l1 == pytest.approx(0.1, abs=1e-12)
    ms = np.mean([oracle_msssim(ref[0, c] + 0.1, ref[0, c]) for c in range(3)])
    assert lv.mixed.item() == pytest.approx(0.016 + 0.84 * (1 - ms), abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_mixed_loss_monotone_toward_reference(seed):
    a, b = _pair(seed, (1, 3, 32, 32))
    losses = [quality.mixed_loss(Tensor(b + t * (a - b)), Tensor(a)).item() for t in np.linspace(0, 1, 11)]
    assert all(x >= y - 1e-12 for x, y in zip(losses, losses[1:]))


def test_psnr_examples():
    ref = np.zeros((3, 10, 10))
    assert quality.psnr(ref, ref) == math.inf
    assert quality.psnr(ref + 0.1, ref) == pytest.approx(20.0)
    assert quality.psnr(ref + 0.01, ref) == pytest.approx(40.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_psnr_symmetric_and_monotone_in_noise(seed):
    gen = np.random.default_rng(seed)
    ref = gen.uniform(0, 1, (3, 8, 8))
    noise = gen.standard_normal(ref.shape)
    vals = [quality.psnr(ref + s * noise, ref) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]
    assert quality.psnr(ref, ref + 0.05 * noise) == quality.psnr(ref + 0.05 * noise, ref)


def test_reward_identities():
    assert quality.reward(0.0) == 10.0
    assert quality.reward(1.0) == 1.0
    assert quality.reward(0.5) == pytest.approx(3.1623, abs=1e-4)
    grid = quality.reward(np.linspace(0, 2, 1000))
    assert np.all(np.diff(grid) < 0)
    with pytest.raises(quality.QualityError):
        quality.reward(float("nan"))


def test_error_analysis_examples(tmp_path):
    gen = np.random.default_rng(0)
    ref = gen.uniform(0, 1, (3, 12, 10))
    a = ref + gen.normal(0, 0.05, ref.shape)
    same = quality.error_analysis(a, a, ref, 0.01)
    assert np.all(same.binary == 0) and np.all(same.extreme == 0)
    assert same.hist[quality.zero_bin()] == 120 and same.hist.sum() == 120

    b = a.copy()
    a2 = a.copy()
    a2[:, 4, 7] += 0.5
    res = quality.error_analysis(a2, b, ref, 0.01)
    assert np.count_nonzero(res.binary) == 1 and res.binary[4, 7] == 1
    assert np.count_nonzero(res.extreme) == 1
    assert res.hist.sum() == 120 and len(res.hist) == 256

    path = tmp_path / "h.csv"
    quality.write_histogram_csv(path, res.hist, res.edges)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_center,count" and len(lines) == 257
    with pytest.raises(quality.QualityError):
        quality.error_analysis(a, b, ref, 0.0)


def test_sign_map_colors():
    m = np.array([[-1, 0, 1]], dtype=np.int8)
    rgb = quality.sign_map_rgb(m)
    assert rgb.shape == (1, 3, 3) and rgb.dtype == np.uint8
    assert tuple(rgb[0, 1]) == (128, 128, 128)
