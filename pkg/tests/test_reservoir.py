import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rlpath import reservoir
from rlpath.reservoir import SENTINEL, SLOTS, SampleBuffer

counts_maps = arrays(np.int64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(0, SLOTS))


def _random_buffer(counts, seed=0):
    H, W = counts.shape
    samples = np.random.default_rng(seed).uniform(0, 4, (H, W, SLOTS, 3))
    return reservoir.pack_samples(samples, counts), samples


def _sentinel_ok(buf):
    s = buf.slots
    mask = reservoir.slot_mask(buf.valid_count)[..., None, :, :]
    mask = np.broadcast_to(mask, s.shape)
    return np.all(s[mask] >= 0) and np.all(s[~mask] == SENTINEL)


def test_pack_examples():
    a, b = [0.1, 0.2, 0.3], [1.0, 2.0, 3.0]
    buf = reservoir.pack_pixel_lists([[], [a, b], [a] * 8], 1, 3)
    px0 = buf.data[:, 0, 0]
    assert np.all(px0 == -1)
    px1 = buf.data[:, 0, 1]
    assert np.allclose(px1[0:3], a) and np.allclose(px1[3:6], b) and np.all(px1[6:] == -1)
    assert np.all(buf.data[:, 0, 2] >= 0)
    assert buf.valid_count.tolist() == [[0, 2, 8]]


def test_pack_rejects_long_lists():
    with pytest.raises(reservoir.ReservoirError):
        reservoir.pack_pixel_lists([[[0.0, 0.0, 0.0]] * 9], 1, 1)
    with pytest.raises(reservoir.ReservoirError):
        reservoir.pack_samples(np.zeros((1, 1, 8, 3)), np.array([[9]]))


@settings(max_examples=200, deadline=None)
@given(counts_maps, st.integers(0, 2**31))
def test_sentinel_integrity_through_stages(counts, seed):
    buf, _ = _random_buffer(counts, seed)
    assert _sentinel_ok(buf)
    assert _sentinel_ok(reservoir.permute_valid(buf, seed))
    assert _sentinel_ok(reservoir.average_samples(buf))
    assert _sentinel_ok(reservoir.flip(buf, "x"))
    bank = np.moveaxis(np.random.default_rng(seed).uniform(0, 3, counts.shape + (SLOTS, 3)), (0, 1), (-2, -1))
    assert _sentinel_ok(reservoir.pack_from_bank(bank, counts))


@settings(max_examples=200, deadline=None)
@given(counts_maps, st.integers(0, 2**31))
def test_permute_preserves_multisets(counts, seed):
    buf, _ = _random_buffer(counts, seed)
    out = reservoir.permute_valid(buf, seed)
    assert np.array_equal(out.valid_count, buf.valid_count)
    for i, j in np.ndindex(*counts.shape):
        n = counts[i, j]
        before = Counter(map(tuple, buf.slots[:n, :, i, j].tolist()))
        after = Counter(map(tuple, out.slots[:n, :, i, j].tolist()))
        assert before == after


def test_permute_trivial_and_reproducible():
    counts = np.array([[0, 1], [1, 0]])
    buf, _ = _random_buffer(counts)
    assert np.array_equal(reservoir.permute_valid(buf, 3).data, buf.data)
    full, _ = _random_buffer(np.full((4, 4), 8), 1)
    a = reservoir.permute_valid(full, 7)
    assert np.array_equal(a.data, reservoir.permute_valid(full, 7).data)
    assert not np.array_equal(a.data, full.data)


def oracle_warp(state, motion, fill=0.0):
    C, H, W = state.shape
    out = np.zeros_like(state, dtype=np.float64)
    for i in range(H):
        for j in range(W):
            sy, sx = i + motion[1, i, j], j + motion[0, i, j]
            if not (0 <= sy <= H - 1 and 0 <= sx <= W - 1):
                out[:, i, j] = fill
                continue
            y0, x0 = int(math.floor(sy)), int(math.floor(sx))
            y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
            fy, fx = sy - y0, sx - x0
            out[:, i, j] = (
                (1 - fy) * (1 - fx) * state[:, y0, x0]
                + (1 - fy) * fx * state[:, y0, x1]
                + fy * (1 - fx) * state[:, y1, x0]
                + fy * fx * state[:, y1, x1]
            )
    return np.clip(out, -1, 1)


@pytest.mark.parametrize("seed", range(10))
def test_warp_matches_scalar_oracle(seed):
    gen = np.random.default_rng(seed)
    state = gen.uniform(-1, 1, (3, 6, 7))
    motion = gen.uniform(-2.5, 2.5, (2, 6, 7))
    assert np.allclose(reservoir.warp(state, motion), oracle_warp(state, motion), atol=1e-12)


def test_warp_zero_motion_is_bit_exact():
    state = np.random.default_rng(0).uniform(-1, 1, (2, 32, 5, 6)).astype(np.float32)
    out = reservoir.warp(state, np.zeros((2, 2, 5, 6)))
    assert out.tobytes() == state.tobytes()


def test_warp_column_shift_example():
    ramp = np.array([[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]]])
    motion = np.zeros((2, 3, 3))
    motion[0] = 1.0  # read one column to the right
    out = reservoir.warp(ramp, motion)
    assert np.array_equal(out[0, :, :2], ramp[0, :, 1:])
    assert np.all(out[0, :, 2] == 0.0)


def test_warp_out_of_bounds_and_errors():
    state = np.ones((1, 4, 4)) * 0.5
    assert np.all(reservoir.warp(state, np.full((2, 4, 4), 10.0)) == 0)
    with pytest.raises(reservoir.ReservoirError):
        reservoir.warp(state, np.full((2, 4, 4), np.nan))
    with pytest.raises(reservoir.ReservoirError):
        reservoir.warp(state, np.zeros((2, 3, 4)))
    with pytest.raises(reservoir.ReservoirError):
        reservoir.warp(state, np.zeros((2, 4, 4)), mode="cubic")


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), arrays(np.float64, (2, 5, 5), elements=st.floats(-1, 1)))
def test_warp_constant_field_invariant(c, m):
    state = np.full((3, 5, 5), c)
    ii, jj = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
    sy, sx = ii + m[1], jj + m[0]
    inside = (sy >= 0) & (sy <= 4) & (sx >= 0) & (sx <= 4)
    assert np.all(reservoir.warp(state, m)[:, inside] == c)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_warp_linearity(seed, alpha, beta):
    gen = np.random.default_rng(seed)
    a = gen.uniform(-1, 1, (2, 5, 6))
    b = gen.uniform(-1, 1, (2, 5, 6))
    m = gen.uniform(-3, 3, (2, 5, 6))
    lhs = reservoir.warp(alpha * a + beta * b, m)
    rhs = alpha * reservoir.warp(a, m) + beta * reservoir.warp(b, m)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_warp_clamps_to_unit_range():
    state = np.full((1, 3, 3), 3.0)
    assert np.all(reservoir.warp(state, np.zeros((2, 3, 3))) == 1.0)


def test_nearest_mode_rounds_offsets():
    state = np.arange(16, dtype=np.float64).reshape(1, 4, 4) / 16
    m = np.full((2, 4, 4), 0.4)
    assert np.array_equal(reservoir.warp(state, m, mode="nearest"), state)


def test_average_mode_layout():
    counts = np.array([[0, 3]])
    buf, samples = _random_buffer(counts)
    avg = reservoir.average_samples(buf)
    assert avg.valid_count.tolist() == [[0, 1]]
    assert np.allclose(avg.data[0:3, 0, 1], samples[0, 1, :3].astype(np.float32).mean(axis=0), atol=1e-6)
    assert np.all(avg.data[3:, 0, 1] == -1) and np.all(avg.data[:, 0, 0] == -1)


def test_mean_of_buffer():
    counts = np.array([[2, 0]])
    buf, samples = _random_buffer(counts)
    m = buf.mean()
    assert np.allclose(m[:, 0, 0], samples[0, 0, :2].astype(np.float32).mean(axis=0), atol=1e-6)
    assert np.all(m[:, 0, 1] == 0)


def test_serialization_roundtrip(tmp_path):
    buf, _ = _random_buffer(np.random.default_rng(3).integers(0, 9, (5, 6)))
    path = tmp_path / "f.rlsb"
    reservoir.save_buffer(path, buf)
    back = reservoir.load_buffer(path)
    assert back.data.tobytes() == buf.data.tobytes()
    assert np.array_equal(back.valid_count, buf.valid_count)
    raw = path.read_bytes()
    assert len(raw) == 12 + 4 * 24 * 30 + 30
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(reservoir.ReservoirError):
        reservoir.load_buffer(tmp_path / "bad")
