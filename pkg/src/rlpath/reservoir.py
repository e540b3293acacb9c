"""Sample buffers with sentinel fill, latent warping and sample-order shuffling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenegen import rng

SLOTS = 8
SAMPLE_CHANNELS = 3 * SLOTS
LATENT_CHANNELS = 32
SENTINEL = -1.0


class ReservoirError(ValueError):
    pass


@dataclass
class SampleBuffer:
    """``data`` is (..., 24, H, W): slot k occupies channels 3k..3k+2.

    ``valid_count`` is (..., H, W) uint8; slots at or beyond it hold -1.
    """

    data: np.ndarray
    valid_count: np.ndarray

    @property
    def slots(self) -> np.ndarray:
        """View shaped (..., 8, 3, H, W)."""
        d = self.data
        return d.reshape(d.shape[:-3] + (SLOTS, 3) + d.shape[-2:])

    def mean(self) -> np.ndarray:
        """Per-pixel mean of the valid samples, (..., 3, H, W); 0 where empty."""
        s = self.slots
        mask = slot_mask(self.valid_count)[..., :, None, :, :]
        total = np.where(mask, s, 0.0).sum(axis=-4)
        n = self.valid_count.astype(s.dtype)[..., None, :, :]
        return np.where(n > 0, total / np.maximum(n, 1), 0.0).astype(s.dtype)

    def copy(self) -> "SampleBuffer":
        return SampleBuffer(self.data.copy(), self.valid_count.copy())


def slot_mask(valid_count: np.ndarray) -> np.ndarray:
    """Boolean (..., 8, H, W): True where the slot holds a sample."""
    k = np.arange(SLOTS).reshape((SLOTS, 1, 1))
    return k < np.asarray(valid_count)[..., None, :, :]


def pack_samples(samples: np.ndarray, counts: np.ndarray) -> SampleBuffer:
    """Pack ``samples`` (..., H, W, K, 3) whose first ``counts`` entries are real.

    Entries past a pixel's count are ignored and replaced by the sentinel.
    """
    samples = np.asarray(samples, dtype=np.float32)
    counts = np.asarray(counts)
    if counts.size and (counts.min() < 0 or counts.max() > SLOTS):
        raise ReservoirError(f"per-pixel sample count must be in [0, {SLOTS}], got max {counts.max()}")
    K = samples.shape[-2]
    if counts.size and counts.max() > K:
        raise ReservoirError(f"counts reach {counts.max()} but only {K} samples were given")
    lead = counts.shape[:-2]
    H, W = counts.shape[-2:]
    slots = np.full(lead + (SLOTS, 3, H, W), SENTINEL, dtype=np.float32)
    # (..., H, W, K, 3) -> (..., K, 3, H, W)
    moved = np.moveaxis(samples, (-4, -3), (-2, -1))[..., : min(K, SLOTS), :, :, :]
    mask = slot_mask(counts)[..., : moved.shape[-4], None, :, :]
    slots[..., : moved.shape[-4], :, :, :] = np.where(mask, moved, SENTINEL)
    data = slots.reshape(lead + (SAMPLE_CHANNELS, H, W))
    return SampleBuffer(data, counts.astype(np.uint8))


def pack_pixel_lists(lists, height: int, width: int) -> SampleBuffer:
    """Pack row-major per-pixel lists of RGB samples."""
    if len(lists) != height * width:
        raise ReservoirError(f"expected {height * width} pixel lists, got {len(lists)}")
    samples = np.zeros((height, width, SLOTS, 3), dtype=np.float32)
    counts = np.zeros((height, width), dtype=np.int64)
    for p, items in enumerate(lists):
        if len(items) > SLOTS:
            raise ReservoirError(f"pixel {divmod(p, width)} has {len(items)} samples, at most {SLOTS} allowed")
        i, j = divmod(p, width)
        counts[i, j] = len(items)
        if items:
            samples[i, j, : len(items)] = np.asarray(items, dtype=np.float32).reshape(-1, 3)
    return pack_samples(samples, counts)


def average_samples(buf: SampleBuffer) -> SampleBuffer:
    """Collapse every pixel to one sample holding its mean (empty pixels stay empty)."""
    mean = buf.mean()
    data = np.full_like(buf.data, SENTINEL)
    has = buf.valid_count > 0
    data[..., 0:3, :, :] = np.where(has[..., None, :, :], mean, SENTINEL)
    return SampleBuffer(data, has.astype(np.uint8))


def warp(state: np.ndarray, motion: np.ndarray, mode: str = "bilinear", fill: float = 0.0) -> np.ndarray:
    """Backward warp: out[..., i, j] = state[..., i + dy, j + dx].

    ``state`` is (..., C, H, W); ``motion`` is (..., 2, H, W) with channel 0
    the column offset and channel 1 the row offset.  Sources outside the frame
    read ``fill``; the result is clamped to [-1, 1].
    """
    state = np.asarray(state)
    motion = np.asarray(motion, dtype=np.float64)
    H, W = state.shape[-2:]
    if motion.shape[-3:] != (2, H, W):
        raise ReservoirError(f"motion shape {motion.shape} does not match state spatial dims {(H, W)}")
    if not np.all(np.isfinite(motion)):
        raise ReservoirError("motion field contains non-finite values")
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    sy = ii + motion[..., 1, :, :]
    sx = jj + motion[..., 0, :, :]
    if mode == "nearest":
        sy = np.floor(sy + 0.5)
        sx = np.floor(sx + 0.5)
    elif mode != "bilinear":
        raise ReservoirError(f"unknown warp mode {mode!r}")
    inside = (sy >= 0) & (sy <= H - 1) & (sx >= 0) & (sx <= W - 1)
    y0 = np.clip(np.floor(sy), 0, H - 1).astype(np.intp)
    x0 = np.clip(np.floor(sx), 0, W - 1).astype(np.intp)
    fy = np.where(inside, sy - y0, 0.0).astype(state.dtype)[..., None, :, :]
    fx = np.where(inside, sx - x0, 0.0).astype(state.dtype)[..., None, :, :]
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)

    def gather(yy, xx):
        idx = (yy * W + xx)[..., None, :, :]
        flat = state.reshape(state.shape[:-2] + (H * W,))
        idx = np.broadcast_to(idx, state.shape).reshape(state.shape[:-2] + (H * W,))
        return np.take_along_axis(flat, idx, axis=-1).reshape(state.shape)

    v00 = gather(y0, x0)
    v01 = gather(y0, x1)
    v10 = gather(y1, x0)
    v11 = gather(y1, x1)
    # lerp form keeps constant fields exact
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    out = top + fy * (bot - top)
    exact = (fx == 0) & (fy == 0)
    out = np.where(exact, v00, out)
    out = np.where(inside[..., None, :, :], out, state.dtype.type(fill))
    return np.clip(out, -1.0, 1.0).astype(state.dtype, copy=False)


def permute_valid(buf: SampleBuffer, seed: int) -> SampleBuffer:
    """Shuffle each pixel's valid slots; sentinels stay at the tail."""
    slots = buf.slots
    lead = slots.shape[:-4]
    H, W = slots.shape[-2:]
    n = int(np.prod(lead + (SLOTS, H, W)))
    keys = rng.uniform(rng.mix64(int(seed) ^ rng.DOMAIN_PERMUTE), np.arange(n, dtype=np.uint64)).reshape(lead + (SLOTS, H, W))
    keys = np.where(slot_mask(buf.valid_count), keys, 2.0)
    order = np.argsort(keys, axis=-3, kind="stable")
    idx = np.broadcast_to(order[..., :, None, :, :], slots.shape)
    permuted = np.take_along_axis(slots, idx, axis=-4)
    return SampleBuffer(permuted.reshape(buf.data.shape).copy(), buf.valid_count.copy())


def flip(buf: SampleBuffer, axis: str) -> SampleBuffer:
    ax = -1 if axis == "x" else -2
    return SampleBuffer(np.flip(buf.data, ax).copy(), np.flip(buf.valid_count, ax).copy())


# ---- serialization: planar little-endian f32, channel-major, then a u8 count plane

_MAGIC = b"RLSB"


def save_buffer(path: str | Path, buf: SampleBuffer) -> None:
    if buf.data.ndim != 3:
        raise ReservoirError("serialize one frame at a time: data must be (24, H, W)")
    _, H, W = buf.data.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", H, W))
        fh.write(np.ascontiguousarray(buf.data, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(buf.valid_count, dtype=np.uint8).tobytes())


def load_buffer(path: str | Path) -> SampleBuffer:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ReservoirError(f"{path}: not a sample buffer file")
    H, W = struct.unpack("<II", raw[4:12])
    n = SAMPLE_CHANNELS * H * W
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=12).reshape(SAMPLE_CHANNELS, H, W)
    vc = np.frombuffer(raw, dtype=np.uint8, count=H * W, offset=12 + 4 * n).reshape(H, W)
    return SampleBuffer(data.astype(np.float32), vc.copy())


def pack_from_bank(bank: np.ndarray, counts: np.ndarray) -> SampleBuffer:
    """Take the first ``counts`` draws of a pre-traced bank shaped (..., 8, 3, H, W)."""
    counts = np.asarray(counts)
    if counts.size and (counts.min() < 0 or counts.max() > SLOTS):
        raise ReservoirError(f"per-pixel sample count must be in [0, {SLOTS}]")
    mask = slot_mask(counts)[..., :, None, :, :]
    slots = np.where(mask, bank, np.float32(SENTINEL)).astype(np.float32)
    return SampleBuffer(slots.reshape(counts.shape[:-2] + (SAMPLE_CHANNELS,) + counts.shape[-2:]), counts.astype(np.uint8))
