"""Reconstruction losses, PSNR, the sampling reward and MSE-difference analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorgrad import Tensor, ops

L1_WEIGHT = 0.16
MSSSIM_WEIGHT = 0.84
C1 = 0.01**2
C2 = 0.03**2
WINDOW = 11
SIGMA = 1.5
# standard five-scale weights; fewer scales use a renormalized prefix
SCALE_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
MIN_SIZE_3 = 32
MIN_SIZE_5 = 256
CS_FLOOR = 1e-6

HIST_BINS = 256
HIST_RANGE = 0.1


class QualityError(ValueError):
    pass


def gaussian_taps(n: int, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def scale_count(h: int, w: int) -> int:
    m = min(h, w)
    if m >= MIN_SIZE_5:
        return 5
    if m >= MIN_SIZE_3:
        return 3
    raise QualityError(f"MS-SSIM needs images of at least {MIN_SIZE_3}x{MIN_SIZE_3}, got {h}x{w}")


def _window(size: int) -> int:
    n = min(WINDOW, size)
    return n if n % 2 == 1 else n - 1


def _as4(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.data.ndim == 3:
        t = ops.reshape(t, (1,) + t.shape)
    if t.data.ndim != 4:
        raise QualityError(f"expected (B, C, H, W) or (C, H, W) images, got shape {t.shape}")
    return t


def msssim_per_channel(img, ref) -> Tensor:
    """MS-SSIM for every (image, channel), shape (B, C)."""
    x = _as4(img)
    y = _as4(ref)
    if x.shape != y.shape:
        raise QualityError(f"image shapes differ: {x.shape} vs {y.shape}")
    if y.dtype != x.dtype:
        y = Tensor(y.data.astype(x.dtype)) if not y.requires_grad else y
    levels = scale_count(*x.shape[2:])
    weights = SCALE_WEIGHTS[:levels] / SCALE_WEIGHTS[:levels].sum()
    x = ops.clip(x, 0.0, 1.0)
    y = ops.clip(y, 0.0, 1.0)
    result = None
    for level in range(levels):
        taps = gaussian_taps(_window(min(x.shape[2:])))
        mx = ops.filter_separable(x, taps)
        my = ops.filter_separable(y, taps)
        mxx = ops.filter_separable(ops.square(x), taps)
        myy = ops.filter_separable(ops.square(y), taps)
        mxy = ops.filter_separable(ops.mul(x, y), taps)
        mx2 = ops.square(mx)
        my2 = ops.square(my)
        mxmy = ops.mul(mx, my)
        vx = ops.sub(mxx, mx2)
        vy = ops.sub(myy, my2)
        cov = ops.sub(mxy, mxmy)
        cs_map = ops.div(ops.add(ops.mul(cov, 2.0), C2), ops.add(ops.add(vx, vy), C2))
        if level == levels - 1:
            lum = ops.div(ops.add(ops.mul(mxmy, 2.0), C1), ops.add(ops.add(mx2, my2), C1))
            term_map = ops.mul(lum, cs_map)
        else:
            term_map = cs_map
        term = ops.maximum(ops.mean(term_map, axis=(2, 3)), CS_FLOOR)
        term = ops.power(term, float(weights[level]))
        result = term if result is None else ops.mul(result, term)
        if level < levels - 1:
            x = ops.avgpool2(x)
            y = ops.avgpool2(y)
    return result


def msssim(img, ref) -> Tensor:
    """Scalar MS-SSIM averaged over batch and channels; differentiable in ``img``."""
    return ops.mean(msssim_per_channel(img, ref))


@dataclass
class LossValue:
    mixed: Tensor
    l1: float
    msssim: float

    def item(self) -> float:
        return self.mixed.item()


def mixed_loss(img, ref) -> LossValue:
    """``0.16 * l1 + 0.84 * (1 - msssim)``."""
    x = _as4(img)
    y = _as4(ref)
    if y.dtype != x.dtype:
        y = Tensor(y.data.astype(x.dtype))
    l1 = ops.mean(ops.abs(ops.sub(x, y)))
    ms = msssim(x, y)
    mixed = ops.add(ops.mul(l1, L1_WEIGHT), ops.mul(ops.add(ops.neg(ms), 1.0), MSSSIM_WEIGHT))
    return LossValue(mixed, l1.item(), ms.item())


def mixed_loss_per_image(img, ref) -> np.ndarray:
    """Non-differentiable per-image mixed loss, shape (B,)."""
    x = _as4(img).data.astype(np.float64)
    y = _as4(ref).data.astype(np.float64)
    l1 = np.abs(x - y).mean(axis=(1, 2, 3))
    ms = msssim_per_channel(Tensor(x), Tensor(y)).data.mean(axis=1)
    return L1_WEIGHT * l1 + MSSSIM_WEIGHT * (1.0 - ms)


def psnr(img, ref, peak: float = 1.0) -> float:
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise QualityError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def reward(loss) -> float | np.ndarray:
    """``10 ** (1 - loss)``: 10 for a perfect frame, 1 at loss 1."""
    loss = np.asarray(loss, dtype=np.float64)
    if not np.all(np.isfinite(loss)):
        raise QualityError("reward needs a finite loss")
    r = np.power(10.0, 1.0 - loss)
    return float(r) if r.ndim == 0 else r


# ---- paired-method analysis


@dataclass
class ErrorAnalysis:
    diff: np.ndarray  # per-pixel MSE_A - MSE_B, (H, W)
    binary: np.ndarray  # sign of diff, int8
    extreme: np.ndarray  # sign where |diff| > threshold, else 0
    hist: np.ndarray  # counts, HIST_BINS
    edges: np.ndarray  # HIST_BINS + 1 bin edges

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def hist_edges() -> np.ndarray:
    return np.linspace(-HIST_RANGE, HIST_RANGE, HIST_BINS + 1)


def zero_bin() -> int:
    """Index of the histogram bin that holds an exact zero difference."""
    return int(np.searchsorted(hist_edges(), 0.0, side="right") - 1)


def error_analysis(img_a, img_b, ref, threshold: float) -> ErrorAnalysis:
    """Compare two reconstructions pixel by pixel against ``ref`` (channels first)."""
    if threshold <= 0:
        raise QualityError("threshold must be positive")
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if not a.shape == b.shape == r.shape:
        raise QualityError(f"shape mismatch: {a.shape}, {b.shape}, {r.shape}")
    d = ((a - r) ** 2).mean(axis=-3) - ((b - r) ** 2).mean(axis=-3)
    binary = np.sign(d).astype(np.int8)
    extreme = np.where(np.abs(d) > threshold, binary, 0).astype(np.int8)
    edges = hist_edges()
    hist, _ = np.histogram(np.clip(d, -HIST_RANGE, HIST_RANGE), bins=edges)
    return ErrorAnalysis(d, binary, extreme, hist.astype(np.int64), edges)


def sign_map_rgb(m: np.ndarray) -> np.ndarray:
    """Render a -1/0/1 map as an 8-bit image: green A better, red B better, gray tie."""
    out = np.full(m.shape + (3,), 128, dtype=np.uint8)
    out[m < 0] = (40, 200, 40)
    out[m > 0] = (220, 40, 40)
    return out


def write_histogram_csv(path: str | Path, hist: np.ndarray, edges: np.ndarray) -> None:
    centers = 0.5 * (edges[:-1] + edges[1:])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "count"])
        for c, n in zip(centers, hist):
            w.writerow([f"{c:.8e}", int(n)])
