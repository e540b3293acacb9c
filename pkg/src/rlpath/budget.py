"""Heatmap-to-sample-count allocation and the numerical-gradient baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import reservoir
from .scenegen import tracer

DEFAULT_CAP = 8


class BudgetError(ValueError):
    pass


class ZeroSppError(BudgetError):
    """The numerical gradient (I_ref - I_s) / s is undefined at s = 0."""


@dataclass
class Allocation:
    counts: np.ndarray  # (..., H, W) int64 in [0, cap]
    raw: np.ndarray  # (..., H, W) rounded counts before the cap
    shortfall: np.ndarray  # (...,) samples lost to the cap, not redistributed
    budget_total: int
    cap: int


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def allocate(x: np.ndarray, budget_total: int, cap: int = DEFAULT_CAP) -> Allocation:
    """Counts proportional to ``x - min(x)`` over the last two axes.

    A constant heatmap falls back to uniform ``round(budget_total / P)``.
    """
    if budget_total < 0:
        raise BudgetError(f"budget_total must be >= 0, got {budget_total}")
    if cap < 1:
        raise BudgetError(f"cap must be >= 1, got {cap}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise BudgetError("heatmap needs at least 2 dims (H, W)")
    P = x.shape[-1] * x.shape[-2]
    shifted = x - x.min(axis=(-2, -1), keepdims=True)
    total = shifted.sum(axis=(-2, -1), keepdims=True)
    flat = total <= 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(flat, 0.0, shifted / np.where(flat, 1.0, total))
    raw = round_half_away(budget_total * frac)
    uniform = round_half_away(np.full_like(total, budget_total / P))
    raw = np.where(flat, uniform, raw)
    counts = np.clip(raw, 0, cap)
    shortfall = (raw - counts).sum(axis=(-2, -1))
    return Allocation(counts.astype(np.int64), raw.astype(np.int64), shortfall.astype(np.int64), budget_total, cap)


def uniform_counts(shape: tuple[int, ...], budget_total: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    return allocate(np.zeros(shape), budget_total, cap).counts


def enforce_min_count(counts: np.ndarray, floor: int = 1) -> np.ndarray:
    """Raise every pixel to ``floor`` and reclaim the excess from the largest counts.

    Operates per image over the last two axes.
    """
    counts = np.array(counts, dtype=np.int64)
    lead = counts.shape[:-2]
    for idx in np.ndindex(*lead):
        c = counts[idx].ravel()
        deficit = int(np.maximum(floor - c, 0).sum())
        c = np.maximum(c, floor)
        while deficit > 0:
            top = c.max()
            if top <= floor:
                break
            # lower the highest level as a block, one unit at a time
            at_top = np.nonzero(c == top)[0]
            take = at_top[: min(deficit, at_top.size)]
            c[take] -= 1
            deficit -= take.size
        counts[idx] = c.reshape(counts[idx].shape)
    return counts


def grad_approx(i_ref, i_s, s):
    """``(I_ref - I_s) / s``; the finite-sample gradient of the pixel mean."""
    s = np.asarray(s)
    if np.any(s < 1):
        raise ZeroSppError("gradient undefined at zero spp: every pixel needs s >= 1")
    return (np.asarray(i_ref, dtype=np.float64) - np.asarray(i_s, dtype=np.float64)) / s


def allocation_vjp(x: np.ndarray, budget_total: int, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. continuous counts ``s = B (x - m) / S`` back to ``x``.

    Rounding is passed straight through; ``m`` is the argmin pixel, whose
    dependence is included.  Works per image over the last two axes.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    lead = x.shape[:-2]
    out = np.zeros_like(x)
    for idx in np.ndindex(*lead):
        xi = x[idx].ravel()
        gi = g[idx].ravel()
        P = xi.size
        a = int(np.argmin(xi))
        sh = xi - xi[a]
        S = sh.sum()
        if S <= 0.0:
            continue
        B = float(budget_total)
        G = gi.sum()
        Hs = (gi * sh).sum()
        d = B / S * gi - B / (S * S) * Hs
        d[a] += -B / S * G + B / (S * S) * Hs * P
        out[idx] = d.reshape(x[idx].shape)
    return out


def trace_with_counts(scene, frame: int, counts: np.ndarray, seed: int, resolution=None, cap: int = DEFAULT_CAP):
    """Raw float64 samples (H, W, cap, 3); pixel (i, j) holds indices 0..counts-1."""
    fs = tracer._frame(scene, frame, resolution)
    counts = np.asarray(counts)
    if counts.shape != (fs.height, fs.width):
        raise BudgetError(f"counts shape {counts.shape} does not match {fs.height}x{fs.width}")
    return tracer.trace_counts(fs, frame, seed, counts, cap)


def sample_with_counts(scene, frame: int, counts: np.ndarray, seed: int, resolution=None, cap: int = DEFAULT_CAP):
    """Trace exactly ``counts[i, j]`` samples per pixel and pack them."""
    raw = trace_with_counts(scene, frame, counts, seed, resolution, cap)
    return reservoir.pack_samples(raw, counts)
