"""Public tracing API with backend selection.

The compiled kernel is used when importable; ``RLPATH_BACKEND=python`` forces
the numpy fallback.  Both backends produce bit-identical radiance.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pytracer, rng
from .scene import FrameScene, Scene

try:
    from . import _ctracer
except ImportError:  # extension not built
    _ctracer = None

_BACKEND = "python" if _ctracer is None or os.environ.get("RLPATH_BACKEND") == "python" else "compiled"


def backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _ctracer is None:
        raise RuntimeError("compiled tracer is not built; run `pip install -e .`")
    _BACKEND = name


def _frame(scene: Scene | FrameScene, frame: int, resolution: tuple[int, int] | None) -> FrameScene:
    if isinstance(scene, FrameScene):
        return scene
    if resolution is None:
        raise ValueError("resolution is required when passing a Scene")
    h, w = resolution
    return scene.at(frame, w, h)


def trace_paths(fs: FrameScene, fkey: int, i, j, s) -> np.ndarray:
    if _BACKEND == "compiled":
        i = np.ascontiguousarray(np.ravel(i), dtype=np.int64)
        j = np.ascontiguousarray(np.ravel(j), dtype=np.int64)
        s = np.ascontiguousarray(np.ravel(s), dtype=np.int64)
        return _ctracer.trace_paths(fs.objects, fs.camera, fs.environment, fs.width, fs.height, fkey, i, j, s)
    return _pytracer.trace_paths(fs, fkey, i, j, s)


def trace_sample(
    scene: Scene | FrameScene,
    frame: int,
    pixel: tuple[int, int],
    sample_index: int,
    seed: int,
    resolution: tuple[int, int] | None = None,
) -> np.ndarray:
    """One path-traced radiance estimate (RGB float64, nonnegative)."""
    fs = _frame(scene, frame, resolution)
    i, j = pixel
    if not (0 <= i < fs.height and 0 <= j < fs.width):
        raise ValueError(f"pixel {pixel} outside {fs.height}x{fs.width}")
    if sample_index < 0:
        raise ValueError("sample_index must be >= 0")
    fkey = rng.frame_key(seed, frame)
    return trace_paths(fs, fkey, [i], [j], [sample_index])[0]


def render_sum(fs: FrameScene, frame: int, seed: int, start: int, count: int) -> np.ndarray:
    fkey = rng.frame_key(seed, frame)
    if _BACKEND == "compiled":
        return _ctracer.render_sum(fs.objects, fs.camera, fs.environment, fs.width, fs.height, fkey, start, count)
    return _pytracer.render_sum(fs, fkey, start, count)


def render_reference(
    scene: Scene | FrameScene,
    frame: int,
    spp: int = 2048,
    seed: int = 0,
    resolution: tuple[int, int] | None = None,
) -> np.ndarray:
    """Per-pixel mean of ``spp`` samples with indices 0..spp-1; (H, W, 3) float64."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    fs = _frame(scene, frame, resolution)
    return render_sum(fs, frame, seed, 0, spp) / spp


def trace_counts(fs: FrameScene, frame: int, seed: int, counts: np.ndarray, cap: int) -> np.ndarray:
    """Samples 0..counts[i,j]-1 per pixel as (H, W, cap, 3); unused slots are 0."""
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    if counts.size and (counts.min() < 0 or counts.max() > cap):
        raise ValueError(f"counts must lie in [0, {cap}]")
    fkey = rng.frame_key(seed, frame)
    if _BACKEND == "compiled":
        return _ctracer.trace_counts(fs.objects, fs.camera, fs.environment, fs.width, fs.height, fkey, counts, cap)
    return _pytracer.trace_counts(fs, fkey, counts, cap)
