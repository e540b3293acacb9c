"""PFM / PNG / raw-grid image files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path: str | Path, img: np.ndarray) -> None:
    """Little-endian 32-bit PFM. ``img`` is (H, W, 3) or (H, W)."""
    img = np.asarray(img, dtype="<f4")
    color = img.ndim == 3
    h, w = img.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        data = fh.read()
    dtype = "<f4" if scale < 0 else ">f4"
    ch = 3 if kind == b"PF" else 1
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w, ch) if ch == 3 else np.frombuffer(data, dtype=dtype).reshape(h, w)
    return arr[::-1].astype(np.float32)


def to_srgb8(img: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * img ** (1.0 / gamma)).astype(np.uint8)


def write_png(path: str | Path, img: np.ndarray, gamma: float = 2.2) -> None:
    """Viewing copy only: clamp to [0, 1] then gamma-encode to 8 bits."""
    Image.fromarray(to_srgb8(img, gamma)).save(path)


def write_png16(path: str | Path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.min(initial=0) < 0 or grid.max(initial=0) > 65535:
        raise ValueError("values must fit in u16")
    Image.fromarray(grid.astype(np.uint16)).save(path)


def read_png16(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.int64)


def write_u16_grid(path: str | Path, grid: np.ndarray) -> None:
    """Raw little-endian u16, row-major, preceded by u32 height and width."""
    grid = np.asarray(grid)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(np.array([h, w], dtype="<u4").tobytes())
        fh.write(grid.astype("<u2").tobytes())


def read_u16_grid(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    h, w = np.frombuffer(raw[:8], dtype="<u4")
    return np.frombuffer(raw[8:], dtype="<u2").reshape(int(h), int(w)).astype(np.int64)
