"""Clip-level geometric augmentation: flips and random crop-rescale.

One transform is drawn per clip and applied to every frame so that motion
vectors stay consistent with the warped history.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.ndimage import map_coordinates

from ..dataset import Clip

MIN_AREA = 0.75


def _resample(planes: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinear lookup of every (..., H, W) plane at the given source grid."""
    lead = planes.shape[:-2]
    flat = planes.reshape((-1,) + planes.shape[-2:])
    out = np.empty((flat.shape[0],) + rows.shape, dtype=planes.dtype)
    coords = np.stack([rows, cols])
    for k in range(flat.shape[0]):
        out[k] = map_coordinates(flat[k], coords, order=1, mode="nearest")
    return out.reshape(lead + rows.shape)


def augment_clip(clip: Clip, gen: np.random.Generator) -> Clip:
    flip_x = bool(gen.integers(2))
    flip_y = bool(gen.integers(2))
    area = gen.uniform(MIN_AREA, 1.0)
    ref, aux, motion, bank = clip.ref, clip.aux, clip.motion.copy(), clip.bank
    if flip_x:
        ref, aux, motion, bank = (np.flip(a, -1) for a in (ref, aux, motion, bank))
        motion = motion.copy()
        motion[:, 0] *= -1
        aux = aux.copy()
        aux[:, 0] *= -1  # normal x
    if flip_y:
        ref, aux, motion, bank = (np.flip(a, -2) for a in (ref, aux, motion, bank))
        motion = motion.copy()
        motion[:, 1] *= -1
        aux = aux.copy()
        aux[:, 1] *= -1  # normal y
    H, W = ref.shape[-2:]
    side = np.sqrt(area)
    ch, cw = side * H, side * W
    r0 = gen.uniform(0.0, H - ch)
    c0 = gen.uniform(0.0, W - cw)
    # target pixel centres mapped into the crop window
    rows = r0 + (np.arange(H) + 0.5) * (ch / H) - 0.5
    cols = c0 + (np.arange(W) + 0.5) * (cw / W) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    ref = _resample(np.ascontiguousarray(ref), rr, cc)
    aux = _resample(np.ascontiguousarray(aux), rr, cc)
    motion = _resample(np.ascontiguousarray(motion), rr, cc) * np.float32(1.0 / side)
    bank = _resample(np.ascontiguousarray(bank), rr, cc)
    return replace(clip, ref=ref, aux=aux, motion=motion.astype(np.float32), bank=bank)
