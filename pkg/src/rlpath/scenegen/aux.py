"""Primary-visibility feature buffers and backward motion vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pytracer
from .scene import Scene


@dataclass
class AuxBuffers:
    normals: np.ndarray  # (3, H, W), unit where hit, zero on environment
    albedo: np.ndarray  # (3, H, W)
    depth: np.ndarray  # (1, H, W), hit distance / bound radius, 1.0 on environment
    motion: np.ndarray  # (2, H, W), (dx, dy) in pixels toward the previous frame

    def features(self) -> np.ndarray:
        """The 7 network feature channels: normals, albedo, depth."""
        return np.concatenate([self.normals, self.albedo, self.depth]).astype(np.float32)


def _primary(scene: Scene, frame: int, resolution: tuple[int, int]):
    h, w = resolution
    fs = scene.at(frame, w, h)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    half = np.full(ii.size, 0.5)
    ox, oy, oz, dx, dy, dz = _pytracer.camera_rays(fs.camera, w, h, ii.ravel(), jj.ravel(), half, half)
    t, hit = _pytracer.intersect(fs.objects, ox, oy, oz, dx, dy, dz)
    return fs, (ox, oy, oz), (dx, dy, dz), t, hit


def _project(cam: np.ndarray, w: int, h: int, vx, vy, vz):
    """Continuous pixel coordinates (row, col) of camera-relative vectors."""
    fz = vx * cam[3] + vy * cam[4] + vz * cam[5]
    rx = vx * cam[6] + vy * cam[7] + vz * cam[8]
    uy = vx * cam[9] + vy * cam[10] + vz * cam[11]
    front = fz > 1e-9
    safe = np.where(front, fz, 1.0)
    sx = rx / safe / (cam[12] * cam[13])
    sy = uy / safe / cam[12]
    col = (sx + 1.0) * 0.5 * w - 0.5
    row = (1.0 - sy) * 0.5 * h - 0.5
    return row, col, front


def render_aux(scene: Scene, frame: int, resolution: tuple[int, int]) -> AuxBuffers:
    h, w = resolution
    fs, (ox, oy, oz), (dx, dy, dz), t, hit = _primary(scene, frame, resolution)
    n = h * w
    hitmask = hit >= 0
    normals = np.zeros((3, n))
    albedo = np.zeros((3, n))
    depth = np.ones(n)
    px = np.where(hitmask, ox + np.where(hitmask, t, 0.0) * dx, 0.0)
    py = np.where(hitmask, oy + np.where(hitmask, t, 0.0) * dy, 0.0)
    pz = np.where(hitmask, oz + np.where(hitmask, t, 0.0) * dz, 0.0)
    if hitmask.any():
        sel = np.nonzero(hitmask)[0]
        nx, ny, nz, ar, ag, ab = _pytracer.surface(fs.objects, hit[sel], px[sel], py[sel], pz[sel])
        flip = (nx * dx[sel] + ny * dy[sel] + nz * dz[sel]) > 0.0
        normals[:, sel] = np.where(flip, -1.0, 1.0) * np.stack([nx, ny, nz])
        albedo[:, sel] = np.stack([ar, ag, ab])
        depth[sel] = np.minimum(t[sel] / fs.bound_radius, 1.0)

    motion = np.zeros((2, n))
    if frame > 0:
        prev = scene.at(frame - 1, w, h)
        vel = scene.object_velocity(frame)
        qx, qy, qz = px.copy(), py.copy(), pz.copy()
        if hitmask.any():
            v = vel[np.where(hitmask, hit, 0)]
            qx = np.where(hitmask, qx - v[:, 0], 0.0)
            qy = np.where(hitmask, qy - v[:, 1], 0.0)
            qz = np.where(hitmask, qz - v[:, 2], 0.0)
        pc = prev.camera
        vx = np.where(hitmask, qx - pc[0], dx)
        vy = np.where(hitmask, qy - pc[1], dy)
        vz = np.where(hitmask, qz - pc[2], dz)
        row, col, front = _project(pc, w, h, vx, vy, vz)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        mx = col - jj.ravel()
        my = row - ii.ravel()
        # behind the previous camera: send the lookup out of frame (disocclusion)
        # reprojection round-off would otherwise break exact passthrough in static regions
        mx = np.where(np.abs(mx) < 1e-9, 0.0, mx)
        my = np.where(np.abs(my) < 1e-9, 0.0, my)
        motion[0] = np.where(front, mx, 2.0 * w)
        motion[1] = np.where(front, my, 2.0 * h)
    return AuxBuffers(
        normals=normals.reshape(3, h, w),
        albedo=albedo.reshape(3, h, w),
        depth=depth.reshape(1, h, w),
        motion=motion.reshape(2, h, w),
    )
