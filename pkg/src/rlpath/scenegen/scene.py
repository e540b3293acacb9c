"""Animated analytic scenes and their per-frame flattening for the tracers."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Column layout of the flattened object table shared by both tracer backends.
OBJ_TYPE = 0
OBJ_GEOM = slice(1, 7)  # sphere: cx cy cz r _ _ | box: minx miny minz maxx maxy maxz
OBJ_ALBEDO = slice(7, 10)
OBJ_EMISSION = slice(10, 13)
OBJ_SPEC = 13
OBJ_CHECKER = 14
OBJ_ALBEDO2 = slice(15, 18)
OBJ_COLS = 18

SPHERE = 0
BOX = 1


class SceneError(ValueError):
    pass


def _poly(coeffs, frame: int) -> np.ndarray:
    """Evaluate a vector polynomial given as a list of coefficient triples."""
    out = np.zeros(3)
    for power, c in enumerate(coeffs):
        out = out + np.asarray(c, dtype=np.float64) * float(frame) ** power
    return out


@dataclass
class SceneObject:
    kind: str  # "sphere" | "box"
    center: list  # polynomial coefficients, each a length-3 list
    radius: float = 1.0
    half_extent: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    albedo: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    emission: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    specularity: float = 0.0
    emission_keys: list | None = None  # per-frame emission multipliers, cycled
    checker_scale: float = 0.0
    albedo2: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def validate(self) -> None:
        if self.kind not in ("sphere", "box"):
            raise SceneError(f"unknown object kind {self.kind!r}")
        for name in ("albedo", "albedo2"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(v < 0.0 or v >= 1.0 for v in vals):
                raise SceneError(f"{name} components must lie in [0, 1), got {vals}")
        if len(self.emission) != 3 or any(e < 0.0 for e in self.emission):
            raise SceneError(f"emission must be nonnegative RGB, got {self.emission}")
        if not 0.0 <= self.specularity <= 1.0:
            raise SceneError("specularity must lie in [0, 1]")
        if self.kind == "sphere" and self.radius <= 0:
            raise SceneError("sphere radius must be positive")
        if not self.center or any(len(c) != 3 for c in self.center):
            raise SceneError("center needs >= 1 coefficient triple")

    def center_at(self, frame: int) -> np.ndarray:
        return _poly(self.center, frame)

    def row(self, frame: int) -> np.ndarray:
        r = np.zeros(OBJ_COLS)
        c = self.center_at(frame)
        if self.kind == "sphere":
            r[OBJ_TYPE] = SPHERE
            r[1:4] = c
            r[4] = self.radius
        else:
            h = np.asarray(self.half_extent, dtype=np.float64)
            r[OBJ_TYPE] = BOX
            r[1:4] = c - h
            r[4:7] = c + h
        r[OBJ_ALBEDO] = self.albedo
        scale = 1.0
        if self.emission_keys:
            scale = float(self.emission_keys[frame % len(self.emission_keys)])
        r[OBJ_EMISSION] = np.asarray(self.emission, dtype=np.float64) * scale
        r[OBJ_SPEC] = self.specularity
        r[OBJ_CHECKER] = self.checker_scale
        r[OBJ_ALBEDO2] = self.albedo2
        return r


@dataclass
class Camera:
    fov_deg: float
    keyframes: list  # [{"frame", "position", "yaw_deg", "pitch_deg"}], sorted by frame

    def pose(self, frame: int) -> tuple[np.ndarray, float, float]:
        keys = self.keyframes
        if frame <= keys[0]["frame"] or len(keys) == 1:
            k = keys[0]
            return np.asarray(k["position"], float), k.get("yaw_deg", 0.0), k.get("pitch_deg", 0.0)
        for a, b in zip(keys, keys[1:]):
            if a["frame"] <= frame <= b["frame"]:
                w = (frame - a["frame"]) / float(b["frame"] - a["frame"])
                pos = (1 - w) * np.asarray(a["position"], float) + w * np.asarray(b["position"], float)
                yaw = (1 - w) * a.get("yaw_deg", 0.0) + w * b.get("yaw_deg", 0.0)
                pitch = (1 - w) * a.get("pitch_deg", 0.0) + w * b.get("pitch_deg", 0.0)
                return pos, yaw, pitch
        k = keys[-1]
        return np.asarray(k["position"], float), k.get("yaw_deg", 0.0), k.get("pitch_deg", 0.0)

    def vector(self, frame: int, width: int, height: int) -> np.ndarray:
        """origin(3) forward(3) right(3) up(3) tan_half_fov aspect"""
        pos, yaw, pitch = self.pose(frame)
        y, p = math.radians(yaw), math.radians(pitch)
        fwd = np.array([math.sin(y) * math.cos(p), math.sin(p), -math.cos(y) * math.cos(p)])
        right = np.array([math.cos(y), 0.0, math.sin(y)])
        up = np.cross(right, fwd)
        up /= np.linalg.norm(up)
        tan_half = math.tan(math.radians(self.fov_deg) / 2.0)
        return np.concatenate([pos, fwd, right, up, [tan_half, width / float(height)]])


@dataclass
class FrameScene:
    """Geometry of one frame, flattened for the tracer kernels."""

    objects: np.ndarray  # (N, OBJ_COLS) float64
    camera: np.ndarray  # (14,) float64
    environment: np.ndarray  # (3,) float64
    width: int
    height: int
    bound_radius: float


@dataclass
class Scene:
    name: str
    objects: list[SceneObject]
    camera: Camera
    environment: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    frames: int = 40
    bound_radius: float = 10.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.objects:
            raise SceneError("scene has no objects")
        for o in self.objects:
            o.validate()
        if any(e < 0 for e in self.environment):
            raise SceneError("environment radiance must be nonnegative")
        if not self.camera.keyframes:
            raise SceneError("camera needs at least one keyframe")
        if self.bound_radius <= 0:
            raise SceneError("bound_radius must be positive")

    def at(self, frame: int, width: int, height: int) -> FrameScene:
        rows = np.stack([o.row(frame) for o in self.objects])
        return FrameScene(
            objects=np.ascontiguousarray(rows),
            camera=self.camera.vector(frame, width, height),
            environment=np.asarray(self.environment, dtype=np.float64),
            width=width,
            height=height,
            bound_radius=float(self.bound_radius),
        )

    def object_velocity(self, frame: int) -> np.ndarray:
        """Per-object center displacement from ``frame - 1`` to ``frame``."""
        return np.stack([o.center_at(frame) - o.center_at(frame - 1) for o in self.objects])

    # --- JSON ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "environment": list(self.environment),
            "frames": self.frames,
            "bound_radius": self.bound_radius,
            "camera": {"fov_deg": self.camera.fov_deg, "keyframes": self.camera.keyframes},
            "objects": [
                {
                    "kind": o.kind,
                    "center": o.center,
                    "radius": o.radius,
                    "half_extent": o.half_extent,
                    "albedo": o.albedo,
                    "emission": o.emission,
                    "specularity": o.specularity,
                    "emission_keys": o.emission_keys,
                    "checker_scale": o.checker_scale,
                    "albedo2": o.albedo2,
                }
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        d = copy.deepcopy(d)
        objs = [SceneObject(**o) for o in d.pop("objects")]
        cam = Camera(**d.pop("camera"))
        return cls(objects=objs, camera=cam, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- built-in scenes -------------------------------------------------------


def _sphere(center, radius, albedo, **kw) -> SceneObject:
    if isinstance(center[0], (int, float)):
        center = [center]
    return SceneObject("sphere", center=center, radius=radius, albedo=albedo, **kw)


def _box(center, half, albedo, **kw) -> SceneObject:
    if isinstance(center[0], (int, float)):
        center = [center]
    return SceneObject("box", center=center, half_extent=half, albedo=albedo, **kw)


def furnace_scene(albedo: float = 0.5, env: float = 1.0) -> Scene:
    """A convex diffuse sphere under constant illumination; images to albedo * env."""
    return Scene(
        name="furnace",
        objects=[_sphere([0.0, 0.0, 0.0], 1.0, [albedo] * 3)],
        camera=Camera(40.0, [{"frame": 0, "position": [0.0, 0.0, 3.5]}]),
        environment=[env] * 3,
        frames=1,
        bound_radius=5.0,
    )


def moving_sphere_box() -> Scene:
    """Diffuse sphere sliding across an open-fronted box lit from the ceiling."""
    wall = [0.7, 0.7, 0.7]
    return Scene(
        name="sphere_box",
        objects=[
            _box([0.0, -1.05, -1.0], [2.0, 0.05, 2.0], wall),
            _box([0.0, 1.05, -1.0], [2.0, 0.05, 2.0], wall),
            _box([-2.05, 0.0, -1.0], [0.05, 1.1, 2.0], [0.75, 0.25, 0.2]),
            _box([2.05, 0.0, -1.0], [0.05, 1.1, 2.0], [0.2, 0.6, 0.25]),
            _box([0.0, 0.0, -3.05], [2.1, 1.1, 0.05], wall),
            _box([0.0, 0.99, -1.0], [0.6, 0.02, 0.6], [0.0, 0.0, 0.0], emission=[6.0, 5.6, 5.0]),
            _sphere([[-1.1, -0.6, -1.2], [0.06, 0.0, 0.0], [0.0, 0.0, 0.0]], 0.45, [0.6, 0.6, 0.8]),
            _sphere([0.9, -0.7, -0.4], 0.3, [0.8, 0.7, 0.3], specularity=0.3),
        ],
        camera=Camera(50.0, [{"frame": 0, "position": [0.0, 0.0, 3.2]}]),
        environment=[0.35, 0.4, 0.5],
        frames=40,
        bound_radius=8.0,
    )


def mirror_sphere() -> Scene:
    """Mirror sphere orbiting over a diffuse floor under a sky and a small lamp."""
    return Scene(
        name="mirror",
        objects=[
            _box([0.0, -1.1, -2.0], [6.0, 0.1, 6.0], [0.6, 0.55, 0.5]),
            _sphere(
                [[-1.2, -0.3, -2.0], [0.06, 0.0, 0.03], [0.0, -0.0004, 0.0]], 0.7, [0.9, 0.9, 0.9], specularity=1.0
            ),
            _sphere([1.3, -0.5, -2.4], 0.5, [0.3, 0.5, 0.7]),
            _sphere([0.5, 1.6, -1.5], 0.25, [0.0, 0.0, 0.0], emission=[12.0, 11.0, 9.0]),
            _box([-2.2, 0.2, -4.0], [0.6, 1.3, 0.6], [0.7, 0.3, 0.3]),
        ],
        camera=Camera(50.0, [{"frame": 0, "position": [0.0, 0.4, 2.0], "pitch_deg": -8.0}]),
        environment=[0.5, 0.6, 0.8],
        frames=40,
        bound_radius=10.0,
    )


def flicker_light() -> Scene:
    """Area light whose intensity flickers over a cluster of diffuse objects."""
    return Scene(
        name="flicker",
        objects=[
            _box([0.0, -1.1, -2.0], [5.0, 0.1, 5.0], [0.5, 0.5, 0.5]),
            _box([0.0, 1.6, -2.0], [0.8, 0.05, 0.8], [0.0, 0.0, 0.0], emission=[5.0, 4.5, 4.0],
                 emission_keys=[1.0, 0.6, 1.2, 0.8, 1.0, 0.5, 1.1]),
            _sphere([-0.8, -0.5, -2.2], 0.5, [0.7, 0.4, 0.3]),
            _box([[0.7, -0.55, -2.0], [0.0, 0.012, 0.0]], [0.4, 0.45, 0.4], [0.3, 0.6, 0.4]),
            _sphere([0.1, -0.75, -1.3], 0.25, [0.8, 0.8, 0.8], specularity=0.6),
        ],
        camera=Camera(
            45.0,
            [
                {"frame": 0, "position": [0.0, 0.3, 1.5], "pitch_deg": -10.0},
                {"frame": 39, "position": [0.4, 0.3, 1.4], "yaw_deg": 6.0, "pitch_deg": -10.0},
            ],
        ),
        environment=[0.2, 0.22, 0.3],
        frames=40,
        bound_radius=10.0,
    )


def checker_pan() -> Scene:
    """Checkerboard floor with a panning camera and a pair of spheres."""
    return Scene(
        name="checker",
        objects=[
            _box([0.0, -1.1, -3.0], [8.0, 0.1, 8.0], [0.8, 0.8, 0.8], checker_scale=0.5,
                 albedo2=[0.15, 0.15, 0.2]),
            _sphere([-0.7, -0.4, -2.6], 0.6, [0.8, 0.3, 0.3]),
            _sphere([[0.9, -0.6, -2.0], [0.0, 0.0, -0.02]], 0.4, [0.9, 0.9, 0.9], specularity=0.8),
            _sphere([0.0, 2.2, -2.0], 0.4, [0.0, 0.0, 0.0], emission=[10.0, 9.5, 9.0]),
        ],
        camera=Camera(
            50.0,
            [
                {"frame": 0, "position": [-0.6, 0.2, 1.2], "yaw_deg": -8.0, "pitch_deg": -10.0},
                {"frame": 39, "position": [0.6, 0.2, 1.2], "yaw_deg": 8.0, "pitch_deg": -10.0},
            ],
        ),
        environment=[0.55, 0.6, 0.7],
        frames=40,
        bound_radius=10.0,
    )


BUILTIN_SCENES = {
    "sphere_box": moving_sphere_box,
    "mirror": mirror_sphere,
    "flicker": flicker_light,
    "checker": checker_pan,
    "furnace": furnace_scene,
}


def get_scene(name_or_path: str) -> Scene:
    if name_or_path in BUILTIN_SCENES:
        return BUILTIN_SCENES[name_or_path]()
    p = Path(name_or_path)
    if p.exists():
        return Scene.load(p)
    raise SceneError(f"unknown scene {name_or_path!r}; builtins: {sorted(BUILTIN_SCENES)}")
