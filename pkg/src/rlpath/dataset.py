"""Pre-rendered clip datasets: references, feature buffers, motion and 1-spp sample banks.

On-disk layout (all arrays planar little-endian float32, channel-major)::

    manifest.json
    <scene>/<frame:04d>.ref      3 x H x W
    <scene>/<frame:04d>.aux      7 x H x W   normals, albedo, depth
    <scene>/<frame:04d>.motion   2 x H x W   (dx, dy) toward the previous frame
    <scene>/<frame:04d>.bank     24 x H x W  eight 1-spp draws, slot-major
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenegen import rng, tracer
from .scenegen.aux import render_aux
from .scenegen.scene import Scene

FORMAT_VERSION = 1
CLIP_LENGTH = 20
BANK_SLOTS = 8
REFERENCE_SPP = 2048
KINDS = {"ref": 3, "aux": 7, "motion": 2, "bank": 3 * BANK_SLOTS}


class DataError(RuntimeError):
    pass


@dataclass
class SceneData:
    name: str
    ref: np.ndarray  # (F, 3, H, W)
    aux: np.ndarray  # (F, 7, H, W)
    motion: np.ndarray  # (F, 2, H, W)
    bank: np.ndarray  # (F, 8, 3, H, W)
    clips: list[tuple[int, int]]


@dataclass
class Clip:
    scene: str
    start: int
    ref: np.ndarray  # (T, 3, H, W)
    aux: np.ndarray
    motion: np.ndarray
    bank: np.ndarray  # (T, 8, 3, H, W)

    @property
    def length(self) -> int:
        return self.ref.shape[0]


class Dataset:
    def __init__(self, root: Path, manifest: dict, scenes: dict[str, SceneData]):
        self.root = root
        self.manifest = manifest
        self.scenes = scenes

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.manifest["resolution"]
        return h, w

    def clips(self, scene_names) -> list[Clip]:
        out = []
        for name in scene_names:
            if name not in self.scenes:
                raise DataError(f"scene {name!r} is not in the dataset ({sorted(self.scenes)})")
            sd = self.scenes[name]
            for a, b in sd.clips:
                out.append(Clip(name, a, sd.ref[a:b], sd.aux[a:b], sd.motion[a:b], sd.bank[a:b]))
        return out


def _frame_path(root: Path, scene: str, frame: int, kind: str) -> Path:
    return root / scene / f"{frame:04d}.{kind}"


def _write_array(path: Path, arr: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(path: Path, channels: int, h: int, w: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) != 4 * channels * h * w:
        raise DataError(f"{path}: expected {4 * channels * h * w} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(channels, h, w).astype(np.float32)


def content_hash(root: Path, manifest: dict) -> str:
    """SHA-256 over every frame file in manifest order."""
    hsh = hashlib.sha256()
    for entry in manifest["scenes"]:
        for f in range(entry["frames"]):
            for kind in KINDS:
                hsh.update(_frame_path(root, entry["id"], f, kind).read_bytes())
    return hsh.hexdigest()


def scene_seeds(seed: int, index: int) -> tuple[int, int]:
    """(bank seed, reference seed): disjoint key domains per scene."""
    return (
        rng.derive_seed(seed, rng.DOMAIN_SAMPLE, index) & 0x7FFFFFFFFFFFFFFF,
        rng.derive_seed(seed, rng.DOMAIN_REFERENCE, index) & 0x7FFFFFFFFFFFFFFF,
    )


def render_frame(scene: Scene, frame: int, resolution, bank_seed: int, ref_seed: int, ref_spp: int):
    h, w = resolution
    fs = scene.at(frame, w, h)
    aux = render_aux(scene, frame, resolution)
    full = np.full((h, w), BANK_SLOTS, dtype=np.int64)
    bank = tracer.trace_counts(fs, frame, bank_seed, full, BANK_SLOTS)  # (H, W, 8, 3)
    bank = np.moveaxis(bank, (0, 1), (-2, -1))  # (8, 3, H, W)
    ref = tracer.render_reference(fs, frame, spp=ref_spp, seed=ref_seed)  # (H, W, 3)
    return (
        np.moveaxis(ref, -1, 0).astype(np.float32),
        aux.features(),
        aux.motion.astype(np.float32),
        bank.astype(np.float32),
    )


@contextmanager
def _lock(out: Path):
    lock = out.parent / (out.name + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{lock} exists: another writer holds {out}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def generate(
    scenes: list[Scene],
    out: str | Path,
    seed: int,
    resolution=(64, 64),
    frames: int | None = None,
    ref_spp: int = REFERENCE_SPP,
    clip_length: int = CLIP_LENGTH,
    progress=None,
) -> dict:
    """Render and write a dataset; the directory appears atomically when complete."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    h, w = resolution
    with _lock(out):
        tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.tmp-"))
        try:
            entries = []
            for si, scene in enumerate(scenes):
                n = scene.frames if frames is None else frames
                if n % clip_length:
                    raise DataError(f"scene {scene.name}: {n} frames is not a multiple of the clip length {clip_length}")
                bank_seed, ref_seed = scene_seeds(seed, si)
                (tmp / scene.name).mkdir()
                for f in range(n):
                    arrays = render_frame(scene, f, resolution, bank_seed, ref_seed, ref_spp)
                    for kind, arr in zip(KINDS, arrays):
                        _write_array(_frame_path(tmp, scene.name, f, kind), arr)
                    if progress:
                        progress(scene.name, f)
                entries.append(
                    {
                        "id": scene.name,
                        "frames": n,
                        "clips": [[a, a + clip_length] for a in range(0, n, clip_length)],
                        "bank_seed": bank_seed,
                        "reference_seed": ref_seed,
                        "scene": scene.to_dict(),
                    }
                )
            manifest = {
                "format_version": FORMAT_VERSION,
                "seed": seed,
                "resolution": [h, w],
                "reference_spp": ref_spp,
                "bank_slots": BANK_SLOTS,
                "clip_length": clip_length,
                "frame_count": sum(e["frames"] for e in entries),
                "scenes": entries,
            }
            manifest["content_hash"] = content_hash(tmp, manifest)
            (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
            if out.exists():
                old = out.parent / f".{out.name}.old-{os.getpid()}"
                os.replace(out, old)
                os.replace(tmp, out)
                shutil.rmtree(old)
            else:
                os.replace(tmp, out)
        except OSError as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise DataError(f"writing dataset to {out} failed: {exc}") from exc
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
    return manifest


def load(root: str | Path, verify: bool = False) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{root} has no manifest.json; run gen-data first")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{root}: unsupported format version {manifest.get('format_version')}")
    if verify and content_hash(root, manifest) != manifest["content_hash"]:
        raise DataError(f"{root}: content hash mismatch")
    h, w = manifest["resolution"]
    scenes = {}
    for e in manifest["scenes"]:
        arrs = {k: [] for k in KINDS}
        for f in range(e["frames"]):
            for kind, ch in KINDS.items():
                arrs[kind].append(_read_array(_frame_path(root, e["id"], f, kind), ch, h, w))
        scenes[e["id"]] = SceneData(
            e["id"],
            np.stack(arrs["ref"]),
            np.stack(arrs["aux"]),
            np.stack(arrs["motion"]),
            np.stack(arrs["bank"]).reshape(e["frames"], BANK_SLOTS, 3, h, w),
            [tuple(c) for c in e["clips"]],
        )
    return Dataset(root, manifest, scenes)


def save(ds: Dataset, out: str | Path) -> None:
    """Write a loaded dataset back out; the bytes match the files it was read from."""
    out = Path(out)
    h, w = ds.resolution
    with _lock(out):
        out.mkdir(parents=True, exist_ok=True)
        for e in ds.manifest["scenes"]:
            sd = ds.scenes[e["id"]]
            (out / sd.name).mkdir(exist_ok=True)
            for f in range(e["frames"]):
                arrays = (sd.ref[f], sd.aux[f], sd.motion[f], sd.bank[f].reshape(3 * BANK_SLOTS, h, w))
                for kind, arr in zip(KINDS, arrays):
                    _write_array(_frame_path(out, sd.name, f, kind), arr)
        (out / "manifest.json").write_text(json.dumps(ds.manifest, indent=1, sort_keys=True))
