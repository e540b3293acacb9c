"""Parameter checkpoint files.

Layout: u32 little-endian header length, UTF-8 JSON header, then the tensors
as little-endian float32 at the byte offsets listed in the header (relative
to the start of the data section).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save(path: str | Path, tensors: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> None:
    """Atomic write (temp file + rename)."""
    entries = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append({"name": name, "dims": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"config": config, "config_hash": config_hash(config), "tensors": entries, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | Path, expect_hash: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, tensors). ``expect_hash`` rejects foreign configs."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated")
    (n,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + n].decode("utf-8"))
    if expect_hash is not None and header["config_hash"] != expect_hash:
        raise CheckpointError(
            f"{path}: config hash {header['config_hash']} does not match expected {expect_hash}"
        )
    data = raw[4 + n :]
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["dims"])) if e["dims"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["dims"]).astype(np.float32)
    return header, tensors
