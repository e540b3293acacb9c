"""Stateless counter-based random numbers keyed on (seed, frame, pixel, sample).

Every draw is ``mix64(key + (n + 1) * GOLDEN)`` where ``key`` hashes the full
coordinate of a path.  Any sample can therefore be regenerated in isolation,
and the compiled tracer reproduces these exact bits.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_KI = 0x632BE59BD9B4E019
_KJ = 0xD6E8FEB86659FD93
_KS = 0xA0761D6478BD642F
INV_2_53 = 1.0 / 9007199254740992.0

# Key domains separate streams that must never share draws.
DOMAIN_SAMPLE = 0x5A3C
DOMAIN_REFERENCE = 0xC0FFEE
DOMAIN_POLICY = 0x9017
DOMAIN_PERMUTE = 0x7E57
DOMAIN_AUGMENT = 0xA116
DOMAIN_INIT = 0x1417


def mix64(z: int) -> int:
    """splitmix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.array(z, dtype=np.uint64, ndmin=1)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_M1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return z


def frame_key(seed: int, frame: int) -> int:
    return mix64(mix64(seed ^ GOLDEN) + (frame & MASK64) * GOLDEN)


def path_key(fkey: int, i, j, s):
    """Key of one path; accepts ints or broadcastable integer arrays."""
    if all(isinstance(v, (int, np.integer)) for v in (i, j, s)):
        k = mix64(fkey + int(i) * _KI)
        k = mix64(k + int(j) * _KJ)
        return mix64(k + int(s) * _KS)
    i = np.array(i, dtype=np.uint64, ndmin=1)
    j = np.array(j, dtype=np.uint64, ndmin=1)
    s = np.array(s, dtype=np.uint64, ndmin=1)
    with np.errstate(over="ignore"):
        k = mix64_array(np.uint64(fkey) + i * np.uint64(_KI))
        k = mix64_array(k + j * np.uint64(_KJ))
        return mix64_array(k + s * np.uint64(_KS))


def uniform(key, n):
    """The ``n``-th uniform draw in [0, 1) of the stream ``key``."""
    if isinstance(key, int) and isinstance(n, (int, np.integer)):
        return (mix64(key + (int(n) + 1) * GOLDEN) >> 11) * INV_2_53
    key = np.array(key, dtype=np.uint64, ndmin=1)
    n = np.array(n, dtype=np.uint64, ndmin=1)
    with np.errstate(over="ignore"):
        z = mix64_array(key + (n + np.uint64(1)) * np.uint64(GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * INV_2_53


def normal_field(seed: int, domain: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals for an array shape, keyed on (seed, domain, flat index).

    Box-Muller over two counter draws; used where the tracer's exact-arithmetic
    constraint does not apply (policy exploration noise).
    """
    size = int(np.prod(shape))
    key = mix64(mix64(seed ^ GOLDEN) + domain * GOLDEN)
    idx = np.arange(size, dtype=np.uint64)
    u1 = uniform(key, 2 * idx)
    u2 = uniform(key, 2 * idx + np.uint64(1))
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return (r * np.cos(2.0 * np.pi * u2)).reshape(shape)


def derive_seed(seed: int, *parts: int) -> int:
    """Deterministic child seed; keeps RNG domains disjoint."""
    k = mix64(seed ^ GOLDEN)
    for p in parts:
        k = mix64(k + (p & MASK64) * GOLDEN)
    return k
