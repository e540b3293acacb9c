"""Vectorised numpy path tracer; the fallback when the compiled kernel is absent.

Arithmetic is restricted to + - * / sqrt floor and comparisons, evaluated in
the same order as ``_ctracer.pyx``, so both backends agree to the last bit.
Keep the two files in lock step.
"""

from __future__ import annotations

import numpy as np

from . import rng

MAX_DEPTH = 8
RR_DEPTH = 3
RR_CAP = 0.95
EPS_T = 1e-6
OFFSET = 1e-4
DISK_TRIES = 33
DRAWS_PER_BOUNCE = 2 + 2 * DISK_TRIES
INF = float("inf")


def camera_rays(cam: np.ndarray, W: int, H: int, i, j, u0, u1):
    ox = np.full(np.shape(i), cam[0])
    oy = np.full(np.shape(i), cam[1])
    oz = np.full(np.shape(i), cam[2])
    px = (j + u0) / W
    py = (i + u1) / H
    sx = (2.0 * px - 1.0) * cam[12] * cam[13]
    sy = (1.0 - 2.0 * py) * cam[12]
    dx = (cam[3] + sx * cam[6]) + sy * cam[9]
    dy = (cam[4] + sx * cam[7]) + sy * cam[10]
    dz = (cam[5] + sx * cam[8]) + sy * cam[11]
    inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
    return ox, oy, oz, dx * inv, dy * inv, dz * inv


def intersect(objs: np.ndarray, ox, oy, oz, dx, dy, dz):
    """Closest hit: returns (t, object index or -1)."""
    n = ox.shape[0]
    tbest = np.full(n, INF)
    ibest = np.full(n, -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(objs.shape[0]):
            row = objs[k]
            if row[0] == 0.0:
                ocx = ox - row[1]
                ocy = oy - row[2]
                ocz = oz - row[3]
                b = ocx * dx + ocy * dy + ocz * dz
                c = (ocx * ocx + ocy * ocy + ocz * ocz) - row[4] * row[4]
                disc = b * b - c
                ok = disc > 0.0
                s = np.sqrt(np.where(ok, disc, 0.0))
                t = -b - s
                t = np.where(t <= EPS_T, -b + s, t)
                ok &= t > EPS_T
            else:
                tmin = np.full(n, -INF)
                tmax = np.full(n, INF)
                for o_a, d_a, lo, hi in ((ox, dx, row[1], row[4]), (oy, dy, row[2], row[5]), (oz, dz, row[3], row[6])):
                    inv = 1.0 / d_a
                    t0 = (lo - o_a) * inv
                    t1 = (hi - o_a) * inv
                    sw = t0 > t1
                    t0, t1 = np.where(sw, t1, t0), np.where(sw, t0, t1)
                    tmin = np.where(t0 > tmin, t0, tmin)
                    tmax = np.where(t1 < tmax, t1, tmax)
                ok = (tmax >= tmin) & (tmax > EPS_T)
                t = np.where(tmin > EPS_T, tmin, tmax)
            ok &= t < tbest
            tbest = np.where(ok, t, tbest)
            ibest = np.where(ok, k, ibest)
    return tbest, ibest


def surface(objs: np.ndarray, idx, px, py, pz):
    """Outward geometric normal and albedo at hit points (idx >= 0)."""
    rows = objs[idx]
    nx = np.zeros_like(px)
    ny = np.zeros_like(px)
    nz = np.zeros_like(px)
    sph = rows[:, 0] == 0.0
    if sph.any():
        ex = px - rows[:, 1]
        ey = py - rows[:, 2]
        ez = pz - rows[:, 3]
        inv = 1.0 / np.sqrt(ex * ex + ey * ey + ez * ez)
        nx = np.where(sph, ex * inv, nx)
        ny = np.where(sph, ey * inv, ny)
        nz = np.where(sph, ez * inv, nz)
    box = ~sph
    if box.any():
        best = np.full(px.shape, INF)
        bx = np.zeros_like(px)
        by = np.zeros_like(px)
        bz = np.zeros_like(px)
        for axis, p in enumerate((px, py, pz)):
            dlo = np.abs(p - rows[:, 1 + axis])
            dhi = np.abs(p - rows[:, 4 + axis])
            for dist, sign in ((dlo, -1.0), (dhi, 1.0)):
                take = dist < best
                best = np.where(take, dist, best)
                bx = np.where(take, sign if axis == 0 else 0.0, bx)
                by = np.where(take, sign if axis == 1 else 0.0, by)
                bz = np.where(take, sign if axis == 2 else 0.0, bz)
        nx = np.where(box, bx, nx)
        ny = np.where(box, by, ny)
        nz = np.where(box, bz, nz)
    ar = rows[:, 7].copy()
    ag = rows[:, 8].copy()
    ab = rows[:, 9].copy()
    scale = rows[:, 14]
    chk = scale > 0.0
    if chk.any():
        s = np.where(chk, scale, 1.0)
        cell = np.floor(px / s) + np.floor(pz / s)
        odd = chk & ((cell - 2.0 * np.floor(cell / 2.0)) == 1.0)
        ar = np.where(odd, rows[:, 15], ar)
        ag = np.where(odd, rows[:, 16], ag)
        ab = np.where(odd, rows[:, 17], ab)
    return nx, ny, nz, ar, ag, ab


def trace_paths(fs, fkey: int, i, j, s) -> np.ndarray:
    """Radiance of the paths keyed by (fkey, i, j, s); returns (M, 3) float64."""
    objs, cam, env = fs.objects, fs.camera, fs.environment
    i = np.asarray(i, dtype=np.int64).ravel()
    j = np.asarray(j, dtype=np.int64).ravel()
    s = np.asarray(s, dtype=np.int64).ravel()
    m = i.shape[0]
    out = np.zeros((m, 3))
    if m == 0:
        return out
    key = rng.path_key(fkey, i, j, s)
    u0 = rng.uniform(key, 0)
    u1 = rng.uniform(key, 1)
    ox, oy, oz, dx, dy, dz = camera_rays(cam, fs.width, fs.height, i.astype(np.float64), j.astype(np.float64), u0, u1)
    lr = np.zeros(m)
    lg = np.zeros(m)
    lb = np.zeros(m)
    tr = np.ones(m)
    tg = np.ones(m)
    tb = np.ones(m)
    alive = np.arange(m)

    for depth in range(MAX_DEPTH):
        if alive.size == 0:
            break
        t, hit = intersect(objs, ox, oy, oz, dx, dy, dz)
        miss = hit < 0
        if miss.any():
            a = alive[miss]
            lr[a] = lr[a] + tr[a] * env[0]
            lg[a] = lg[a] + tg[a] * env[1]
            lb[a] = lb[a] + tb[a] * env[2]
        keep = ~miss
        alive, t, hit = alive[keep], t[keep], hit[keep]
        ox, oy, oz, dx, dy, dz = ox[keep], oy[keep], oz[keep], dx[keep], dy[keep], dz[keep]
        if alive.size == 0:
            break
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        nx, ny, nz, ar, ag, ab = surface(objs, hit, px, py, pz)
        facing = (nx * dx + ny * dy + nz * dz) > 0.0
        nx = np.where(facing, -nx, nx)
        ny = np.where(facing, -ny, ny)
        nz = np.where(facing, -nz, nz)
        rows = objs[hit]
        lr[alive] = lr[alive] + tr[alive] * rows[:, 10]
        lg[alive] = lg[alive] + tg[alive] * rows[:, 11]
        lb[alive] = lb[alive] + tb[alive] * rows[:, 12]
        if depth + 1 == MAX_DEPTH:
            break

        k = key[alive]
        base = 2 + depth * DRAWS_PER_BOUNCE
        u_lobe = rng.uniform(k, base)
        mirror = u_lobe < rows[:, 13]

        # rejection-sampled unit disk, fixed draw slots per attempt
        n = alive.size
        da = np.zeros(n)
        db = np.zeros(n)
        dr2 = np.zeros(n)
        todo = np.ones(n, dtype=bool)
        for attempt in range(DISK_TRIES):
            if not todo.any():
                break
            w = np.nonzero(todo)[0]
            a = 2.0 * rng.uniform(k[w], base + 2 + 2 * attempt) - 1.0
            b = 2.0 * rng.uniform(k[w], base + 3 + 2 * attempt) - 1.0
            r2 = a * a + b * b
            acc = r2 < 1.0
            wa = w[acc]
            da[wa] = a[acc]
            db[wa] = b[acc]
            dr2[wa] = r2[acc]
            todo[wa] = False
        dzl = np.sqrt(1.0 - dr2)
        sign = np.where(nz >= 0.0, 1.0, -1.0)
        aa = -1.0 / (sign + nz)
        bb = nx * ny * aa
        t1x = 1.0 + sign * nx * nx * aa
        t1y = sign * bb
        t1z = -sign * nx
        t2x = bb
        t2y = sign + ny * ny * aa
        t2z = -ny
        qx = (da * t1x + db * t2x) + dzl * nx
        qy = (da * t1y + db * t2y) + dzl * ny
        qz = (da * t1z + db * t2z) + dzl * nz
        qi = 1.0 / np.sqrt(qx * qx + qy * qy + qz * qz)
        qx, qy, qz = qx * qi, qy * qi, qz * qi

        dn = dx * nx + dy * ny + dz * nz
        rx = dx - 2.0 * dn * nx
        ry = dy - 2.0 * dn * ny
        rz = dz - 2.0 * dn * nz
        ri = 1.0 / np.sqrt(rx * rx + ry * ry + rz * rz)
        rx, ry, rz = rx * ri, ry * ri, rz * ri

        ndx = np.where(mirror, rx, qx)
        ndy = np.where(mirror, ry, qy)
        ndz = np.where(mirror, rz, qz)

        tr[alive] = tr[alive] * ar
        tg[alive] = tg[alive] * ag
        tb[alive] = tb[alive] * ab
        q = np.where(tr[alive] > tg[alive], tr[alive], tg[alive])
        q = np.where(tb[alive] > q, tb[alive], q)
        go = q > 0.0
        if depth + 1 >= RR_DEPTH:
            q = np.where(q > RR_CAP, RR_CAP, q)
            u_rr = rng.uniform(k, base + 1)
            go &= u_rr < q
            qs = np.where(go, q, 1.0)
            tr[alive] = tr[alive] / qs
            tg[alive] = tg[alive] / qs
            tb[alive] = tb[alive] / qs

        ox = px + OFFSET * nx
        oy = py + OFFSET * ny
        oz = pz + OFFSET * nz
        alive = alive[go]
        ox, oy, oz = ox[go], oy[go], oz[go]
        dx, dy, dz = ndx[go], ndy[go], ndz[go]

    out[:, 0] = lr
    out[:, 1] = lg
    out[:, 2] = lb
    return out


def render_sum(fs, fkey: int, start: int, count: int) -> np.ndarray:
    """Per-pixel sum of samples ``start .. start+count-1``, added in index order."""
    H, W = fs.height, fs.width
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    acc = np.zeros((H * W, 3))
    for k in range(start, start + count):
        acc = acc + trace_paths(fs, fkey, ii, jj, np.full_like(ii, k))
    return acc.reshape(H, W, 3)


def trace_counts(fs, fkey: int, counts: np.ndarray, cap: int) -> np.ndarray:
    """Samples 0..counts-1 at every pixel; (H, W, cap, 3) with unused slots zero."""
    H, W = counts.shape
    out = np.zeros((H, W, cap, 3))
    for k in range(int(counts.max(initial=0))):
        ii, jj = np.nonzero(counts > k)
        out[ii, jj, k] = trace_paths(fs, fkey, ii, jj, np.full_like(ii, k))
    return out
