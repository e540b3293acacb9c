# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path-tracing kernel.

Mirrors ``_pytracer`` operation for operation (same draw slots, same
evaluation order, no libm transcendental calls) so the two backends produce
identical bits.  Build with ``-ffp-contract=off``.
"""

from cython.parallel import prange
from libc.math cimport sqrt, floor, fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t

import numpy as np
cimport numpy as cnp

cdef int MAX_DEPTH = 8
cdef int RR_DEPTH = 3
cdef double RR_CAP = 0.95
cdef double EPS_T = 1e-6
cdef double OFFSET = 1e-4
cdef int DISK_TRIES = 33
cdef int DRAWS_PER_BOUNCE = 2 + 2 * 33

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef uint64_t KI = 0x632BE59BD9B4E019ULL
cdef uint64_t KJ = 0xD6E8FEB86659FD93ULL
cdef uint64_t KS = 0xA0761D6478BD642FULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline double uni(uint64_t key, uint64_t n) noexcept nogil:
    return <double>(mix64(key + (n + 1) * GOLDEN) >> 11) * INV_2_53


cdef inline uint64_t pkey(uint64_t fkey, uint64_t i, uint64_t j, uint64_t s) noexcept nogil:
    cdef uint64_t k = mix64(fkey + i * KI)
    k = mix64(k + j * KJ)
    return mix64(k + s * KS)


cdef inline int intersect(const double[:, ::1] objs, double ox, double oy, double oz,
                          double dx, double dy, double dz, double* tout) noexcept nogil:
    cdef int n = objs.shape[0]
    cdef int k, a, best = -1
    cdef double tbest = INFINITY
    cdef double ocx, ocy, ocz, b, c, disc, s, t, tmin, tmax, inv, t0, t1, tmp, o_a, d_a
    for k in range(n):
        if objs[k, 0] == 0.0:
            ocx = ox - objs[k, 1]
            ocy = oy - objs[k, 2]
            ocz = oz - objs[k, 3]
            b = ocx * dx + ocy * dy + ocz * dz
            c = (ocx * ocx + ocy * ocy + ocz * ocz) - objs[k, 4] * objs[k, 4]
            disc = b * b - c
            if disc > 0.0:
                s = sqrt(disc)
                t = -b - s
                if t <= EPS_T:
                    t = -b + s
                if t > EPS_T and t < tbest:
                    tbest = t
                    best = k
        else:
            tmin = -INFINITY
            tmax = INFINITY
            for a in range(3):
                if a == 0:
                    o_a = ox
                    d_a = dx
                elif a == 1:
                    o_a = oy
                    d_a = dy
                else:
                    o_a = oz
                    d_a = dz
                inv = 1.0 / d_a
                t0 = (objs[k, 1 + a] - o_a) * inv
                t1 = (objs[k, 4 + a] - o_a) * inv
                if t0 > t1:
                    tmp = t0
                    t0 = t1
                    t1 = tmp
                if t0 > tmin:
                    tmin = t0
                if t1 < tmax:
                    tmax = t1
            if tmax >= tmin and tmax > EPS_T:
                if tmin > EPS_T:
                    t = tmin
                else:
                    t = tmax
                if t < tbest:
                    tbest = t
                    best = k
    tout[0] = tbest
    return best


cdef inline void surface(const double[:, ::1] objs, int k, double px, double py, double pz,
                         double* nrm, double* alb) noexcept nogil:
    cdef double ex, ey, ez, inv, best, dist, sign, cell, sc, p
    cdef int a, side
    if objs[k, 0] == 0.0:
        ex = px - objs[k, 1]
        ey = py - objs[k, 2]
        ez = pz - objs[k, 3]
        inv = 1.0 / sqrt(ex * ex + ey * ey + ez * ez)
        nrm[0] = ex * inv
        nrm[1] = ey * inv
        nrm[2] = ez * inv
    else:
        best = INFINITY
        nrm[0] = 0.0
        nrm[1] = 0.0
        nrm[2] = 0.0
        for a in range(3):
            if a == 0:
                p = px
            elif a == 1:
                p = py
            else:
                p = pz
            for side in range(2):
                if side == 0:
                    dist = fabs(p - objs[k, 1 + a])
                    sign = -1.0
                else:
                    dist = fabs(p - objs[k, 4 + a])
                    sign = 1.0
                if dist < best:
                    best = dist
                    nrm[0] = 0.0
                    nrm[1] = 0.0
                    nrm[2] = 0.0
                    nrm[a] = sign
    alb[0] = objs[k, 7]
    alb[1] = objs[k, 8]
    alb[2] = objs[k, 9]
    sc = objs[k, 14]
    if sc > 0.0:
        cell = floor(px / sc) + floor(pz / sc)
        if (cell - 2.0 * floor(cell / 2.0)) == 1.0:
            alb[0] = objs[k, 15]
            alb[1] = objs[k, 16]
            alb[2] = objs[k, 17]


cdef void trace_one(const double[:, ::1] objs, const double[::1] cam, const double[::1] env,
                    int W, int H, uint64_t fkey, int64_t i, int64_t j, int64_t s,
                    double* L) noexcept nogil:
    cdef uint64_t key = pkey(fkey, <uint64_t>i, <uint64_t>j, <uint64_t>s)
    cdef double u0 = uni(key, 0)
    cdef double u1 = uni(key, 1)
    cdef double px_, py_, sx, sy, ox, oy, oz, dx, dy, dz, inv, t
    cdef double lr = 0.0, lg = 0.0, lb = 0.0
    cdef double tr = 1.0, tg = 1.0, tb = 1.0
    cdef double nrm[3]
    cdef double alb[3]
    cdef double px, py, pz, nx, ny, nz, q, u_rr, a, b, r2, dr2, da, db, dzl
    cdef double sign, aa, bb, t1x, t1y, t1z, t2x, t2y, t2z, qx, qy, qz, qi, dn
    cdef int depth, hit, attempt
    cdef uint64_t base

    ox = cam[0]
    oy = cam[1]
    oz = cam[2]
    px_ = (<double>j + u0) / W
    py_ = (<double>i + u1) / H
    sx = (2.0 * px_ - 1.0) * cam[12] * cam[13]
    sy = (1.0 - 2.0 * py_) * cam[12]
    dx = (cam[3] + sx * cam[6]) + sy * cam[9]
    dy = (cam[4] + sx * cam[7]) + sy * cam[10]
    dz = (cam[5] + sx * cam[8]) + sy * cam[11]
    inv = 1.0 / sqrt(dx * dx + dy * dy + dz * dz)
    dx = dx * inv
    dy = dy * inv
    dz = dz * inv

    for depth in range(MAX_DEPTH):
        hit = intersect(objs, ox, oy, oz, dx, dy, dz, &t)
        if hit < 0:
            lr = lr + tr * env[0]
            lg = lg + tg * env[1]
            lb = lb + tb * env[2]
            break
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        surface(objs, hit, px, py, pz, nrm, alb)
        nx = nrm[0]
        ny = nrm[1]
        nz = nrm[2]
        if (nx * dx + ny * dy + nz * dz) > 0.0:
            nx = -nx
            ny = -ny
            nz = -nz
        lr = lr + tr * objs[hit, 10]
        lg = lg + tg * objs[hit, 11]
        lb = lb + tb * objs[hit, 12]
        if depth + 1 == MAX_DEPTH:
            break

        base = 2 + depth * DRAWS_PER_BOUNCE
        if uni(key, base) < objs[hit, 13]:
            dn = dx * nx + dy * ny + dz * nz
            qx = dx - 2.0 * dn * nx
            qy = dy - 2.0 * dn * ny
            qz = dz - 2.0 * dn * nz
        else:
            da = 0.0
            db = 0.0
            dr2 = 0.0
            for attempt in range(DISK_TRIES):
                a = 2.0 * uni(key, base + 2 + 2 * attempt) - 1.0
                b = 2.0 * uni(key, base + 3 + 2 * attempt) - 1.0
                r2 = a * a + b * b
                if r2 < 1.0:
                    da = a
                    db = b
                    dr2 = r2
                    break
            dzl = sqrt(1.0 - dr2)
            if nz >= 0.0:
                sign = 1.0
            else:
                sign = -1.0
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
        qi = 1.0 / sqrt(qx * qx + qy * qy + qz * qz)
        qx = qx * qi
        qy = qy * qi
        qz = qz * qi

        tr = tr * alb[0]
        tg = tg * alb[1]
        tb = tb * alb[2]
        if tr > tg:
            q = tr
        else:
            q = tg
        if tb > q:
            q = tb
        if not (q > 0.0):
            break
        if depth + 1 >= RR_DEPTH:
            if q > RR_CAP:
                q = RR_CAP
            u_rr = uni(key, base + 1)
            if not (u_rr < q):
                break
            tr = tr / q
            tg = tg / q
            tb = tb / q

        ox = px + OFFSET * nx
        oy = py + OFFSET * ny
        oz = pz + OFFSET * nz
        dx = qx
        dy = qy
        dz = qz

    L[0] = lr
    L[1] = lg
    L[2] = lb


def trace_paths(const double[:, ::1] objs, const double[::1] cam, const double[::1] env,
                int W, int H, uint64_t fkey,
                const int64_t[::1] ii, const int64_t[::1] jj, const int64_t[::1] ss):
    cdef Py_ssize_t m = ii.shape[0]
    out_arr = np.zeros((m, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p
    for p in prange(m, nogil=True, schedule="dynamic", chunksize=64):
        trace_one(objs, cam, env, W, H, fkey, ii[p], jj[p], ss[p], &out[p, 0])
    return out_arr


def render_sum(const double[:, ::1] objs, const double[::1] cam, const double[::1] env,
               int W, int H, uint64_t fkey, int64_t start, int64_t count):
    out_arr = np.zeros((H, W, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, i, j
    cdef int64_t k
    cdef double L[3]
    cdef double sr, sg, sb
    for p in prange(H * W, nogil=True, schedule="dynamic", chunksize=16):
        i = p // W
        j = p % W
        sr = 0.0
        sg = 0.0
        sb = 0.0
        for k in range(start, start + count):
            trace_one(objs, cam, env, W, H, fkey, i, j, k, L)
            sr = sr + L[0]
            sg = sg + L[1]
            sb = sb + L[2]
        out[i, j, 0] = sr
        out[i, j, 1] = sg
        out[i, j, 2] = sb
    return out_arr


def trace_counts(const double[:, ::1] objs, const double[::1] cam, const double[::1] env,
                 int W, int H, uint64_t fkey, const int64_t[:, ::1] counts, int cap):
    out_arr = np.zeros((H, W, cap, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t p, i, j
    cdef int64_t k
    for p in prange(H * W, nogil=True, schedule="dynamic", chunksize=16):
        i = p // W
        j = p % W
        for k in range(counts[i, j]):
            trace_one(objs, cam, env, W, H, fkey, i, j, k, &out[i, j, k, 0])
    return out_arr
