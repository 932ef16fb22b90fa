# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ray-casting kernels: scalar BVH traversal per ray.

Same interface and arithmetic as `emtrace._core_np`; this version walks the
tree per ray with near-child-first ordering and an explicit stack.
"""

import numpy as np

from libc.math cimport fabs, copysign, INFINITY
from libc.stdint cimport int32_t, int64_t

IS_COMPILED = True

DEF STACK_CAP = 256
DEF HUGE = 1e300


cdef struct RayCtx:
    double ox, oy, oz
    double inv0, inv1, inv2
    int kx, ky, kz
    double sx, sy, sz


cdef inline void _setup(double ox, double oy, double oz,
                        double dx, double dy, double dz, RayCtx* c) noexcept:
    cdef double d[3]
    cdef int kz = 0, kx, ky, tmp
    d[0] = dx; d[1] = dy; d[2] = dz
    c.ox = ox; c.oy = oy; c.oz = oz
    c.inv0 = 1.0 / d[0] if fabs(d[0]) > 1e-300 else copysign(HUGE, d[0])
    c.inv1 = 1.0 / d[1] if fabs(d[1]) > 1e-300 else copysign(HUGE, d[1])
    c.inv2 = 1.0 / d[2] if fabs(d[2]) > 1e-300 else copysign(HUGE, d[2])
    if fabs(d[1]) > fabs(d[0]):
        kz = 1
    if fabs(d[2]) > fabs(d[kz]):
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        tmp = kx; kx = ky; ky = tmp
    c.kx = kx; c.ky = ky; c.kz = kz
    c.sx = d[kx] / d[kz]
    c.sy = d[ky] / d[kz]
    c.sz = 1.0 / d[kz]


cdef inline double _box_enter(const double* bmin, const double* bmax,
                              RayCtx* c, double t_min, double bound) noexcept:
    """Entry distance, or INFINITY when the box is missed / beyond bound."""
    cdef double t0, t1, lo, hi, tn, tf
    t0 = (bmin[0] - c.ox) * c.inv0
    t1 = (bmax[0] - c.ox) * c.inv0
    tn = t0 if t0 < t1 else t1
    tf = t0 if t0 > t1 else t1
    t0 = (bmin[1] - c.oy) * c.inv1
    t1 = (bmax[1] - c.oy) * c.inv1
    lo = t0 if t0 < t1 else t1
    hi = t0 if t0 > t1 else t1
    if lo > tn: tn = lo
    if hi < tf: tf = hi
    t0 = (bmin[2] - c.oz) * c.inv2
    t1 = (bmax[2] - c.oz) * c.inv2
    lo = t0 if t0 < t1 else t1
    hi = t0 if t0 > t1 else t1
    if lo > tn: tn = lo
    if hi < tf: tf = hi
    if tn <= tf and tf > t_min and tn <= bound:
        return tn
    return INFINITY


cdef inline int _tri_hit(const double* p0, const double* p1, const double* p2,
                         RayCtx* c, double t_min,
                         double* t_out, double* u_out, double* v_out) noexcept:
    cdef double a0, a1, a2, b0, b1, b2, c0, c1, c2
    cdef double az, bz, cz, ax, ay, bx, by, cx, cy
    cdef double u, v, w, det, t_num
    cdef double o[3]
    o[0] = c.ox; o[1] = c.oy; o[2] = c.oz
    a0 = p0[0] - o[0]; a1 = p0[1] - o[1]; a2 = p0[2] - o[2]
    b0 = p1[0] - o[0]; b1 = p1[1] - o[1]; b2 = p1[2] - o[2]
    c0 = p2[0] - o[0]; c1 = p2[1] - o[1]; c2 = p2[2] - o[2]
    cdef double av[3]
    cdef double bv[3]
    cdef double cv[3]
    av[0] = a0; av[1] = a1; av[2] = a2
    bv[0] = b0; bv[1] = b1; bv[2] = b2
    cv[0] = c0; cv[1] = c1; cv[2] = c2
    az = av[c.kz]; bz = bv[c.kz]; cz = cv[c.kz]
    ax = av[c.kx] - c.sx * az
    ay = av[c.ky] - c.sy * az
    bx = bv[c.kx] - c.sx * bz
    by = bv[c.ky] - c.sy * bz
    cx = cv[c.kx] - c.sx * cz
    cy = cv[c.ky] - c.sy * cz
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return 0
    det = u + v + w
    if det == 0.0:
        return 0
    t_num = u * (c.sz * az) + v * (c.sz * bz) + w * (c.sz * cz)
    t_out[0] = t_num / det
    if not t_out[0] > t_min:
        return 0
    u_out[0] = v / det
    v_out[0] = w / det
    return 1


def trace_closest(double[:, ::1] bmin, double[:, ::1] bmax,
                  int32_t[::1] right, int32_t[::1] start, int32_t[::1] count,
                  double[:, ::1] v0, double[:, ::1] v1, double[:, ::1] v2,
                  int64_t[::1] obj, int64_t[::1] prim,
                  double[:, ::1] origins, double[:, ::1] dirs,
                  double t_min, double[::1] t_max):
    cdef Py_ssize_t n = origins.shape[0]
    out_t = np.full(n, np.inf)
    out_tri = np.full(n, -1, dtype=np.int64)
    out_u = np.zeros(n)
    out_v = np.zeros(n)
    cdef double[::1] ot = out_t
    cdef int64_t[::1] otri = out_tri
    cdef double[::1] ou = out_u
    cdef double[::1] ov = out_v

    cdef RayCtx c
    cdef int32_t stack[STACK_CAP]
    cdef int sp
    cdef Py_ssize_t i
    cdef int32_t node, left_i, right_i, s
    cdef int32_t j, k
    cdef double best_t, t, u, v, enter_l, enter_r
    cdef int64_t best_tri
    cdef int overflow = 0

    for i in range(n):
        _setup(origins[i, 0], origins[i, 1], origins[i, 2],
               dirs[i, 0], dirs[i, 1], dirs[i, 2], &c)
        best_t = t_max[i]
        best_tri = -1
        sp = 0
        if _box_enter(&bmin[0, 0], &bmax[0, 0], &c, t_min, best_t) < INFINITY:
            stack[0] = 0
            sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if count[node] > 0:
                s = start[node]
                for j in range(s, s + count[node]):
                    if _tri_hit(&v0[j, 0], &v1[j, 0], &v2[j, 0], &c,
                                t_min, &t, &u, &v):
                        if t < best_t or (t == best_t and best_tri >= 0
                                          and (obj[j] < obj[best_tri]
                                               or (obj[j] == obj[best_tri]
                                                   and prim[j] < prim[best_tri]))):
                            best_t = t
                            best_tri = j
                            ou[i] = u
                            ov[i] = v
                continue
            left_i = node + 1
            right_i = right[node]
            enter_l = _box_enter(&bmin[left_i, 0], &bmax[left_i, 0], &c,
                                 t_min, best_t)
            enter_r = _box_enter(&bmin[right_i, 0], &bmax[right_i, 0], &c,
                                 t_min, best_t)
            if enter_l < INFINITY and enter_r < INFINITY:
                if sp + 2 > STACK_CAP:
                    overflow = 1
                    break
                if enter_l <= enter_r:
                    stack[sp] = right_i
                    stack[sp + 1] = left_i
                else:
                    stack[sp] = left_i
                    stack[sp + 1] = right_i
                sp += 2
            elif enter_l < INFINITY:
                stack[sp] = left_i
                sp += 1
            elif enter_r < INFINITY:
                stack[sp] = right_i
                sp += 1
        if overflow:
            raise RuntimeError("BVH traversal stack overflow")
        if best_tri >= 0:
            ot[i] = best_t
            otri[i] = best_tri
    return out_t, out_tri, out_u, out_v


def trace_any(double[:, ::1] bmin, double[:, ::1] bmax,
              int32_t[::1] right, int32_t[::1] start, int32_t[::1] count,
              double[:, ::1] v0, double[:, ::1] v1, double[:, ::1] v2,
              int64_t[::1] obj, int64_t[::1] prim,
              double[:, ::1] origins, double[:, ::1] dirs,
              double t_min, double[::1] t_max):
    cdef Py_ssize_t n = origins.shape[0]
    out = np.zeros(n, dtype=bool)
    cdef unsigned char[::1] om = out.view(np.uint8)

    cdef RayCtx c
    cdef int32_t stack[STACK_CAP]
    cdef int sp
    cdef Py_ssize_t i
    cdef int32_t node, left_i, right_i, s, j
    cdef double t, u, v, limit
    cdef int overflow = 0, found

    for i in range(n):
        _setup(origins[i, 0], origins[i, 1], origins[i, 2],
               dirs[i, 0], dirs[i, 1], dirs[i, 2], &c)
        limit = t_max[i]
        found = 0
        sp = 0
        if _box_enter(&bmin[0, 0], &bmax[0, 0], &c, t_min, limit) < INFINITY:
            stack[0] = 0
            sp = 1
        while sp > 0 and not found:
            sp -= 1
            node = stack[sp]
            if count[node] > 0:
                s = start[node]
                for j in range(s, s + count[node]):
                    if _tri_hit(&v0[j, 0], &v1[j, 0], &v2[j, 0], &c,
                                t_min, &t, &u, &v):
                        if t < limit:
                            found = 1
                            break
                continue
            left_i = node + 1
            right_i = right[node]
            if sp + 2 > STACK_CAP:
                overflow = 1
                break
            if _box_enter(&bmin[left_i, 0], &bmax[left_i, 0], &c,
                          t_min, limit) < INFINITY:
                stack[sp] = left_i
                sp += 1
            if _box_enter(&bmin[right_i, 0], &bmax[right_i, 0], &c,
                          t_min, limit) < INFINITY:
                stack[sp] = right_i
                sp += 1
        if overflow:
            raise RuntimeError("BVH traversal stack overflow")
        om[i] = found
    return out
