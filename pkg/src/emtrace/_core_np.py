"""Vectorized numpy ray-casting kernels.

Fallback implementation with the same interface as the compiled module
`emtrace._core`. Rays are traversed in bulk: each BVH node is processed once
for the whole subset of rays that reach it (stream traversal), and leaf
triangles are tested with a watertight shear-based intersection test.

Both implementations evaluate the same arithmetic expressions in the same
order so that results agree to the last bit on the same inputs.
"""

import numpy as np

IS_COMPILED = False

_HUGE = 1e300


def prepare_rays(origins, directions):
    """Per-ray constants: safe inverse direction and shear transform.

    The shear maps the dominant direction axis to z so the triangle test
    degrades gracefully for any orientation. Returns (inv_d, kx, ky, kz,
    sx, sy, sz).
    """
    d = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore"):
        inv_d = np.where(np.abs(d) > 1e-300, 1.0 / np.where(d == 0.0, 1.0, d),
                         np.copysign(_HUGE, d))
    kz = np.argmax(np.abs(d), axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    # keep winding: swap x/y when the dominant component is negative
    rows = np.arange(len(d))
    neg = d[rows, kz] < 0.0
    kx2 = np.where(neg, ky, kx)
    ky2 = np.where(neg, kx, ky)
    dz = d[rows, kz]
    sx = d[rows, kx2] / dz
    sy = d[rows, ky2] / dz
    sz = 1.0 / dz
    return inv_d, kx2, ky2, kz, sx, sy, sz


def _leaf_test(j, sel, origins, kx, ky, kz, sx, sy, sz, v0, v1, v2, t_min):
    """Watertight test of triangle j against the ray subset sel.

    Returns (valid, t, u, v) over the subset.
    """
    o = origins[sel]
    rows = np.arange(sel.size)
    kxs, kys, kzs = kx[sel], ky[sel], kz[sel]
    sxs, sys_, szs = sx[sel], sy[sel], sz[sel]

    a = v0[j] - o
    b = v1[j] - o
    c = v2[j] - o
    az = a[rows, kzs]
    bz = b[rows, kzs]
    cz = c[rows, kzs]
    ax = a[rows, kxs] - sxs * az
    ay = a[rows, kys] - sys_ * az
    bx = b[rows, kxs] - sxs * bz
    by = b[rows, kys] - sys_ * bz
    cx = c[rows, kxs] - sxs * cz
    cy = c[rows, kys] - sys_ * cz

    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    same_sign = ~(((u < 0.0) | (v < 0.0) | (w < 0.0))
                  & ((u > 0.0) | (v > 0.0) | (w > 0.0)))
    det = u + v + w
    ok = same_sign & (det != 0.0)
    t_num = u * (szs * az) + v * (szs * bz) + w * (szs * cz)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok, t_num / det, np.inf)
        bu = np.where(ok, v / det, 0.0)
        bv = np.where(ok, w / det, 0.0)
    ok &= t > t_min
    return ok, t, bu, bv


def _node_enter(node, sel, origins, inv_d, bmin, bmax, t_min, bound):
    o = origins[sel]
    inv = inv_d[sel]
    t0 = (bmin[node] - o) * inv
    t1 = (bmax[node] - o) * inv
    tn = np.minimum(t0, t1).max(axis=1)
    tf = np.maximum(t0, t1).min(axis=1)
    return (tn <= tf) & (tf > t_min) & (tn <= bound[sel])


def trace_closest(bmin, bmax, right, start, count, v0, v1, v2, obj, prim,
                  origins, directions, t_min, t_max):
    """Closest hit per ray.

    Returns (t, tri, u, v); tri is the index into the permuted triangle
    arrays, -1 for a miss (t = inf there). Ties in t go to the triangle
    with the smaller (obj, prim) pair.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    n = len(origins)
    inv_d, kx, ky, kz, sx, sy, sz = prepare_rays(origins, directions)
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))

    best_t = t_max.astype(np.float64).copy()
    best_tri = np.full(n, -1, dtype=np.int64)
    out_u = np.zeros(n)
    out_v = np.zeros(n)

    stack = [(0, np.arange(n))]
    while stack:
        node, sel = stack.pop()
        keep = _node_enter(node, sel, origins, inv_d, bmin, bmax, t_min, best_t)
        sel = sel[keep]
        if sel.size == 0:
            continue
        c = count[node]
        if c == 0:
            stack.append((int(right[node]), sel))
            stack.append((node + 1, sel))
            continue
        s = start[node]
        for j in range(s, s + c):
            ok, t, bu, bv = _leaf_test(j, sel, origins, kx, ky, kz,
                                       sx, sy, sz, v0, v1, v2, t_min)
            cur = best_tri[sel]
            closer = t < best_t[sel]
            tie = (t == best_t[sel]) & (cur >= 0) & (
                (obj[j] < obj[cur])
                | ((obj[j] == obj[cur]) & (prim[j] < prim[cur])))
            acc = ok & (closer | tie)
            if np.any(acc):
                tgt = sel[acc]
                best_t[tgt] = t[acc]
                best_tri[tgt] = j
                out_u[tgt] = bu[acc]
                out_v[tgt] = bv[acc]

    out_t = np.where(best_tri >= 0, best_t, np.inf)
    return out_t, best_tri, out_u, out_v


def trace_any(bmin, bmax, right, start, count, v0, v1, v2, obj, prim,
              origins, directions, t_min, t_max):
    """True per ray iff any triangle intersects in (t_min, t_max)."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    n = len(origins)
    inv_d, kx, ky, kz, sx, sy, sz = prepare_rays(origins, directions)
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,))

    hit = np.zeros(n, dtype=bool)
    bound = t_max.astype(np.float64).copy()

    stack = [(0, np.arange(n))]
    while stack:
        node, sel = stack.pop()
        sel = sel[~hit[sel]]
        if sel.size == 0:
            continue
        keep = _node_enter(node, sel, origins, inv_d, bmin, bmax, t_min, bound)
        sel = sel[keep]
        if sel.size == 0:
            continue
        c = count[node]
        if c == 0:
            stack.append((int(right[node]), sel))
            stack.append((node + 1, sel))
            continue
        s = start[node]
        for j in range(s, s + c):
            ok, t, _, _ = _leaf_test(j, sel, origins, kx, ky, kz,
                                     sx, sy, sz, v0, v1, v2, t_min)
            ok &= t < t_max[sel]
            if np.any(ok):
                hit[sel[ok]] = True
    return hit
