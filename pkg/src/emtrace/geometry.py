"""Triangle-mesh world model: BVH ray queries, occlusion, wedge extraction.

All lengths are meters, all arrays float64. Acceleration structures are
immutable after construction and safe to share across workers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EmptyScene, NoWedge

# Self-intersection offset applied to all secondary-ray queries (meters).
EPS_RAY = 1e-4
# Triangles below this area are considered degenerate (square meters).
EPS_AREA = 1e-12
# Two faces are coplanar when their unit normals differ by less than this.
EPS_COPLANAR = 1e-6

_LEAF_SIZE = 4
_SAH_BINS = 16


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(eq=False)
class Mesh:
    """One object: shared vertex table plus triangle index triples.

    Winding is right handed; the geometric normal of triangle (a, b, c) is
    normalize((b - a) x (c - a)) and points out of the material.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    object_id: int
    material_ref: str = ""

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        areas = self.triangle_areas()
        if np.any(areas <= EPS_AREA):
            bad = int(np.argmax(areas <= EPS_AREA))
            raise ValueError(f"degenerate triangle {bad} (area {areas[bad]:.3e})")

    def triangle_corners(self):
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self):
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def triangle_normals(self):
        a, b, c = self.triangle_corners()
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    max_t: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "origin",
                           np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction",
                           np.asarray(self.direction, dtype=np.float64))
        norm = np.linalg.norm(self.direction)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction norm {norm} != 1")


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray          # flipped toward the incident half-space
    object_id: int
    primitive_id: int
    bary: tuple                 # weights of vertices 1 and 2
    tri_index: int = -1         # slot in the accel's permuted triangle arrays


@dataclass(eq=False)
class Wedge:
    """Straight edge where diffraction can occur.

    The frame satisfies e_hat = n0_hat x nn_hat (normalized) for true wedges
    and t0_hat = n0_hat x e_hat, with t0_hat pointing from the edge into the
    0-face. Points on the edge are origin + x * e_hat for x in [0, length].
    The exterior region spans azimuth (0, n*pi) measured from t0_hat rotating
    about e_hat; n = 2 marks a screen (single owning face, nn_hat = -n0_hat).
    """

    origin: np.ndarray
    e_hat: np.ndarray
    length: float
    n0_hat: np.ndarray
    nn_hat: np.ndarray
    t0_hat: np.ndarray
    n: float
    face0: list = field(default_factory=list)   # (object_id, primitive_id, local_edge)
    facen: list = field(default_factory=list)   # empty for screens

    def owners(self):
        for o, m, _ in self.face0:
            yield (o, m)
        for o, m, _ in self.facen:
            yield (o, m)

    def point_at(self, x):
        return self.origin + np.multiply.outer(x, self.e_hat)


class Accel:
    """Immutable BVH over the flattened triangles of several meshes."""

    def __init__(self, meshes):
        tri_count = sum(len(m.triangles) for m in meshes)
        if tri_count == 0:
            raise EmptyScene("no triangles")
        self.meshes = list(meshes)

        v0s, v1s, v2s, objs, prims, mesh_idx = [], [], [], [], [], []
        for i, m in enumerate(self.meshes):
            a, b, c = m.triangle_corners()
            v0s.append(a)
            v1s.append(b)
            v2s.append(c)
            objs.append(np.full(len(a), m.object_id, dtype=np.int64))
            prims.append(np.arange(len(a), dtype=np.int64))
            mesh_idx.append(np.full(len(a), i, dtype=np.int64))
        v0 = np.concatenate(v0s)
        v1 = np.concatenate(v1s)
        v2 = np.concatenate(v2s)

        nodes, perm = _build_bvh(v0, v1, v2)
        self.node_bmin, self.node_bmax, self.node_right, \
            self.node_start, self.node_count = nodes
        self.perm = perm
        self.tri_v0 = np.ascontiguousarray(v0[perm])
        self.tri_v1 = np.ascontiguousarray(v1[perm])
        self.tri_v2 = np.ascontiguousarray(v2[perm])
        self.tri_object_id = np.concatenate(objs)[perm]
        self.tri_primitive_id = np.concatenate(prims)[perm]
        self.tri_mesh_index = np.concatenate(mesh_idx)[perm]
        n = np.cross(self.tri_v1 - self.tri_v0, self.tri_v2 - self.tri_v0)
        self.tri_normal = n / np.linalg.norm(n, axis=1, keepdims=True)
        self.bounds = (self.node_bmin[0].copy(), self.node_bmax[0].copy())
        self._kernel = _kernels.active()

    @property
    def num_triangles(self):
        return len(self.tri_v0)

    def _args(self):
        return (self.node_bmin, self.node_bmax, self.node_right,
                self.node_start, self.node_count,
                self.tri_v0, self.tri_v1, self.tri_v2,
                self.tri_object_id, self.tri_primitive_id)

    def trace_batch(self, origins, directions, t_min=EPS_RAY, t_max=np.inf):
        """Closest hit for each ray; returns (t, tri, u, v), tri = -1 on miss."""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        directions = np.ascontiguousarray(directions, dtype=np.float64)
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64),
                                (len(origins),)).astype(np.float64)
        return self._kernel.trace_closest(*self._args(), origins, directions,
                                          float(t_min), t_max)

    def occluded_batch(self, a, b, eps=EPS_RAY):
        """Occlusion of open segments (a, b), endpoints offset by eps."""
        a = np.ascontiguousarray(np.atleast_2d(a), dtype=np.float64)
        b = np.ascontiguousarray(np.atleast_2d(b), dtype=np.float64)
        d = b - a
        length = np.linalg.norm(d, axis=1)
        out = np.zeros(len(a), dtype=bool)
        usable = length > 2 * eps
        if np.any(usable):
            dn = d[usable] / length[usable, None]
            o = np.ascontiguousarray(a[usable] + eps * dn)
            t_max = np.ascontiguousarray(length[usable] - 2 * eps)
            out[usable] = self._kernel.trace_any(
                *self._args(), o, np.ascontiguousarray(dn), 0.0, t_max)
        return out


def build_scene_accel(meshes):
    """Build the shared BVH for a list of meshes. Raises EmptyScene if empty."""
    return Accel(meshes)


def intersect_closest(accel, ray):
    """Closest hit along the ray with t in (EPS_RAY, ray.max_t), or None.

    The reported normal faces the incident half-space. Ties in t go to the
    smaller (object_id, primitive_id).
    """
    t, tri, u, v = accel.trace_batch(ray.origin[None, :], ray.direction[None, :],
                                     EPS_RAY, ray.max_t)
    if tri[0] < 0:
        return None
    return hit_from_trace(accel, ray.origin, ray.direction,
                          float(t[0]), int(tri[0]), float(u[0]), float(v[0]))


def hit_from_trace(accel, origin, direction, t, tri, u, v):
    point = origin + t * direction
    normal = accel.tri_normal[tri]
    if float(normal @ direction) > 0.0:
        normal = -normal
    return Hit(t=t, point=point, normal=normal,
               object_id=int(accel.tri_object_id[tri]),
               primitive_id=int(accel.tri_primitive_id[tri]),
               bary=(u, v), tri_index=tri)


def is_occluded(accel, a, b):
    """True iff geometry blocks the open segment between a and b."""
    return bool(accel.occluded_batch(np.asarray(a)[None, :],
                                     np.asarray(b)[None, :])[0])


# ---------------------------------------------------------------------------
# BVH construction (binned surface-area heuristic)
# ---------------------------------------------------------------------------

def _build_bvh(v0, v1, v2):
    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    centroid = (lo + hi) * 0.5
    order = np.arange(len(v0))

    bmin_l, bmax_l, right_l, start_l, count_l = [], [], [], [], []

    def new_node(b_lo, b_hi):
        pad = 1e-12 * (1.0 + np.abs(b_lo))
        bmin_l.append(b_lo - pad)
        pad = 1e-12 * (1.0 + np.abs(b_hi))
        bmax_l.append(b_hi + pad)
        right_l.append(-1)
        start_l.append(-1)
        count_l.append(0)
        return len(bmin_l) - 1

    def half_area(b_lo, b_hi):
        e = np.maximum(b_hi - b_lo, 0.0)
        return e[0] * e[1] + e[1] * e[2] + e[2] * e[0]

    out_perm = np.empty(len(v0), dtype=np.int64)
    out_pos = 0

    def build(idx):
        nonlocal out_pos
        b_lo = lo[idx].min(axis=0)
        b_hi = hi[idx].max(axis=0)
        me = new_node(b_lo, b_hi)
        if len(idx) <= _LEAF_SIZE:
            start_l[me] = out_pos
            count_l[me] = len(idx)
            out_perm[out_pos:out_pos + len(idx)] = idx
            out_pos += len(idx)
            return me

        c = centroid[idx]
        c_lo = c.min(axis=0)
        c_hi = c.max(axis=0)
        axis = int(np.argmax(c_hi - c_lo))
        extent = c_hi[axis] - c_lo[axis]
        split = None
        if extent > 0.0:
            bins = np.minimum((_SAH_BINS * (c[:, axis] - c_lo[axis])
                               / extent).astype(np.int64), _SAH_BINS - 1)
            counts = np.bincount(bins, minlength=_SAH_BINS)
            cost_best = np.inf
            plane_best = -1
            # prefix/suffix bounds over bins
            pref_lo = np.full((_SAH_BINS, 3), np.inf)
            pref_hi = np.full((_SAH_BINS, 3), -np.inf)
            suf_lo = np.full((_SAH_BINS, 3), np.inf)
            suf_hi = np.full((_SAH_BINS, 3), -np.inf)
            for b in range(_SAH_BINS):
                sel = bins == b
                if np.any(sel):
                    pref_lo[b] = lo[idx][sel].min(axis=0)
                    pref_hi[b] = hi[idx][sel].max(axis=0)
            suf_lo[-1] = pref_lo[-1]
            suf_hi[-1] = pref_hi[-1]
            for b in range(_SAH_BINS - 2, -1, -1):
                suf_lo[b] = np.minimum(pref_lo[b], suf_lo[b + 1])
                suf_hi[b] = np.maximum(pref_hi[b], suf_hi[b + 1])
            run_lo = np.full(3, np.inf)
            run_hi = np.full(3, -np.inf)
            n_left = 0
            for b in range(_SAH_BINS - 1):
                run_lo = np.minimum(run_lo, pref_lo[b])
                run_hi = np.maximum(run_hi, pref_hi[b])
                n_left += counts[b]
                n_right = len(idx) - n_left
                if n_left == 0 or n_right == 0:
                    continue
                cost = (n_left * half_area(run_lo, run_hi)
                        + n_right * half_area(suf_lo[b + 1], suf_hi[b + 1]))
                if cost < cost_best:
                    cost_best = cost
                    plane_best = b
            if plane_best >= 0:
                left_sel = bins <= plane_best
                split = (idx[left_sel], idx[~left_sel])
        if split is None:
            # centroids piled up: split by median position in the axis order
            half = len(idx) // 2
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            split = (srt[:half], srt[half:])

        build(split[0])
        right_l[me] = build(split[1])
        return me

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(order)
    finally:
        sys.setrecursionlimit(old_limit)

    nodes = (np.ascontiguousarray(bmin_l, dtype=np.float64),
             np.ascontiguousarray(bmax_l, dtype=np.float64),
             np.asarray(right_l, dtype=np.int32),
             np.asarray(start_l, dtype=np.int32),
             np.asarray(count_l, dtype=np.int32))
    return nodes, out_perm


# ---------------------------------------------------------------------------
# Wedge extraction
# ---------------------------------------------------------------------------

def _quantize(p, res=1e-9):
    return tuple(int(round(c / res)) for c in p)


def _plane_key(normal, point, res=1e-6):
    n = np.asarray(normal, dtype=np.float64)
    # canonical sign: first nonzero component positive
    for c in n:
        if abs(c) > 1e-12:
            if c < 0.0:
                n = -n
            break
    d = float(n @ point)
    return _quantize(n, res) + (int(round(d / res)),)


def _edge_records(meshes):
    """Map each undirected edge to the primitives that contain it."""
    edges = {}
    for mesh in meshes:
        verts = mesh.vertices
        normals = mesh.triangle_normals()
        for prim, tri in enumerate(mesh.triangles):
            for local in range(3):
                pa = verts[tri[local]]
                pb = verts[tri[(local + 1) % 3]]
                ka, kb = _quantize(pa), _quantize(pb)
                if ka == kb:
                    continue
                key = (ka, kb) if ka < kb else (kb, ka)
                edges.setdefault(key, []).append(
                    (mesh.object_id, prim, local, pa, pb, normals[prim],
                     verts[tri[(local + 2) % 3]]))
        del normals
    return edges


def _in_face_tangent(e_hat, p_edge, p_far):
    u = p_far - p_edge
    u = u - (u @ e_hat) * e_hat
    n = np.linalg.norm(u)
    return u / n if n > 0 else u


def extract_wedges(meshes, dihedral_threshold_deg=1.0):
    """Find all diffracting edges of the scene.

    An edge shared by two faces becomes a wedge when the faces are
    non-coplanar beyond the threshold and the material side is convex
    (exterior angle n*pi with n in (1, 2)); reflex edges are skipped.
    Boundary edges owned by a single face become screens (n = 2).
    Collinear segments with the same face planes are merged into one wedge.
    Edges shared by more than two faces are ignored.
    """
    thresh = np.deg2rad(dihedral_threshold_deg)
    segments = []  # (line_key, plane_pair, p_start, p_end, frame, owners0, ownersn)

    for key, owners in _edge_records(meshes).items():
        if len(owners) > 2:
            continue
        if len(owners) == 1:
            o, m, local, pa, pb, n_hat, _far = owners[0]
            e_hat = _unit(pb - pa)       # winding order: n0 x e points into the face
            frame = (e_hat, n_hat, -n_hat, np.cross(n_hat, e_hat), 2.0)
            plane = _plane_key(n_hat, pa)
            segments.append((_line_key(e_hat, pa), (plane, plane), pa, pb,
                             frame, [(o, m, local)], []))
            continue

        fa, fb = sorted(owners[:2], key=lambda f: (f[0], f[1]))
        oa, ma, la, pa, pb, na, far_a = fa
        ob, mb, lb, _, _, nb, far_b = fb
        cross_n = np.cross(na, nb)
        s = np.linalg.norm(cross_n)
        cosang = float(np.clip(na @ nb, -1.0, 1.0))
        if np.arccos(cosang) <= thresh or s < 1e-12:
            continue
        e_geo = _unit(pb - pa)
        ua = _in_face_tangent(e_geo, pa, far_a)
        ub = _in_face_tangent(e_geo, pa, far_b)
        if float(ub @ na) > 0.0:
            continue                     # reflex material edge: no diffraction
        theta = np.arccos(float(np.clip(ua @ ub, -1.0, 1.0)))
        n_open = 2.0 - theta / np.pi
        c_hat = cross_n / s
        if float(c_hat @ e_geo) >= 0.0:
            e_hat, n0, nn = c_hat, na, nb
            owners0, ownersn = [(oa, ma, la)], [(ob, mb, lb)]
        else:
            e_hat, n0, nn = -c_hat, nb, na
            owners0, ownersn = [(ob, mb, lb)], [(oa, ma, la)]
        frame = (e_hat, n0, nn, np.cross(n0, e_hat), n_open)
        planes = (_plane_key(n0, pa), _plane_key(nn, pa))
        segments.append((_line_key(e_hat, pa), planes, pa, pb,
                         frame, owners0, ownersn))

    return _merge_segments(segments)


def _line_key(direction, point, res=1e-6):
    d = np.asarray(direction, dtype=np.float64)
    for c in d:
        if abs(c) > 1e-12:
            if c < 0.0:
                d = -d
            break
    anchor = point - (point @ d) * d
    return _quantize(d, res) + _quantize(anchor, res)


def _merge_segments(segments):
    groups = {}
    for seg in segments:
        line_key, planes, *_ = seg
        gkey = (line_key, tuple(sorted(planes)))
        groups.setdefault(gkey, []).append(seg)

    wedges = []
    for group in groups.values():
        group.sort(key=lambda s: (s[5] + s[6])[0][:2])
        _, planes_ref, p_ref, _, frame, _, _ = group[0]
        e_hat, n0, nn, t0, n_open = frame
        lo_x, hi_x = np.inf, -np.inf
        face0, facen = [], []
        for _, planes, p1, p2, _, own0, ownn in group:
            flip = planes != planes_ref and planes[::-1] == planes_ref \
                and planes[0] != planes[1]
            face0.extend(ownn if flip else own0)
            facen.extend(own0 if flip else ownn)
            for p in (p1, p2):
                x = float((p - p_ref) @ e_hat)
                lo_x = min(lo_x, x)
                hi_x = max(hi_x, x)
        wedges.append(Wedge(origin=p_ref + lo_x * e_hat, e_hat=e_hat,
                            length=hi_x - lo_x, n0_hat=n0, nn_hat=nn,
                            t0_hat=t0, n=n_open,
                            face0=sorted(set(face0)), facen=sorted(set(facen))))
    wedges.sort(key=lambda w: (w.face0 + w.facen)[0])
    return wedges


def project_to_edge(hit, wedge_candidates):
    """Nearest owned wedge of the hit primitive plus the clamped edge offset.

    Raises NoWedge when no candidate wedge is owned by the hit primitive.
    """
    key = (hit.object_id, hit.primitive_id)
    best = None
    for w in wedge_candidates:
        if key not in set(w.owners()):
            continue
        x = float(np.clip((hit.point - w.origin) @ w.e_hat, 0.0, w.length))
        d = float(np.linalg.norm(hit.point - (w.origin + x * w.e_hat)))
        if best is None or d < best[0]:
            best = (d, w, x)
    if best is None:
        raise NoWedge(f"primitive {key} owns no wedge")
    return best[1], best[2]
