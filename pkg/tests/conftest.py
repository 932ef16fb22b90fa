"""Shared mesh factories and fixtures."""

import numpy as np
import pytest

from emtrace.geometry import Mesh

# Outward-wound unit cube faces for vertex order
# (lo), (hi_x), (hi_xy), (hi_y), then the same four lifted to hi_z.
_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],      # floor  (normal -z)
    [4, 5, 6], [4, 6, 7],      # top    (normal +z)
    [0, 1, 5], [0, 5, 4],      # front  (normal -y)
    [2, 3, 7], [2, 7, 6],      # back   (normal +y)
    [1, 2, 6], [1, 6, 5],      # right  (normal +x)
    [3, 0, 4], [3, 4, 7],      # left   (normal -x)
], dtype=np.int64)


def box_mesh(lo, hi, object_id=0, inward=False, material_ref=""):
    """Axis-aligned box; inward=True flips winding so normals face inside."""
    l = np.asarray(lo, dtype=np.float64)
    h = np.asarray(hi, dtype=np.float64)
    v = np.array([
        [l[0], l[1], l[2]], [h[0], l[1], l[2]],
        [h[0], h[1], l[2]], [l[0], h[1], l[2]],
        [l[0], l[1], h[2]], [h[0], l[1], h[2]],
        [h[0], h[1], h[2]], [l[0], h[1], h[2]],
    ])
    f = _BOX_FACES[:, ::-1] if inward else _BOX_FACES
    return Mesh(v, f.copy(), object_id=object_id, material_ref=material_ref)


def quad_mesh(half=1.0, z=0.0, object_id=0, material_ref=""):
    """Square in the z-plane, normal +z, split along one diagonal."""
    v = np.array([[-half, -half, z], [half, -half, z],
                  [half, half, z], [-half, half, z]])
    f = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return Mesh(v, f, object_id=object_id, material_ref=material_ref)


def random_soup(rng, count, span=1.0, object_id=0, min_area=1e-6):
    """Triangle soup with rejection of tiny slivers."""
    tris = []
    while len(tris) < count:
        pts = rng.uniform(-span, span, size=(count, 3, 3))
        size = rng.uniform(0.01, 0.2, size=(count, 1, 1))
        pts = pts[:, :1, :] + (pts - pts[:, :1, :]) * size
        area = 0.5 * np.linalg.norm(
            np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)
        for p in pts[area > min_area]:
            tris.append(p)
            if len(tris) == count:
                break
    tris = np.asarray(tris)
    verts = tris.reshape(-1, 3)
    idx = np.arange(len(verts), dtype=np.int64).reshape(-1, 3)
    return Mesh(verts, idx, object_id=object_id)


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
