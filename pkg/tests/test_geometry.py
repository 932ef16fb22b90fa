"""Geometry module: BVH queries against the exhaustive-scan oracle, wedges."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emtrace.errors import EmptyScene, NoWedge
from emtrace.geometry import (EPS_RAY, Hit, Mesh, Ray, build_scene_accel,
                              extract_wedges, intersect_closest, is_occluded,
                              project_to_edge)

from conftest import box_mesh, quad_mesh, random_soup
import oracles


def test_mesh_rejects_degenerate_triangle():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    with pytest.raises(ValueError):
        Mesh(v, np.array([[0, 1, 2]]), object_id=0)


def test_mesh_rejects_bad_index():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    with pytest.raises(ValueError):
        Mesh(v, np.array([[0, 1, 3]]), object_id=0)


def test_ray_requires_unit_direction():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))


def test_empty_scene_raises():
    with pytest.raises(EmptyScene):
        build_scene_accel([])


def test_single_triangle_accel_bbox():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    acc = build_scene_accel([Mesh(v, np.array([[0, 1, 2]]), object_id=0)])
    assert acc.num_triangles == 1
    lo, hi = acc.bounds
    assert np.allclose(lo, [0, 0, 0], atol=1e-9)
    assert np.allclose(hi, [1, 1, 0], atol=1e-9)


def test_two_disjoint_boxes_nearer_first():
    near = box_mesh([0, 0, 0], [1, 1, 1], object_id=0)
    far = box_mesh([3, 0, 0], [4, 1, 1], object_id=1)
    acc = build_scene_accel([near, far])
    assert acc.num_triangles == 24
    h = intersect_closest(acc, Ray(np.array([-2.0, 0.5, 0.5]),
                                   np.array([1.0, 0.0, 0.0])))
    assert h.object_id == 0
    assert h.t == pytest.approx(2.0, abs=1e-12)


def test_ground_plane_hit_and_cap():
    acc = build_scene_accel([quad_mesh()])
    ray = Ray(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]))
    h = intersect_closest(acc, ray)
    assert h.t == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(h.point, [0, 0, 0], atol=1e-12)
    assert np.allclose(h.normal, [0, 0, 1])
    assert intersect_closest(
        acc, Ray(ray.origin, ray.direction, max_t=0.5)) is None


def test_tie_breaks_to_lower_primitive():
    # the shared diagonal of the quad belongs to both triangles
    acc = build_scene_accel([quad_mesh()])
    h = intersect_closest(acc, Ray(np.array([0.5, 0.5, 2.0]),
                                   np.array([0.0, 0.0, -1.0])))
    assert (h.object_id, h.primitive_id) == (0, 0)


def test_normal_faces_incident_side():
    acc = build_scene_accel([quad_mesh()])
    below = intersect_closest(acc, Ray(np.array([0.2, 0.1, -1.0]),
                                       np.array([0.0, 0.0, 1.0])))
    assert np.allclose(below.normal, [0, 0, -1])


def test_oracle_equivalence_random_scene(rng):
    meshes = [random_soup(rng, 50, object_id=i) for i in range(4)]
    acc = build_scene_accel(meshes)
    n = 1000
    origins = rng.normal(size=(n, 3)) * 2.0
    directions = rng.uniform(-1.0, 1.0, size=(n, 3)) - origins
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    t, tri, _, _ = acc.trace_batch(origins, directions)
    ot, oobj, oprim, _, _ = oracles.linear_scan_closest(meshes, origins,
                                                        directions)
    hit = tri >= 0
    assert np.array_equal(hit, np.isfinite(ot))
    assert np.array_equal(acc.tri_object_id[tri[hit]], oobj[hit])
    assert np.array_equal(acc.tri_primitive_id[tri[hit]], oprim[hit])
    assert np.allclose(t[hit], ot[hit], rtol=1e-9, atol=0.0)
    assert hit.sum() > 100  # the scene is dense enough to be a real test


def test_large_soup_every_triangle_reachable(rng):
    mesh = random_soup(rng, 100_000, span=5.0)
    acc = build_scene_accel([mesh])
    a, b, c = mesh.triangle_corners()
    centroids = (a + b + c) / 3.0
    normals = mesh.triangle_normals()
    delta = 5e-4
    origins = centroids + delta * normals
    t, tri, _, _ = acc.trace_batch(origins, -normals)
    assert np.all(tri >= 0)
    assert np.all(t <= delta + 1e-9)
    # full linear-scan agreement on a subsample
    sub = rng.choice(len(origins), size=500, replace=False)
    ot, oobj, oprim, _, _ = oracles.linear_scan_closest(
        [mesh], origins[sub], -normals[sub])
    assert np.array_equal(acc.tri_primitive_id[tri[sub]], oprim)
    assert np.allclose(t[sub], ot, rtol=1e-9)


def test_occlusion_examples():
    empty_far = build_scene_accel([quad_mesh(half=0.5, z=-10.0)])
    assert not is_occluded(empty_far, np.array([0, 0, 1.0]),
                           np.array([0, 0, 2.0]))
    ground = build_scene_accel([quad_mesh()])
    assert is_occluded(ground, np.array([0, 0, -1.0]), np.array([0, 0, 1.0]))
    # endpoint on the surface: offset excludes the surface itself
    assert not is_occluded(ground, np.array([0.1, 0.1, 0.0]),
                           np.array([0, 0, 1.0]))


def test_occlusion_symmetry(rng):
    meshes = [random_soup(rng, 100)]
    acc = build_scene_accel(meshes)
    a = rng.uniform(-1.5, 1.5, size=(200, 3))
    b = rng.uniform(-1.5, 1.5, size=(200, 3))
    fwd = acc.occluded_batch(a, b)
    rev = acc.occluded_batch(b, a)
    assert np.array_equal(fwd, rev)
    want = oracles.linear_scan_occluded(meshes, a, b)
    assert np.array_equal(fwd, want)


@settings(max_examples=50, deadline=None)
@given(px=st.floats(-0.9, 0.9), py=st.floats(-0.9, 0.9),
       tilt=st.floats(-0.45, 0.45))
def test_hit_point_consistency(px, py, tilt):
    acc = build_scene_accel([quad_mesh()])
    d = np.array([tilt, tilt / 2, -1.0])
    d /= np.linalg.norm(d)
    h = intersect_closest(acc, Ray(np.array([px, py, 1.0]), d))
    if h is None:
        return
    assert float(h.normal @ d) <= 0.0
    assert np.linalg.norm(h.point - (np.array([px, py, 1.0]) + h.t * d)) \
        <= 1e-6 * max(h.t, 1.0)


# ---------------------------------------------------------------------------
# Wedges
# ---------------------------------------------------------------------------

def test_flat_quad_yields_boundary_screens():
    ws = extract_wedges([quad_mesh()])
    assert len(ws) == 4
    assert all(w.n == 2.0 for w in ws)
    assert all(not w.facen for w in ws)
    for w in ws:
        assert np.allclose(w.t0_hat, np.cross(w.n0_hat, w.e_hat), atol=1e-9)
        # t0 points from the boundary into the face, i.e. toward the center
        mid = w.origin + 0.5 * w.length * w.e_hat
        assert float(w.t0_hat @ (np.zeros(3) - mid)) > 0.0


def test_box_has_twelve_right_angle_wedges():
    ws = extract_wedges([box_mesh([0, 0, 0], [1, 1, 1])])
    assert len(ws) == 12
    assert all(abs(w.n - 1.5) < 1e-12 for w in ws)
    assert sum(w.length for w in ws) == pytest.approx(12.0, abs=1e-9)
    for w in ws:
        cr = np.cross(w.n0_hat, w.nn_hat)
        assert np.allclose(w.e_hat, cr / np.linalg.norm(cr), atol=1e-9)
        assert np.allclose(w.t0_hat, np.cross(w.n0_hat, w.e_hat), atol=1e-9)


def test_inward_room_has_no_wedges():
    ws = extract_wedges([box_mesh([0, 0, 0], [2, 2, 2], inward=True)])
    assert ws == []


def test_threshold_suppresses_near_coplanar():
    # two triangles folded by 0.01 degrees across the shared edge
    ang = np.deg2rad(180.0 - 0.01)
    v = np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0],
                  [np.cos(ang), 0, np.sin(ang)]])
    m = Mesh(v, np.array([[0, 2, 1], [0, 1, 3]]), object_id=0)
    interior = [w for w in extract_wedges([m], dihedral_threshold_deg=1.0)
                if w.facen]
    assert interior == []


def test_collinear_segments_merge():
    # 2 x 1 rectangle built from two unit quads: long sides are two
    # collinear segments each and must merge into single wedges
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0],
                  [0, 1, 0], [1, 1, 0], [2, 1, 0]], dtype=float)
    f = np.array([[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4]])
    ws = extract_wedges([Mesh(v, f, object_id=0)])
    lengths = sorted(round(w.length, 9) for w in ws)
    assert lengths == [1.0, 1.0, 2.0, 2.0]
    long_sides = [w for w in ws if w.length > 1.5]
    assert all(len(w.face0) == 2 for w in long_sides)


def test_project_to_edge_selects_nearest_owned():
    mesh = quad_mesh()
    acc = build_scene_accel([mesh])
    ws = extract_wedges([mesh])
    h = intersect_closest(acc, Ray(np.array([0.3, -0.6, 1.0]),
                                   np.array([0.0, 0.0, -1.0])))
    w, x = project_to_edge(h, ws)
    # nearest boundary of triangle 0 from (0.3, -0.6) is the y = -1 side
    mid = w.origin + 0.5 * w.length * w.e_hat
    assert mid[1] == pytest.approx(-1.0)
    point = w.origin + x * w.e_hat
    assert point[0] == pytest.approx(0.3, abs=1e-12)
    assert 0.0 <= x <= w.length


def test_project_to_edge_clamps():
    mesh = quad_mesh()
    ws = extract_wedges([mesh])
    bottom = [w for w in ws
              if abs((w.origin + 0.5 * w.length * w.e_hat)[1] + 1.0) < 1e-9]
    h = Hit(t=1.0, point=np.array([5.0, -1.0, 0.0]), normal=np.array([0, 0, 1.0]),
            object_id=bottom[0].face0[0][0], primitive_id=bottom[0].face0[0][1],
            bary=(0.0, 0.0))
    w, x = project_to_edge(h, bottom)
    assert x in (0.0, w.length)
    end = w.origin + x * w.e_hat
    assert abs(end[0]) == pytest.approx(1.0)


def test_project_to_edge_rejects_unowned():
    ws = extract_wedges([quad_mesh()])
    h = Hit(t=1.0, point=np.zeros(3), normal=np.array([0, 0, 1.0]),
            object_id=99, primitive_id=7, bary=(0.0, 0.0))
    with pytest.raises(NoWedge):
        project_to_edge(h, ws)
