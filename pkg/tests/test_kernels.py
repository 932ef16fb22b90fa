"""Compiled and numpy kernels must agree on identical inputs."""

import numpy as np
import pytest

from emtrace import _kernels
from emtrace.geometry import build_scene_accel

from conftest import box_mesh, random_soup

pytestmark = pytest.mark.skipif(
    "compiled" not in _kernels.available_backends(),
    reason="compiled kernels not built")


def _rays(rng, n):
    o = rng.normal(size=(n, 3)) * 3.0
    d = rng.uniform(-1, 1, size=(n, 3)) - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.ascontiguousarray(o), np.ascontiguousarray(d)


@pytest.mark.parametrize("scene", ["box", "soup"])
def test_closest_bitwise_identical(rng, scene):
    if scene == "box":
        meshes = [box_mesh([-1, -1, -1], [1, 1, 1])]
    else:
        meshes = [random_soup(rng, 500, span=2.0)]
    acc = build_scene_accel(meshes)
    o, d = _rays(rng, 2000)
    t_max = np.full(len(o), np.inf)
    args = acc._args() + (o, d, 1e-4, t_max)
    backends = _kernels.available_backends()
    t_c, tri_c, u_c, v_c = backends["compiled"].trace_closest(*args)
    t_n, tri_n, u_n, v_n = backends["numpy"].trace_closest(*args)
    assert np.array_equal(tri_c, tri_n)
    assert np.array_equal(t_c, t_n)
    assert np.array_equal(u_c, u_n)
    assert np.array_equal(v_c, v_n)


def test_any_hit_identical(rng):
    acc = build_scene_accel([random_soup(rng, 300, span=2.0)])
    o, d = _rays(rng, 2000)
    t_max = rng.uniform(0.5, 6.0, size=len(o))
    args = acc._args() + (o, d, 1e-4, t_max)
    backends = _kernels.available_backends()
    got_c = backends["compiled"].trace_any(*args)
    got_n = backends["numpy"].trace_any(*args)
    assert np.array_equal(got_c, got_n)
