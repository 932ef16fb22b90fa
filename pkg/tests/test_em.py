"""Frames, rotations, patterns, and array responses."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from emtrace.em import (AntennaPattern, ArrayGeometry, JonesField,
                        array_response, field_basis_change, make_pattern,
                        pattern_normalization, pattern_to_gcs,
                        rodrigues_rotation, rotation_ypr, spherical_basis)


def test_spherical_basis_x_axis():
    r, th, ph = spherical_basis(np.pi / 2, 0.0)
    assert np.allclose(r, [1, 0, 0], atol=1e-15)
    assert np.allclose(th, [0, 0, -1], atol=1e-15)
    assert np.allclose(ph, [0, 1, 0], atol=1e-15)


def test_spherical_basis_pole():
    r, _, _ = spherical_basis(0.0, 1.234)
    assert np.allclose(r, [0, 0, 1], atol=1e-15)


def test_spherical_basis_orthonormal(rng):
    theta = rng.uniform(0, np.pi, 10_000)
    phi = rng.uniform(-np.pi, np.pi, 10_000)
    r, th, ph = spherical_basis(theta, phi)
    for a in (r, th, ph):
        assert np.max(np.abs(np.linalg.norm(a, axis=-1) - 1.0)) < 1e-12
    assert np.max(np.abs(np.sum(r * th, axis=-1))) < 1e-12
    assert np.max(np.abs(np.sum(r * ph, axis=-1))) < 1e-12
    assert np.max(np.abs(np.sum(th * ph, axis=-1))) < 1e-12
    # right-handedness: r = theta_hat x phi_hat
    assert np.max(np.abs(np.cross(th, ph) - r)) < 1e-12


def test_rotation_ypr_basics():
    assert np.allclose(rotation_ypr(0, 0, 0), np.eye(3), atol=1e-15)
    assert np.allclose(rotation_ypr(np.pi / 2, 0, 0) @ [1, 0, 0], [0, 1, 0],
                       atol=1e-12)


def test_rotation_ypr_matches_scipy(rng):
    for _ in range(50):
        a, b, g = rng.uniform(-np.pi, np.pi, 3)
        mine = rotation_ypr(a, b, g)
        ref = ScipyRotation.from_euler("ZYX", [a, b, g]).as_matrix()
        assert np.allclose(mine, ref, atol=1e-12)
        assert np.allclose(mine.T @ mine, np.eye(3), atol=1e-12)
        assert np.linalg.det(mine) == pytest.approx(1.0, abs=1e-12)


def test_rodrigues_identity_and_quarter_turn():
    a = np.array([1.0, 0, 0])
    assert np.allclose(rodrigues_rotation(a, a), np.eye(3), atol=1e-15)
    r = rodrigues_rotation(a, np.array([0.0, 1, 0]))
    assert np.allclose(r, rotation_ypr(np.pi / 2, 0, 0), atol=1e-12)


def test_rodrigues_random_pairs(rng):
    for _ in range(100):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        r = rodrigues_rotation(a, b)
        assert np.allclose(r @ a, b, atol=1e-9)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_rodrigues_antiparallel():
    a = np.array([0.0, 0.0, 1.0])
    r = rodrigues_rotation(a, -a)
    assert np.allclose(r @ a, -a, atol=1e-12)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_field_basis_change_identity_and_rotation(rng):
    k = np.array([0.0, 0.0, 1.0])
    a = np.array([1.0, 0.0, 0.0])
    b = np.cross(k, a)
    assert np.allclose(field_basis_change(a, b, a, b), np.eye(2), atol=1e-15)
    psi = 0.7
    q = np.cos(psi) * a + np.sin(psi) * b
    r = -np.sin(psi) * a + np.cos(psi) * b
    w = field_basis_change(a, b, q, r)
    expect = np.array([[np.cos(psi), -np.sin(psi)],
                       [np.sin(psi), np.cos(psi)]])
    assert np.allclose(w, expect, atol=1e-12)
    for _ in range(20):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        assert np.linalg.norm(w @ v) == pytest.approx(np.linalg.norm(v),
                                                      rel=1e-12)


def test_jones_field_validates_frame():
    with pytest.raises(ValueError):
        JonesField(1.0, 0.0, (np.array([1.0, 0, 0]), np.array([1.0, 0, 0]),
                              np.array([0.0, 0, 1])))


def test_isotropic_gain_everywhere(rng):
    pat = make_pattern("isotropic", orientation=(0.4, -0.2, 1.1))
    for _ in range(20):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        f = pattern_to_gcs(pat, d)
        assert f.norm() == pytest.approx(1.0, abs=1e-12)


def test_unrotated_pattern_matches_local_eval():
    pat = make_pattern("tr38901")
    d = np.array([np.sin(1.0) * np.cos(0.5), np.sin(1.0) * np.sin(0.5),
                  np.cos(1.0)])
    f = pattern_to_gcs(pat, d)
    c_th, c_ph = pat.evaluator(1.0, 0.5)
    assert f.c_theta == pytest.approx(complex(c_th), rel=1e-12)
    assert f.c_phi == pytest.approx(complex(c_ph), abs=1e-12)


def test_gain_is_rotation_equivariant(rng):
    pat0 = make_pattern("tr38901")
    for _ in range(20):
        ypr = rng.uniform(-np.pi, np.pi, 3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        rot = rotation_ypr(*ypr)
        g_rot = pattern_to_gcs(pat0.with_orientation(ypr), rot @ d).norm()
        g_ref = pattern_to_gcs(pat0, d).norm()
        assert g_rot == pytest.approx(g_ref, rel=1e-9, abs=1e-12)


def test_normalization_isotropic():
    val = pattern_normalization(make_pattern("isotropic"))
    assert val == pytest.approx(4 * np.pi, rel=1e-6)


def test_normalization_half_wave_dipole():
    directivity = 1.641

    def dipole(theta, phi):
        theta = np.asarray(theta, dtype=np.float64)
        st = np.sin(theta)
        amp = np.where(st > 1e-12,
                       np.cos(np.pi / 2 * np.cos(theta)) / np.maximum(st, 1e-12),
                       0.0)
        c = np.sqrt(directivity) * amp
        return c.astype(np.complex128), np.zeros_like(c, dtype=np.complex128)

    val = pattern_normalization(AntennaPattern(dipole, gain=directivity))
    assert val == pytest.approx(4 * np.pi, rel=1e-2)


def test_normalization_amplitude_homogeneity():
    base = make_pattern("isotropic")
    doubled = AntennaPattern(lambda t, p: tuple(2 * c for c in
                                                base.evaluator(t, p)))
    assert pattern_normalization(doubled) == pytest.approx(
        4 * pattern_normalization(base), rel=1e-12)


def test_normalization_tr38901():
    val = pattern_normalization(make_pattern("tr38901"))
    assert val == pytest.approx(4 * np.pi, rel=1e-3)


def test_normalization_orientation_invariant(rng):
    # integrate the world-frame gain of a rotated pattern over the sphere
    pat = make_pattern("tr38901", orientation=tuple(rng.uniform(-1, 1, 3)))
    from scipy.special import roots_legendre
    x, w = roots_legendre(64)
    theta = (x + 1) * np.pi / 2
    phi = np.linspace(0, 2 * np.pi, 129)[:-1]
    total = 0.0
    for t, wt in zip(theta, w):
        for p in phi:
            d = np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p),
                          np.cos(t)])
            total += pattern_to_gcs(pat, d).norm() ** 2 * np.sin(t) \
                * wt * np.pi / 2 * (2 * np.pi / len(phi))
    assert total == pytest.approx(4 * np.pi, rel=1e-3)


def test_array_response_cases():
    lam = 0.1
    geo = ArrayGeometry(np.zeros((3, 3)))
    assert np.allclose(array_response(geo, [1.0, 0, 0], lam, incoming=False),
                       np.ones(3))
    geo = ArrayGeometry(np.array([[lam / 2, 0.0, 0.0]]))
    assert array_response(geo, [0.0, 1.0, 0.0], lam, incoming=False)[0] \
        == pytest.approx(1.0)
    out = array_response(geo, [1.0, 0.0, 0.0], lam, incoming=False)[0]
    assert out == pytest.approx(np.exp(1j * np.pi), abs=1e-12)
    back = array_response(geo, [1.0, 0.0, 0.0], lam, incoming=True)[0]
    assert back == pytest.approx(np.exp(-1j * np.pi), abs=1e-12)


def test_array_response_unit_modulus(rng):
    geo = ArrayGeometry(rng.normal(size=(8, 3)))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    vals = array_response(geo, d, 0.3, incoming=True)
    assert np.allclose(np.abs(vals), 1.0, atol=1e-12)
