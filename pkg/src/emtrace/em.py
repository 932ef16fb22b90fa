"""Coordinate frames, rotations, antenna patterns, and array responses.

Conventions: zenith angle theta = arccos(z) in [0, pi], azimuth phi =
atan2(y, x); the propagation direction of a transverse field equals
theta_hat x phi_hat. All operations are pure; pattern objects are immutable.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import epsilon_0 as VACUUM_PERMITTIVITY
from scipy.constants import mu_0
from scipy.special import roots_legendre

VACUUM_IMPEDANCE = float(np.sqrt(mu_0 / VACUUM_PERMITTIVITY))

QUAD_THETA_NODES = 128
QUAD_PHI_NODES = 256


def spherical_basis(theta, phi):
    """Radial, zenith, and azimuth unit vectors; r_hat = theta_hat x phi_hat.

    Accepts scalars or arrays; vectors are stacked on the last axis.
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    r_hat = np.stack([st * cp, st * sp, ct], axis=-1)
    theta_hat = np.stack([ct * cp, ct * sp, -st], axis=-1)
    phi_hat = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return r_hat, theta_hat, phi_hat


def angles_of(direction):
    """Zenith and azimuth angles of unit vectors (last axis = xyz)."""
    d = np.asarray(direction, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    return theta, phi


def transverse_frame(direction):
    """(theta_hat, phi_hat) of the spherical frame carried by a direction."""
    _, th, ph = spherical_basis(*angles_of(direction))
    return th, ph


def rotation_ypr(alpha, beta, gamma):
    """World-frame rotation from yaw (z), pitch (y), roll (x), applied z.y.x."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return rz @ ry @ rx


def rodrigues_rotation(a_hat, b_hat):
    """Rotation matrix taking unit vector a_hat onto b_hat.

    Anti-parallel inputs rotate by pi about a deterministic perpendicular
    axis (the candidate with the largest |x| component).
    """
    a = np.asarray(a_hat, dtype=np.float64)
    b = np.asarray(b_hat, dtype=np.float64)
    k = np.cross(a, b)
    s = np.linalg.norm(k)
    c = float(np.clip(a @ b, -1.0, 1.0))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        axis = _any_perpendicular(a)
        kmat = _skew(axis)
        return np.eye(3) + 2.0 * (kmat @ kmat)   # sin(pi)=0, 1-cos(pi)=2
    kmat = _skew(k / s)
    return np.eye(3) + s * kmat + (1.0 - c) * (kmat @ kmat)


def rotate_about_axis(axis, angle):
    """Rotation by an angle about an arbitrary unit axis."""
    kmat = _skew(np.asarray(axis, dtype=np.float64))
    return (np.eye(3) + np.sin(angle) * kmat
            + (1.0 - np.cos(angle)) * (kmat @ kmat))


def _skew(k):
    return np.array([[0.0, -k[2], k[1]],
                     [k[2], 0.0, -k[0]],
                     [-k[1], k[0], 0.0]])


def deterministic_perpendicular(v):
    """Unit vector perpendicular to v maximizing the |x| component.

    Falls back to the projected y axis when v is (anti)parallel to x.
    """
    v = np.asarray(v, dtype=np.float64)
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        u = axis - (axis @ v) * v
        n = np.linalg.norm(u)
        if n > 1e-9:
            return u / n
    raise ValueError("input vector is not unit length")


_any_perpendicular = deterministic_perpendicular


def field_basis_change(a_hat, b_hat, q_hat, r_hat):
    """2x2 change-of-basis between two transverse frames of the same ray.

    Rows select the (a_hat, b_hat) components, columns the (q_hat, r_hat)
    ones: W = [[a.q, a.r], [b.q, b.r]]. Orthogonal with determinant +-1.
    """
    a = np.asarray(a_hat)
    b = np.asarray(b_hat)
    q = np.asarray(q_hat)
    r = np.asarray(r_hat)
    return np.array([[a @ q, a @ r], [b @ q, b @ r]])


@dataclass(frozen=True)
class JonesField:
    """Transverse complex field in an explicit (theta_hat, phi_hat, k_hat) frame."""

    c_theta: complex
    c_phi: complex
    frame: tuple

    def __post_init__(self):
        th, ph, k = (np.asarray(v, dtype=np.float64) for v in self.frame)
        if max(abs(th @ ph), abs(th @ k), abs(ph @ k)) > 1e-9:
            raise ValueError("frame is not orthogonal")
        if np.linalg.norm(np.cross(th, ph) - k) > 1e-9:
            raise ValueError("frame is not right-handed (k != theta x phi)")

    def vector(self):
        """The field as a complex 3-vector in world coordinates."""
        th, ph, _ = self.frame
        return self.c_theta * th + self.c_phi * ph

    def norm(self):
        return float(np.hypot(abs(self.c_theta), abs(self.c_phi)))


@dataclass(frozen=True)
class AntennaPattern:
    """Directional complex pattern with orientation.

    `evaluator(theta, phi)` returns the two pattern components (zenith slot,
    azimuth slot) in the antenna's own frame; the squared norm is the
    directional gain, so integrating it over the sphere gives
    4*pi*eta_rad.
    """

    evaluator: callable
    gain: float = 1.0
    eta_rad: float = 1.0
    orientation: tuple = (0.0, 0.0, 0.0)
    name: str = "custom"

    def rotation(self):
        return rotation_ypr(*self.orientation)

    def with_orientation(self, orientation):
        return AntennaPattern(self.evaluator, self.gain, self.eta_rad,
                              tuple(orientation), self.name)


@dataclass(frozen=True)
class ArrayGeometry:
    """Element offsets (m) relative to the array center, plus pattern slots."""

    offsets: np.ndarray
    pattern_names: tuple = ("isotropic",)

    def __post_init__(self):
        object.__setattr__(self, "offsets",
                           np.atleast_2d(np.asarray(self.offsets,
                                                    dtype=np.float64)))
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("element offsets must be finite")

    @property
    def num_elements(self):
        return len(self.offsets)

    def max_radius(self):
        if self.num_elements == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.offsets, axis=1)))


def pattern_to_gcs(pattern, direction_gcs):
    """Evaluate an oriented pattern for a world-frame departure direction.

    The direction is mapped into the antenna frame, the pattern is evaluated
    there, and the two components are carried back to the world spherical
    basis of the direction.
    """
    d = np.asarray(direction_gcs, dtype=np.float64)
    rot = pattern.rotation()
    d_local = rot.T @ d
    theta_l = np.arccos(np.clip(d_local[2], -1.0, 1.0))
    phi_l = np.arctan2(d_local[1], d_local[0])
    c_th_l, c_ph_l = pattern.evaluator(theta_l, phi_l)

    theta, phi = angles_of(d)
    _, th_g, ph_g = spherical_basis(theta, phi)
    _, th_l, ph_l = spherical_basis(theta_l, phi_l)
    th_l_w = rot @ th_l
    ph_l_w = rot @ ph_l
    c_th = (th_g @ th_l_w) * c_th_l + (th_g @ ph_l_w) * c_ph_l
    c_ph = (ph_g @ th_l_w) * c_th_l + (ph_g @ ph_l_w) * c_ph_l
    return JonesField(complex(c_th), complex(c_ph), (th_g, ph_g, d))


def pattern_normalization(pattern):
    """Quadrature of the directional gain over the full sphere.

    Gauss-Legendre nodes in the zenith angle, trapezoid in azimuth; equals
    4*pi*eta_rad for a correctly scaled pattern.
    """
    x, w = roots_legendre(QUAD_THETA_NODES)
    theta = (x + 1.0) * (np.pi / 2.0)
    w_theta = w * (np.pi / 2.0)
    phi = np.linspace(0.0, 2.0 * np.pi, QUAD_PHI_NODES + 1)

    tg, pg = np.meshgrid(theta, phi, indexing="ij")
    c_th, c_ph = pattern.evaluator(tg, pg)
    gain_dir = np.abs(c_th) ** 2 + np.abs(c_ph) ** 2
    inner = np.trapezoid(gain_dir, phi, axis=1)
    return float(np.sum(inner * np.sin(theta) * w_theta))


def array_response(geometry, direction, wavelength, incoming):
    """Per-element phase vector of a synthetic array.

    Departure (incoming=False) uses +k_hat, arrival uses -k_hat; entries are
    unit-modulus complex exponentials.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    k_hat = np.asarray(direction, dtype=np.float64)
    sign = -1.0 if incoming else 1.0
    phase = (2.0 * np.pi / wavelength) * (geometry.offsets @ (sign * k_hat))
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# Built-in patterns
# ---------------------------------------------------------------------------

def _isotropic_eval(theta, phi):
    one = np.ones_like(np.asarray(theta, dtype=np.float64))
    return one.astype(np.complex128), np.zeros_like(one, dtype=np.complex128)


def _tr38901_gain_db(theta, phi):
    """Single-element pattern of the 3GPP TR 38.901 channel model.

    65 degree half-power beamwidths in both cuts, 30 dB side-lobe floors,
    8 dBi nominal peak gain.
    """
    theta_deg = np.rad2deg(np.asarray(theta, dtype=np.float64))
    phi_deg = np.rad2deg(np.arctan2(np.sin(phi), np.cos(phi)))
    a_v = -np.minimum(12.0 * ((theta_deg - 90.0) / 65.0) ** 2, 30.0)
    a_h = -np.minimum(12.0 * (phi_deg / 65.0) ** 2, 30.0)
    return -np.minimum(-(a_v + a_h), 30.0) + 8.0


class _Tr38901Eval:
    """Vertically polarized 38.901 element, rescaled to radiate unit power."""

    def __init__(self):
        self.scale = 1.0
        probe = AntennaPattern(self, name="tr38901-unscaled")
        integral = pattern_normalization(probe)
        self.scale = float(np.sqrt(4.0 * np.pi / integral))

    def __call__(self, theta, phi):
        amp = self.scale * 10.0 ** (_tr38901_gain_db(theta, phi) / 20.0)
        amp = np.asarray(amp, dtype=np.complex128)
        return amp, np.zeros_like(amp)


_BUILTIN_CACHE = {}


def make_pattern(name, orientation=(0.0, 0.0, 0.0)):
    """Factory for the built-in patterns: 'isotropic' (alias 'iso'), 'tr38901'."""
    key = name.lower()
    if key in ("iso", "isotropic"):
        return AntennaPattern(_isotropic_eval, gain=1.0, name="isotropic",
                              orientation=tuple(orientation))
    if key == "tr38901":
        if key not in _BUILTIN_CACHE:
            ev = _Tr38901Eval()
            _BUILTIN_CACHE[key] = (ev, float(np.max(np.abs(
                ev(np.pi / 2, 0.0)[0])) ** 2))
        ev, gain = _BUILTIN_CACHE[key]
        return AntennaPattern(ev, gain=gain, name="tr38901",
                              orientation=tuple(orientation))
    raise ValueError(f"unknown pattern {name!r}")
