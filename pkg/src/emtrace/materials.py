"""Material models and local electromagnetic interaction operators.

Everything here acts on a single interaction in isolation: half-space and
slab reflection/transmission coefficients, the polarization transforms for
specular reflection, transmission and diffuse scattering, and the uniform
theory of diffraction (UTD) wedge transfer matrix.  Spreading factors and
propagation phase between interaction points are applied by the path
solver, never here.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import comb, fresnel

from .em import (
    SPEED_OF_LIGHT,
    VACUUM_PERMITTIVITY,
    JonesField,
    deterministic_perpendicular,
    field_basis_change,
    transverse_frame,
)
from .errors import DegenerateFrame, DegenerateGeometry

# Below this value of ||k x n|| the incidence plane is ill-defined and a
# deterministic perpendicular frame is substituted.
EPS_FRAME = 1e-9
# Edge-parallel incidence: no diffraction cone, the transfer is undefined.
EPS_EDGE_GRAZE = 1e-9
# Deviation from a diffraction shadow/reflection boundary below which the
# regularized small-argument limit of the cot * F product is used.
EPS_COT_POLE = 1e-6


# ---------------------------------------------------------------------------
# material description


@dataclasses.dataclass(frozen=True)
class ScatteringPattern:
    """Angular density of the diffusely scattered power.

    kind
        "lambertian", "directive" or "backscattering".
    alpha_r
        Lobe exponent around the specular direction (directive and
        backscattering kinds).  Positive integer.
    alpha_i
        Lobe exponent around the back-scatter direction (backscattering
        kind only).  Positive integer.
    lambda_mix
        Fraction of power in the specular-direction lobe for the
        backscattering kind, in [0, 1].
    """

    kind: str = "lambertian"
    alpha_r: int = 1
    alpha_i: int = 1
    lambda_mix: float = 1.0

    def __post_init__(self):
        if self.kind not in ("lambertian", "directive", "backscattering"):
            raise ValueError(f"unknown scattering pattern kind: {self.kind!r}")
        if self.alpha_r < 1 or self.alpha_r != int(self.alpha_r):
            raise ValueError("alpha_r must be a positive integer")
        if self.alpha_i < 1 or self.alpha_i != int(self.alpha_i):
            raise ValueError("alpha_i must be a positive integer")
        if not 0.0 <= self.lambda_mix <= 1.0:
            raise ValueError("lambda_mix must lie in [0, 1]")


@dataclasses.dataclass(frozen=True)
class RadioMaterial:
    """Electromagnetic description of a surface.

    eps_r
        Real relative permittivity.
    sigma
        Conductivity in S/m.
    thickness
        Slab thickness in meters; 0 models an infinitesimally thin sheet
        that is fully transparent.
    scattering
        Fraction S of the reflected field amplitude that is scattered
        diffusely, in [0, 1].  The specularly reflected amplitude keeps
        the factor sqrt(1 - S^2).
    xpd_kx
        Cross-polarization power fraction of the diffuse field, in [0, 1].
    pattern
        Angular scattering pattern of the diffuse component.
    random_phases
        Draw independent random phases for the two diffuse polarization
        rows instead of leaving them coherent.
    """

    name: str = "custom"
    eps_r: float = 1.0
    sigma: float = 0.0
    thickness: float = 0.0
    scattering: float = 0.0
    xpd_kx: float = 0.0
    pattern: ScatteringPattern = dataclasses.field(default_factory=ScatteringPattern)
    random_phases: bool = False

    def __post_init__(self):
        if self.eps_r < 1.0:
            raise ValueError("eps_r must be >= 1")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.thickness < 0.0:
            raise ValueError("thickness must be >= 0")
        if not 0.0 <= self.scattering <= 1.0:
            raise ValueError("scattering must lie in [0, 1]")
        if not 0.0 <= self.xpd_kx <= 1.0:
            raise ValueError("xpd_kx must lie in [0, 1]")

    @property
    def specular_factor(self) -> float:
        """Amplitude kept by the specular component, sqrt(1 - S^2)."""
        return math.sqrt(max(0.0, 1.0 - self.scattering**2))

    def complex_permittivity(self, frequency: float) -> complex:
        return complex_permittivity(self.eps_r, self.sigma, frequency)


def complex_permittivity(eps_r: float, sigma: float, frequency: float) -> complex:
    """Relative complex permittivity at the given frequency in Hz."""
    if frequency <= 0.0:
        raise ValueError("frequency must be positive")
    return eps_r - 1j * sigma / (VACUUM_PERMITTIVITY * 2.0 * math.pi * frequency)


def material_presets() -> dict:
    """A few ready-made materials with fixed, non-normative parameters."""
    return {
        "vacuum": RadioMaterial(name="vacuum"),
        "concrete": RadioMaterial(
            name="concrete", eps_r=5.24, sigma=0.0462, thickness=0.1
        ),
        "glass": RadioMaterial(name="glass", eps_r=6.31, sigma=0.0236, thickness=0.003),
        "metal": RadioMaterial(name="metal", eps_r=1.0, sigma=1e7, thickness=0.1),
    }


# ---------------------------------------------------------------------------
# reflection and transmission coefficients


@dataclasses.dataclass(frozen=True)
class FresnelSet:
    """Reflection and transmission coefficients for both polarizations."""

    r_perp: complex
    r_par: complex
    t_perp: complex
    t_par: complex


def _sqrt_lossy(z):
    """Square root on the branch with non-positive imaginary part.

    Keeps waves in passive media decaying along the propagation
    direction.
    """
    s = np.sqrt(np.asarray(z, dtype=np.complex128))
    return np.where(s.imag > 0.0, -s, s)


def fresnel_vacuum(cos_theta1, eta2) -> FresnelSet:
    """Half-space coefficients for incidence from vacuum.

    cos_theta1 is the cosine of the angle between the incoming ray and
    the surface normal; eta2 the relative complex permittivity of the
    half-space.  Total internal reflection (only reachable for
    |eta2| <= sin^2 theta1 with lossless media) returns unit reflection
    and zero transmission.
    """
    c1 = np.asarray(cos_theta1, dtype=np.float64)
    eta2 = np.asarray(eta2, dtype=np.complex128)
    sin2 = 1.0 - c1**2
    root = _sqrt_lossy(eta2 - sin2)

    r_perp = (c1 - root) / (c1 + root)
    r_par = (eta2 * c1 - root) / (eta2 * c1 + root)
    t_perp = 2.0 * c1 / (c1 + root)
    t_par = 2.0 * np.sqrt(eta2) * c1 / (eta2 * c1 + root)

    total = (eta2.imag == 0.0) & (sin2 >= np.abs(eta2))
    if np.any(total):
        one = np.ones_like(r_perp)
        zero = np.zeros_like(r_perp)
        r_perp = np.where(total, one, r_perp)
        r_par = np.where(total, one, r_par)
        t_perp = np.where(total, zero, t_perp)
        t_par = np.where(total, zero, t_par)

    if np.ndim(cos_theta1) == 0 and np.ndim(eta2) == 0:
        return FresnelSet(
            complex(r_perp), complex(r_par), complex(t_perp), complex(t_par)
        )
    return FresnelSet(r_perp, r_par, t_perp, t_par)


def slab_coefficients(cos_theta0, eta, thickness, wavelength, polarization="perp"):
    """Reflection and transmission of a homogeneous slab in vacuum.

    Accounts for all internal multiple reflections coherently.  Returns
    (r, t) for the requested polarization ("perp" or "par"); call twice
    to cover both.  A zero-thickness slab is transparent.
    """
    if polarization not in ("perp", "par"):
        raise ValueError("polarization must be 'perp' or 'par'")
    if wavelength <= 0.0:
        raise ValueError("wavelength must be positive")
    c0 = np.asarray(cos_theta0, dtype=np.float64)
    half = fresnel_vacuum(c0, eta)
    r1 = half.r_perp if polarization == "perp" else half.r_par
    if thickness == 0.0:
        shape = np.broadcast(c0, np.asarray(eta)).shape
        r = np.zeros(shape, dtype=np.complex128)
        t = np.ones(shape, dtype=np.complex128)
        if np.ndim(cos_theta0) == 0 and np.ndim(eta) == 0:
            return complex(r), complex(t)
        return r, t

    sin2 = 1.0 - c0**2
    q = 2.0 * np.pi * thickness / wavelength * _sqrt_lossy(np.asarray(eta) - sin2)
    phase2 = np.exp(-2j * q)
    denom = 1.0 - r1**2 * phase2
    r = r1 * (1.0 - phase2) / denom
    t = (1.0 - r1**2) * np.exp(-1j * q) / denom
    if np.ndim(cos_theta0) == 0 and np.ndim(eta) == 0:
        return complex(r), complex(t)
    return r, t


def slab_fresnel(cos_theta0, eta, thickness, wavelength) -> FresnelSet:
    """Slab coefficients for both polarizations in one structure."""
    r_perp, t_perp = slab_coefficients(cos_theta0, eta, thickness, wavelength, "perp")
    r_par, t_par = slab_coefficients(cos_theta0, eta, thickness, wavelength, "par")
    return FresnelSet(r_perp, r_par, t_perp, t_par)


# ---------------------------------------------------------------------------
# polarization frames


def incidence_frame(k_i, n_hat):
    """Perpendicular/parallel basis (e_perp, e_par) for an incoming ray.

    e_perp is normal to the incidence plane; at normal incidence the
    plane is undefined and a deterministic perpendicular is used.
    """
    k_i = np.asarray(k_i, dtype=np.float64)
    cross = np.cross(k_i, n_hat)
    norm = np.linalg.norm(cross)
    if norm < EPS_FRAME:
        e_perp = deterministic_perpendicular(k_i)
    else:
        e_perp = cross / norm
    e_par = np.cross(e_perp, k_i)
    return e_perp, e_par


def mirror_direction(k_i, n_hat):
    """Specular reflection of a unit direction about a surface normal."""
    k_i = np.asarray(k_i, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)
    return k_i - 2.0 * (k_i @ n_hat) * n_hat


# ---------------------------------------------------------------------------
# specular reflection and transmission transforms


def specular_transform(
    k_i, n_hat, material: RadioMaterial, wavelength, in_basis=None, out_basis=None
):
    """Jones matrix of a specular reflection off a slab.

    Returns (k_r, matrix, basis_in, basis_out).  The matrix maps field
    components expressed in basis_in (attached to k_i) to components in
    basis_out (attached to the reflected direction k_r).  When bases are
    not supplied the canonical incidence frames are used and returned.
    The matrix contains the slab reflection coefficients scaled by
    sqrt(1 - S^2); spreading and propagation phase are not included.
    """
    k_i = np.asarray(k_i, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)
    cos_theta = abs(float(k_i @ n_hat))

    e_i_perp, e_i_par = incidence_frame(k_i, n_hat)
    k_r = mirror_direction(k_i, n_hat)
    e_r_perp = e_i_perp
    e_r_par = np.cross(e_r_perp, k_r)

    frequency = SPEED_OF_LIGHT / wavelength
    eta = material.complex_permittivity(frequency)
    coeff = slab_fresnel(cos_theta, eta, material.thickness, wavelength)
    scale = material.specular_factor
    matrix = np.diag(
        [scale * coeff.r_perp, scale * coeff.r_par]
    ).astype(np.complex128)

    if in_basis is not None:
        matrix = matrix @ field_basis_change(e_i_perp, e_i_par, in_basis[0], in_basis[1])
    else:
        in_basis = (e_i_perp, e_i_par)
    if out_basis is not None:
        matrix = field_basis_change(out_basis[0], out_basis[1], e_r_perp, e_r_par) @ matrix
    else:
        out_basis = (e_r_perp, e_r_par)
    return k_r, matrix, in_basis, out_basis


def refraction_transform(
    k_i, n_hat, material: RadioMaterial, wavelength, in_basis=None, out_basis=None
):
    """Jones matrix of transmission straight through a slab.

    The propagation direction is unchanged; the field picks up the slab
    transmission coefficients per polarization.  Returns
    (k_t, matrix, basis_in, basis_out) with k_t == k_i.
    """
    k_i = np.asarray(k_i, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)
    cos_theta = abs(float(k_i @ n_hat))

    e_perp, e_par = incidence_frame(k_i, n_hat)
    frequency = SPEED_OF_LIGHT / wavelength
    eta = material.complex_permittivity(frequency)
    coeff = slab_fresnel(cos_theta, eta, material.thickness, wavelength)
    matrix = np.diag([coeff.t_perp, coeff.t_par]).astype(np.complex128)

    if in_basis is not None:
        matrix = matrix @ field_basis_change(e_perp, e_par, in_basis[0], in_basis[1])
    else:
        in_basis = (e_perp, e_par)
    if out_basis is not None:
        matrix = field_basis_change(out_basis[0], out_basis[1], e_perp, e_par) @ matrix
    else:
        out_basis = (e_perp, e_par)
    return k_i.copy(), matrix, in_basis, out_basis


# ---------------------------------------------------------------------------
# diffuse scattering


def _lobe_normalization(alpha, cos_theta_i):
    """Hemisphere integral of ((1 + cos chi)/2)^alpha for a lobe whose
    axis makes angle theta_i with the surface normal."""
    cos_theta_i = np.asarray(cos_theta_i, dtype=np.float64)
    sin2 = np.clip(1.0 - cos_theta_i**2, 0.0, None)
    total = np.zeros_like(cos_theta_i)
    for k in range(alpha + 1):
        if k % 2 == 0:
            i_k = 2.0 * np.pi / (k + 1)
        else:
            inner = np.zeros_like(cos_theta_i)
            for w in range((k - 1) // 2 + 1):
                inner = inner + comb(2 * w, w) * (sin2 / 4.0) ** w
            i_k = 2.0 * np.pi / (k + 1) * cos_theta_i * inner
        total = total + comb(alpha, k) * i_k
    return total / 2.0**alpha


def scattering_pattern_eval(pattern: ScatteringPattern, k_i, k_s, n_hat):
    """Scattering pattern density f_s(k_i, k_s) over outgoing solid angle.

    k_i points into the surface, k_s away from it, n_hat toward the
    incident side.  Integrates to 1 over the outgoing hemisphere.
    Broadcasts over leading axes of the direction arrays.
    """
    k_i = np.asarray(k_i, dtype=np.float64)
    k_s = np.asarray(k_s, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)
    if pattern.kind == "lambertian":
        cos_s = np.clip(np.sum(k_s * n_hat, axis=-1), 0.0, 1.0)
        return cos_s / np.pi

    cos_i = np.clip(-np.sum(k_i * n_hat, axis=-1), -1.0, 1.0)
    k_r = k_i - 2.0 * np.sum(k_i * n_hat, axis=-1, keepdims=True) * n_hat
    lobe_r = ((1.0 + np.sum(k_r * k_s, axis=-1)) / 2.0) ** pattern.alpha_r
    if pattern.kind == "directive":
        return lobe_r / _lobe_normalization(pattern.alpha_r, cos_i)

    lobe_i = ((1.0 - np.sum(k_i * k_s, axis=-1)) / 2.0) ** pattern.alpha_i
    lam = pattern.lambda_mix
    norm = lam * _lobe_normalization(pattern.alpha_r, cos_i) + (
        1.0 - lam
    ) * _lobe_normalization(pattern.alpha_i, cos_i)
    return (lam * lobe_r + (1.0 - lam) * lobe_i) / norm


def gamma_reflected(field: JonesField, k_i, n_hat, material: RadioMaterial, wavelength):
    """Fraction of the incident field amplitude that is reflected.

    Weights the perpendicular and parallel components of the incident
    field by the slab reflection coefficients.
    """
    e_perp, e_par = incidence_frame(k_i, n_hat)
    w = field_basis_change(e_perp, e_par, field.frame[0], field.frame[1])
    comps = w @ np.array([field.c_theta, field.c_phi])
    frequency = SPEED_OF_LIGHT / wavelength
    eta = material.complex_permittivity(frequency)
    cos_theta = abs(float(np.asarray(k_i) @ np.asarray(n_hat)))
    coeff = slab_fresnel(cos_theta, eta, material.thickness, wavelength)
    norm = np.sqrt(abs(comps[0]) ** 2 + abs(comps[1]) ** 2)
    if norm == 0.0:
        return 0.0
    num = np.sqrt(
        abs(coeff.r_perp * comps[0]) ** 2 + abs(coeff.r_par * comps[1]) ** 2
    )
    return float(num / norm)


def diffuse_transform(
    field: JonesField,
    k_i,
    k_s,
    n_hat,
    material: RadioMaterial,
    gamma: float,
    area_weight: float,
    rng=None,
) -> JonesField:
    """Local field transform of one diffuse scattering event.

    field is the incident Jones field; k_i its propagation direction,
    k_s the scattered direction, n_hat the surface normal on the
    incident side.  gamma is the reflected amplitude fraction and
    area_weight the effective surface patch area.  The result is
    expressed in the spherical basis attached to k_s; the 1/r spreading
    to the observation point is applied by the caller.
    """
    k_i = np.asarray(k_i, dtype=np.float64)
    k_s = np.asarray(k_s, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)

    cos_i = float(np.clip(-(k_i @ n_hat), 0.0, 1.0))
    f_s = float(scattering_pattern_eval(material.pattern, k_i, k_s, n_hat))
    amplitude = material.scattering * gamma * math.sqrt(f_s * cos_i * area_weight)

    if material.random_phases:
        if rng is None:
            raise ValueError("random_phases requires an rng")
        chi1, chi2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    else:
        chi1 = chi2 = 0.0
    kx = material.xpd_kx
    mix = np.array(
        [
            [np.sqrt(1.0 - kx) * np.exp(1j * chi1), -np.sqrt(kx) * np.exp(1j * chi1)],
            [np.sqrt(kx) * np.exp(1j * chi2), np.sqrt(1.0 - kx) * np.exp(1j * chi2)],
        ],
        dtype=np.complex128,
    )

    # incident components in the spherical basis of k_i, output in that of k_s
    theta_hat_i, phi_hat_i = transverse_frame(k_i)
    theta_hat_s, phi_hat_s = transverse_frame(k_s)

    w_in = field_basis_change(theta_hat_i, phi_hat_i, field.frame[0], field.frame[1])
    comps_in = w_in @ np.array([field.c_theta, field.c_phi])
    comps_out = amplitude * (mix @ comps_in)
    return JonesField(
        c_theta=complex(comps_out[0]),
        c_phi=complex(comps_out[1]),
        frame=(theta_hat_s, phi_hat_s, k_s),
    )


# ---------------------------------------------------------------------------
# uniform theory of diffraction


def transition_function(x):
    """UTD transition function, evaluated with Fresnel integrals.

    Real non-negative argument; approaches 0 at 0 and 1 for large x.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0):
        raise ValueError("transition function argument must be >= 0")
    arg = np.sqrt(2.0 * x / np.pi)
    s, c = fresnel(arg)
    value = (
        np.sqrt(np.pi * x / 2.0)
        * np.exp(1j * x)
        * ((1.0 + 1.0j) - 2.0 * (s + 1j * c))
    )
    if np.ndim(x) == 0:
        return complex(value)
    return value


def _cot_f_product(big_angle, n_open, k_wave, l_param, sign):
    """cot((pi + sign*beta)/(2n)) * F(k L a(beta)) with pole handling.

    big_angle is beta (a sum or difference of the two azimuths); near a
    shadow or reflection boundary the product has a finite limit that is
    substituted for numerical stability.
    """
    n_round = round((big_angle + sign * np.pi) / (2.0 * n_open * np.pi))
    # the pole of cot((pi + sign*beta)/(2n)) nearest to beta sits where
    # 2*pi*n*N - beta = sign*pi; eps is the signed distance from it, and the
    # cotangent diverges as sign * 2n/eps there
    eps = big_angle - (2.0 * n_open * np.pi * n_round - sign * np.pi)
    if abs(eps) < EPS_COT_POLE:
        sgn = 1.0 if eps >= 0.0 else -1.0
        kl = k_wave * l_param
        return sign * (
            n_open
            * np.exp(1j * np.pi / 4.0)
            * (
                math.sqrt(2.0 * np.pi * kl) * sgn
                - 2.0 * kl * eps * np.exp(1j * np.pi / 4.0)
            )
        )
    cot = 1.0 / math.tan((np.pi + sign * big_angle) / (2.0 * n_open))
    a_val = 2.0 * math.cos((2.0 * n_open * np.pi * n_round - big_angle) / 2.0) ** 2
    return cot * transition_function(k_wave * l_param * a_val)


def _oblique_frame(s_hat, n_hat, other_hat):
    """Perpendicular/parallel frame for reflection off a wedge face.

    s_hat is the propagation direction, n_hat the face normal; the
    parallel vector of the outgoing frame uses other_hat in the cross
    product.  Degenerate (normal-incidence) frames get a deterministic
    perpendicular.
    """
    cross = np.cross(s_hat, n_hat)
    norm = np.linalg.norm(cross)
    if norm < EPS_FRAME:
        e_perp = deterministic_perpendicular(s_hat)
    else:
        e_perp = cross / norm
    return e_perp, np.cross(e_perp, other_hat)


def utd_transfer(
    wedge,
    s_in_hat,
    s_out_hat,
    dist_in,
    dist_out,
    wavelength,
    material_0: RadioMaterial,
    material_n: RadioMaterial,
):
    """Transfer matrix of first-order wedge diffraction.

    s_in_hat propagates from the source toward the edge point, s_out_hat
    from the edge point toward the observer; dist_in and dist_out are the
    corresponding path lengths.  Returns (matrix, basis_in, basis_out)
    where the 2x2 matrix maps field components in the edge-fixed incoming
    basis to the outgoing one.  The spreading factor
    sqrt(dist_in / (dist_out * (dist_in + dist_out))) and the propagation
    phase are left to the caller.  Raises DegenerateGeometry when the ray
    travels along the edge.
    """
    s_i = np.asarray(s_in_hat, dtype=np.float64)
    s_o = np.asarray(s_out_hat, dtype=np.float64)
    e_hat = wedge.e_hat
    n_open = wedge.n

    cos_beta = float(s_i @ e_hat)
    sin_beta0 = math.sqrt(max(0.0, 1.0 - cos_beta**2))
    if sin_beta0 < EPS_EDGE_GRAZE:
        raise DegenerateGeometry("incidence parallel to the edge")

    cross_i = np.cross(s_i, e_hat)
    phi_hat_in = cross_i / np.linalg.norm(cross_i)
    beta_hat_in = np.cross(phi_hat_in, s_i)
    cross_o = np.cross(-s_o, e_hat)
    norm_o = np.linalg.norm(cross_o)
    if norm_o < EPS_EDGE_GRAZE:
        raise DegenerateGeometry("diffracted ray parallel to the edge")
    phi_hat_out = cross_o / norm_o
    beta_hat_out = np.cross(phi_hat_out, s_o)

    # azimuths about the edge measured from the 0-face tangent
    t0 = wedge.t0_hat
    n0 = wedge.n0_hat
    s_i_t = s_i - (s_i @ e_hat) * e_hat
    s_i_t /= np.linalg.norm(s_i_t)
    s_o_t = s_o - (s_o @ e_hat) * e_hat
    s_o_t /= np.linalg.norm(s_o_t)

    def _sgn(x):
        return 1.0 if x >= 0.0 else -1.0

    phi_in = np.pi - (
        np.pi - math.acos(max(-1.0, min(1.0, float(-s_i_t @ t0))))
    ) * _sgn(float(-s_i_t @ n0))
    phi_out = np.pi - (
        np.pi - math.acos(max(-1.0, min(1.0, float(s_o_t @ t0))))
    ) * _sgn(float(s_o_t @ n0))

    k_wave = 2.0 * np.pi / wavelength
    l_param = (
        dist_in * dist_out / (dist_in + dist_out) * sin_beta0**2
    )
    prefactor = -np.exp(-1j * np.pi / 4.0) / (
        2.0 * n_open * math.sqrt(2.0 * np.pi * k_wave) * sin_beta0
    )
    d1 = prefactor * _cot_f_product(phi_out - phi_in, n_open, k_wave, l_param, +1.0)
    d2 = prefactor * _cot_f_product(phi_out - phi_in, n_open, k_wave, l_param, -1.0)
    d3 = prefactor * _cot_f_product(phi_out + phi_in, n_open, k_wave, l_param, +1.0)
    d4 = prefactor * _cot_f_product(phi_out + phi_in, n_open, k_wave, l_param, -1.0)

    frequency = SPEED_OF_LIGHT / wavelength
    eta_0 = material_0.complex_permittivity(frequency)
    eta_n = material_n.complex_permittivity(frequency)

    # reflection matrices of the two faces, evaluated at the azimuthal
    # angles the boundary terms compensate
    cos_r0 = abs(math.sin(phi_in))
    cos_rn = abs(math.sin(n_open * np.pi - phi_out))
    refl = []
    for n_face, cos_r, eta in (
        (n0, cos_r0, eta_0),
        (wedge.nn_hat, cos_rn, eta_n),
    ):
        e_i_perp, e_i_par = _oblique_frame(s_i, n_face, s_i)
        e_r_perp = e_i_perp
        e_r_par = np.cross(e_i_perp, s_o)
        coeff = fresnel_vacuum(cos_r, eta)
        mat = (
            field_basis_change(phi_hat_out, beta_hat_out, e_r_perp, e_r_par)
            @ np.diag([coeff.r_perp, coeff.r_par])
            @ field_basis_change(e_i_perp, e_i_par, phi_hat_in, beta_hat_in)
        )
        refl.append(mat)
    refl_0, refl_n = refl

    matrix = -(
        (d1 + d2) * np.eye(2, dtype=np.complex128) - d3 * refl_n - d4 * refl_0
    )
    return matrix, (phi_hat_in, beta_hat_in), (phi_hat_out, beta_hat_out)
