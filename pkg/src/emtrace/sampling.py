"""Direction lattices and random draws shared by both solvers.

Randomness is counter-based: every draw site opens its own stream keyed by
(seed, sample index, bounce depth, purpose tag), so results never depend on
worker count or scheduling order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import AllZero

_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


class Interaction(enum.Enum):
    """Surface interaction kinds, in the fixed sampling order."""

    REFLECTION = "R"
    SCATTERING = "S"
    TRANSMISSION = "T"
    DIFFRACTION = "D"


INTERACTION_ORDER = (
    Interaction.REFLECTION,
    Interaction.SCATTERING,
    Interaction.TRANSMISSION,
    Interaction.DIFFRACTION,
)


def _tag_hash(text):
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class RngStream:
    """Value-type handle for one independent random stream.

    Identical (seed, sample, depth, purpose) always reproduces the same
    draws.  The tuple selects a disjoint counter region of a keyed Philox
    generator, so streams for different purposes never overlap.
    """

    seed: int
    sample: int = 0
    depth: int = 0
    purpose: str = ""

    def child(self, sample=None, depth=None, purpose=None):
        """Copy with some of the stream id fields replaced."""
        updates = {}
        if sample is not None:
            updates["sample"] = sample
        if depth is not None:
            updates["depth"] = depth
        if purpose is not None:
            updates["purpose"] = purpose
        return replace(self, **updates)

    def generator(self):
        """Fresh generator positioned at the start of this stream."""
        key = (self.seed & _MASK64) | ((self.sample & _MASK64) << 64)
        counter = ((self.depth & _MASK64) << 128) | (_tag_hash(self.purpose) << 192)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))


def fibonacci_directions(n_samples):
    """Spherical Fibonacci lattice of n_samples unit directions.

    Index n runs from -floor(N/2) to ceil(N/2)-1 with polar angle
    arccos(2n/N) and azimuth 2*pi*n divided by the golden ratio; every ray
    tube then subtends roughly the same solid angle 4*pi/N.
    """
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("need at least one direction")
    n = np.arange(-(n_samples // 2), (n_samples + 1) // 2, dtype=np.float64)
    cos_t = 2.0 * n / n_samples
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * n / GOLDEN_RATIO
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


@dataclass(frozen=True)
class InteractionDistribution:
    """Probabilities of choosing each interaction kind at a surface hit."""

    q_reflection: float
    q_scattering: float
    q_transmission: float
    q_diffraction: float

    def __post_init__(self):
        probs = self.as_tuple()
        if any(q < 0.0 for q in probs):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to one")

    def as_tuple(self):
        return (
            self.q_reflection,
            self.q_scattering,
            self.q_transmission,
            self.q_diffraction,
        )


def interaction_probabilities(fresnel, scattering, q_diffraction=0.2, enabled=None):
    """Distribution over interaction kinds at one surface hit.

    Specular reflection, diffuse reflection, and refraction split the
    probability mass left over by the fixed diffraction probability in
    proportion to the energy their coefficients carry; the specular and
    diffuse shares divide the reflected part by (1 - S^2) versus S^2.
    Disabled kinds get zero probability and the rest renormalize.
    """
    if not 0.0 <= q_diffraction <= 1.0:
        raise ValueError("q_diffraction must lie in [0, 1]")
    if not 0.0 <= scattering <= 1.0:
        raise ValueError("scattering coefficient must lie in [0, 1]")
    r_sq = abs(fresnel.r_perp) ** 2 + abs(fresnel.r_par) ** 2
    t_sq = abs(fresnel.t_perp) ** 2 + abs(fresnel.t_par) ** 2
    denom = r_sq + t_sq
    if denom > 0.0:
        keep = 1.0 - q_diffraction
        raw = [
            keep * (1.0 - scattering**2) * r_sq / denom,
            keep * scattering**2 * r_sq / denom,
            keep * t_sq / denom,
            q_diffraction,
        ]
    else:
        raw = [0.0, 0.0, 0.0, q_diffraction]
    if enabled is not None:
        allowed = set(enabled)
        raw = [
            q if kind in allowed else 0.0
            for q, kind in zip(raw, INTERACTION_ORDER)
        ]
    total = sum(raw)
    if total <= 0.0:
        raise AllZero("no enabled interaction has positive probability")
    return InteractionDistribution(*(q / total for q in raw))


def sample_interaction_batch(rng, probs):
    """Inverse-CDF draw of interaction codes for a batch of distributions.

    probs has one (R, S, T, D) row per ray; the result holds indices into
    INTERACTION_ORDER.
    """
    probs = np.asarray(probs, dtype=np.float64)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] >= cum).sum(axis=1), 3).astype(np.uint8)


def sample_discrete(rng, dist):
    """One interaction kind drawn from dist by inverse CDF in R,S,T,D order."""
    code = sample_interaction_batch(rng, np.array([dist.as_tuple()]))[0]
    return INTERACTION_ORDER[code]


def _perpendicular_batch(vectors):
    # same axis preference as em.deterministic_perpendicular, vectorized
    x_axis = np.array([1.0, 0.0, 0.0])
    y_axis = np.array([0.0, 1.0, 0.0])
    cand = x_axis[None, :] - (vectors @ x_axis)[:, None] * vectors
    norms = np.linalg.norm(cand, axis=1)
    weak = norms <= 1e-9
    if np.any(weak):
        fallback = y_axis[None, :] - (vectors[weak] @ y_axis)[:, None] * vectors[weak]
        cand[weak] = fallback
        norms[weak] = np.linalg.norm(fallback, axis=1)
    return cand / norms[:, None]


def sample_hemisphere_batch(rng, normals):
    """Uniform directions on the hemispheres around each unit normal."""
    normals = np.asarray(normals, dtype=np.float64)
    count = normals.shape[0]
    cos_t = rng.random(count)
    azim = 2.0 * np.pi * rng.random(count)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    t1 = _perpendicular_batch(normals)
    t2 = np.cross(normals, t1)
    return (
        (sin_t * np.cos(azim))[:, None] * t1
        + (sin_t * np.sin(azim))[:, None] * t2
        + cos_t[:, None] * normals
    )


def sample_hemisphere(rng, n_hat):
    """One direction drawn uniformly from the hemisphere around n_hat."""
    n_hat = np.asarray(n_hat, dtype=np.float64)
    return sample_hemisphere_batch(rng, n_hat[None, :])[0]


def keller_direction(beta0, phi, frame):
    """Unit direction on the diffraction cone of half-angle beta0.

    frame is the orthonormal (t_hat, n_hat, e_hat) triple at the edge with
    t_hat tangent to the face; phi is the cone azimuth measured from t_hat.
    """
    t_hat, n_hat, e_hat = frame
    sin_b = math.sin(beta0)
    return (
        sin_b * math.cos(phi) * np.asarray(t_hat, dtype=np.float64)
        + sin_b * math.sin(phi) * np.asarray(n_hat, dtype=np.float64)
        + math.cos(beta0) * np.asarray(e_hat, dtype=np.float64)
    )


def sample_keller_azimuth(rng, n_open, size=None):
    """Cone azimuth drawn uniformly from [0, n*pi) for an open angle n*pi."""
    return rng.uniform(0.0, n_open * np.pi, size=size)
