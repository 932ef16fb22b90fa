"""Discovery and evaluation of multipath propagation between radio devices.

Candidate paths are found by shooting a Fibonacci lattice of rays from each
source and bouncing them through the scene; specular chains are
deduplicated with a pair of quantized geometry hashes, then refined to
exact polylines with the method of images, including a closed-form solve
for first-order edge diffraction points.  Refined paths are replayed
through the material transfer operators to produce complex channel
gains, delays, and Doppler shifts.
"""

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    JonesField,
    array_response,
    field_basis_change,
    make_pattern,
    pattern_to_gcs,
)
from .errors import Degenerate, UnresolvedMaterial
from .geometry import (
    EPS_COPLANAR,
    build_scene_accel,
    extract_wedges,
)
from .materials import (
    RadioMaterial,
    diffuse_transform,
    gamma_reflected,
    refraction_transform,
    slab_fresnel,
    specular_transform,
    utd_transfer,
)
from .sampling import (
    INTERACTION_ORDER,
    Interaction,
    RngStream,
    _perpendicular_batch,
    fibonacci_directions,
    interaction_probabilities,
)

QUANT_RESOLUTION = 1e-4
MIN_HASH_CAPACITY = 1_000_000
HASH_CHAIN_BASE = 1373

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_CANON_EPS = 1e-8

_R, _S, _T, _D = range(4)


# ---------------------------------------------------------------------------
# geometry hashing


def fnv1a_u64(value, seed=_FNV_OFFSET):
    """Fold the eight little-endian bytes of a 64-bit value into seed."""
    h = seed & _MASK64
    v = value & _MASK64
    for _ in range(8):
        h = ((h ^ (v & 0xFF)) * _FNV_PRIME) & _MASK64
        v >>= 8
    return h


def quantize_round(x):
    return int(math.floor(x / QUANT_RESOLUTION + 0.5))


def quantize_floor(x):
    return int(math.floor(x / QUANT_RESOLUTION))


def hash_plane(normal, point):
    """Two hashes of the plane through point with the given normal.

    The normal is canonicalized so that its first significant component
    is positive, making coplanar primitives of either winding collide on
    purpose.  Returns (rounding hash, flooring hash); a surface
    coordinate sitting exactly on a cell boundary of one quantizer is
    well inside a cell of the other, so coplanar geometry perturbed by
    floating point noise still agrees on at least one of the two.
    """
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    for c in n:
        if abs(c) > _CANON_EPS:
            if c < 0.0:
                n = -n
            break
    d = float(n @ np.asarray(point, dtype=np.float64))
    h_r, h_f = _FNV_OFFSET, _FNV_OFFSET
    for comp in (n[0], n[1], n[2], d):
        h_r = fnv1a_u64(quantize_round(comp) & _MASK64, h_r)
        h_f = fnv1a_u64(quantize_floor(comp) & _MASK64, h_f)
    return h_r, h_f


def hash_edge(wedge):
    """Two hashes of a wedge's edge segment.

    Endpoints are ordered lexicographically so both owning faces produce
    the same value.
    """
    a = np.asarray(wedge.origin, dtype=np.float64)
    b = a + wedge.length * np.asarray(wedge.e_hat, dtype=np.float64)
    if tuple(b) < tuple(a):
        a, b = b, a
    h_r, h_f = _FNV_OFFSET, _FNV_OFFSET
    for comp in (*a, *b):
        h_r = fnv1a_u64(quantize_round(comp) & _MASK64, h_r)
        h_f = fnv1a_u64(quantize_floor(comp) & _MASK64, h_f)
    return h_r, h_f


def hash_update(current, contribution):
    """Append one interaction hash to a rolling chain hash."""
    return (HASH_CHAIN_BASE * current + contribution) & _MASK64


def pair_with_target(chain_hash, target_index):
    """Combine a chain hash with the index of the targeted receiver."""
    return fnv1a_u64(chain_hash, target_index)


def _fnv1a_rows(values, seeds):
    # vectorized twin of fnv1a_u64; must match it bit for bit
    h = np.asarray(seeds, dtype=np.uint64).copy()
    v = np.asarray(values, dtype=np.uint64)
    for shift in range(0, 64, 8):
        byte = (v >> np.uint64(shift)) & np.uint64(0xFF)
        h = (h ^ byte) * np.uint64(_FNV_PRIME)
    return h


def _quantize_round_rows(x):
    return np.floor(x / QUANT_RESOLUTION + 0.5).astype(np.int64)


def _quantize_floor_rows(x):
    return np.floor(x / QUANT_RESOLUTION).astype(np.int64)


def _plane_hash_rows(normals, points):
    """Vectorized hash_plane over row-aligned normals and points."""
    n = np.asarray(normals, dtype=np.float64)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    significant = np.abs(n) > _CANON_EPS
    lead_idx = np.argmax(significant, axis=1)
    lead = n[np.arange(len(n)), lead_idx]
    n = np.where((lead < 0.0)[:, None], -n, n)
    d = np.sum(n * np.asarray(points, dtype=np.float64), axis=1)

    h_r = np.full(len(n), _FNV_OFFSET, dtype=np.uint64)
    h_f = h_r.copy()
    for comp in (n[:, 0], n[:, 1], n[:, 2], d):
        h_r = _fnv1a_rows(_quantize_round_rows(comp).astype(np.uint64), h_r)
        h_f = _fnv1a_rows(_quantize_floor_rows(comp).astype(np.uint64), h_f)
    return h_r, h_f


class DedupTable:
    """Fixed-size counting table deciding chain uniqueness.

    A chain paired with its target is unique only when both of its hash
    slots are untouched; the slots are incremented only then, so a
    rejected duplicate never poisons unrelated chains that share one of
    its slots.  Collisions silently discard paths, which is the accepted
    cost of the scheme.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.counts = np.zeros(self.capacity, dtype=np.int32)
        self.registered = 0
        self.duplicates = 0

    def register(self, paired_round, paired_floor):
        i1 = int(paired_round) % self.capacity
        i2 = int(paired_floor) % self.capacity
        if self.counts[i1] == 0 and self.counts[i2] == 0:
            self.counts[i1] += 1
            self.counts[i2] += 1
            self.registered += 1
            return True
        self.duplicates += 1
        return False

    def load_factor(self):
        return float(np.count_nonzero(self.counts)) / self.capacity


class PathBuffer:
    """Bounded candidate store that drops on overflow, never evicts."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.items = []
        self.discarded = 0

    @property
    def full(self):
        return len(self.items) >= self.capacity

    def append(self, item):
        if self.full:
            self.discarded += 1
            return False
        self.items.append(item)
        return True


# ---------------------------------------------------------------------------
# data model


@dataclass(eq=False)
class InteractionStep:
    """One surface interaction along a path."""

    kind: Interaction
    object_id: int
    primitive_id: int
    vertex: np.ndarray
    normal: np.ndarray
    wedge_index: int = -1

    def __post_init__(self):
        self.vertex = np.asarray(self.vertex, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)


@dataclass(eq=False)
class CandidateRecord:
    """A sampled path skeleton awaiting refinement.

    steps[:suffix_start] is the diffuse prefix whose vertices are final;
    the remaining steps form the specular suffix that the image method
    re-solves between the anchor and the target.  A diffuse-terminal
    record has an empty suffix and is already geometrically valid.
    """

    source_id: int
    target_id: int
    source: np.ndarray
    target: np.ndarray
    sample_id: int
    steps: tuple
    suffix_start: int
    anchor: np.ndarray
    prefix_probability: float
    chain_hash: int
    diffuse_terminal: bool = False

    @property
    def depth(self):
        return len(self.steps)


@dataclass(eq=False)
class Rejection:
    """Why refinement discarded a candidate."""

    reason: str
    detail: str = ""


@dataclass(eq=False)
class PathGeometry:
    """Exact polyline of a refined path."""

    source_id: int
    target_id: int
    sample_id: int
    vertices: np.ndarray
    steps: tuple
    chain_hash: int
    diffuse_terminal: bool = False

    @property
    def depth(self):
        return len(self.steps)


@dataclass(eq=False)
class ValidPath:
    """One propagation path with its channel contribution."""

    tx_index: int
    tx_element: int
    rx_index: int
    rx_element: int
    gain: complex
    delay: float
    doppler: float
    departure: np.ndarray
    arrival: np.ndarray
    vertices: np.ndarray
    steps: tuple
    chain_hash: int
    sample_id: int

    @property
    def depth(self):
        return len(self.steps)

    @property
    def kinds(self):
        return "".join(step.kind.value for step in self.steps)


def _default_array():
    return ArrayGeometry(np.zeros((1, 3)))


@dataclass(eq=False)
class RadioDevice:
    """Transmitter or receiver with position, pattern, and antenna layout."""

    position: np.ndarray
    pattern: object = None
    array: ArrayGeometry = None
    velocity: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.pattern is None:
            self.pattern = make_pattern("isotropic")
        if self.array is None:
            self.array = _default_array()
        if self.velocity is None:
            self.velocity = np.zeros(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)

    def element_positions(self):
        return self.position[None, :] + self.array.offsets


@dataclass(frozen=True)
class PathConfig:
    """Knobs of the path solver."""

    frequency: float = 3.5e9
    num_samples: int = 1_000_000
    max_depth: int = 3
    q_diffraction: float = 0.2
    enabled: frozenset = frozenset(Interaction)
    seed: int = 0
    buffer_capacity: int = None
    hash_capacity: int = None
    workers: int = 1
    synthetic_arrays: bool = True

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise ValueError("frequency must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 <= self.q_diffraction <= 1.0:
            raise ValueError("q_diffraction must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.frequency

    def resolved_buffer_capacity(self):
        if self.buffer_capacity is not None:
            return int(self.buffer_capacity)
        return int(self.num_samples)

    def resolved_hash_capacity(self):
        if self.hash_capacity is not None:
            return int(self.hash_capacity)
        return max(self.resolved_buffer_capacity(), MIN_HASH_CAPACITY)


@dataclass(eq=False)
class GenerationResult:
    records: list
    diagnostics: dict


@dataclass(eq=False)
class PathSet:
    """All paths of one solver run plus run metadata."""

    paths: list
    transmitters: list
    receivers: list
    config: PathConfig
    diagnostics: dict


# ---------------------------------------------------------------------------
# scene container


class SceneModel:
    """Meshes, materials, and the derived acceleration structures.

    Holds everything generation and replay need: the BVH, the extracted
    diffraction wedges, per-triangle plane hashes, and a per-triangle
    index of owned wedges.
    """

    def __init__(self, meshes, materials, velocities=None,
                 dihedral_threshold_deg=1.0):
        self.meshes = list(meshes)
        self.materials = dict(materials)
        self.velocities = {
            k: np.asarray(v, dtype=np.float64)
            for k, v in (velocities or {}).items()
        }
        for mesh in self.meshes:
            if mesh.object_id not in self.materials:
                raise UnresolvedMaterial(
                    f"object {mesh.object_id} has no material"
                )
        self.accel = build_scene_accel(self.meshes)
        self.wedges = extract_wedges(
            self.meshes, dihedral_threshold_deg=dihedral_threshold_deg
        )
        self._build_tables()

    def _build_tables(self):
        accel = self.accel
        ntri = accel.num_triangles
        self.tri_plane_hash_round, self.tri_plane_hash_floor = \
            _plane_hash_rows(accel.tri_normal, accel.tri_v0)

        slot_of = {}
        for i in range(ntri):
            key = (int(accel.tri_object_id[i]), int(accel.tri_primitive_id[i]))
            slot_of[key] = i
        owned = [[] for _ in range(ntri)]
        w_hash_r = np.zeros(len(self.wedges), dtype=np.uint64)
        w_hash_f = np.zeros(len(self.wedges), dtype=np.uint64)
        for wi, w in enumerate(self.wedges):
            w_hash_r[wi], w_hash_f[wi] = hash_edge(w)
            for key in set(w.owners()):
                slot = slot_of.get(key)
                if slot is not None:
                    owned[slot].append(wi)
        counts = np.array([len(lst) for lst in owned], dtype=np.int64)
        self.tri_wedge_offsets = np.concatenate(
            [[0], np.cumsum(counts)]
        ).astype(np.int64)
        self.tri_wedge_ids = np.array(
            [wi for lst in owned for wi in sorted(lst)], dtype=np.int64
        )
        self.tri_has_wedge = counts > 0
        self._tri_slot = slot_of
        self.wedge_hash_round = w_hash_r
        self.wedge_hash_floor = w_hash_f

        if self.wedges:
            self.wedge_origin = np.array([w.origin for w in self.wedges])
            self.wedge_ehat = np.array([w.e_hat for w in self.wedges])
            self.wedge_length = np.array([w.length for w in self.wedges])
            self.wedge_t0 = np.array([w.t0_hat for w in self.wedges])
            self.wedge_n0 = np.array([w.n0_hat for w in self.wedges])
            self.wedge_open = np.array([w.n for w in self.wedges])
        else:
            empty3 = np.zeros((0, 3))
            self.wedge_origin = self.wedge_ehat = empty3
            self.wedge_t0 = self.wedge_n0 = empty3
            self.wedge_length = np.zeros(0)
            self.wedge_open = np.zeros(0)

        self._object_ids = np.array(
            sorted(m.object_id for m in self.meshes), dtype=np.int64
        )
        self._object_materials = [
            self.materials[oid] for oid in self._object_ids
        ]
        self.tri_material_row = np.searchsorted(
            self._object_ids, accel.tri_object_id
        )

    def material_of(self, object_id):
        return self.materials[object_id]

    def velocity_of(self, object_id):
        v = self.velocities.get(object_id)
        return v if v is not None else np.zeros(3)

    def primitive_owns_wedge(self, object_id, primitive_id):
        slot = self._tri_slot.get((int(object_id), int(primitive_id)))
        return slot is not None and bool(self.tri_has_wedge[slot])


# ---------------------------------------------------------------------------
# first-order diffraction point


def solve_diffraction_point(source, target, edge_origin, edge_direction):
    """Edge offset where the source-edge-target path length is stationary.

    Rotates the target about the edge line until it is coplanar with the
    source, then intersects the straightened segment with the line.  The
    result is unclamped; callers decide what lies on the physical edge.
    Raises Degenerate when source or target sits on the edge line or the
    straightened segment runs parallel to it.
    """
    o = np.asarray(edge_origin, dtype=np.float64)
    e = np.asarray(edge_direction, dtype=np.float64)
    e = e / np.linalg.norm(e)
    s = np.asarray(source, dtype=np.float64) - o
    t = np.asarray(target, dtype=np.float64) - o

    u1 = s - (e @ s) * e
    u2 = t - (e @ t) * e
    n1 = np.linalg.norm(u1)
    n2 = np.linalg.norm(u2)
    if n1 < 1e-12 or n2 < 1e-12:
        raise Degenerate("endpoint lies on the edge line")
    u1 = u1 / n1
    u2 = u2 / n2

    axis = np.cross(u1, u2)
    norm_axis = np.linalg.norm(axis)
    axis = e if norm_axis < 1e-12 else axis / norm_axis
    angle = math.pi - math.acos(max(-1.0, min(1.0, float(u1 @ u2))))
    t_rot = _rotate_about(axis, angle) @ t

    st = t_rot - s
    guide = np.cross(e, st)
    norm_guide = np.linalg.norm(guide)
    if norm_guide < 1e-12:
        raise Degenerate("straightened segment parallel to the edge")
    lever = np.cross(s, st)
    sign = 1.0 if float(guide @ lever) >= 0.0 else -1.0
    return sign * float(np.linalg.norm(lever) / norm_guide)


def _rotate_about(axis, angle):
    a = np.asarray(axis, dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    k = np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])
    return c * np.eye(3) + s * k + (1.0 - c) * np.outer(a, a)


# ---------------------------------------------------------------------------
# candidate generation


def _interaction_rows(r_sq, t_sq, scattering, q_diffraction, allow):
    """Per-row interaction probabilities, rows of (R, S, T, D).

    Mirrors the scalar distribution: the fixed diffraction share comes
    off the top, the remainder splits between reflection and refraction
    by coefficient energy, and the reflected part splits specular versus
    diffuse by the scattering fraction.  Disabled entries are zeroed and
    live rows renormalized; rows summing to zero are dead.
    """
    n = len(r_sq)
    raw = np.zeros((n, 4))
    denom = r_sq + t_sq
    pos = denom > 0.0
    keep = 1.0 - q_diffraction
    s_sq = scattering**2
    raw[pos, _R] = keep * (1.0 - s_sq[pos]) * r_sq[pos] / denom[pos]
    raw[pos, _S] = keep * s_sq[pos] * r_sq[pos] / denom[pos]
    raw[pos, _T] = keep * t_sq[pos] / denom[pos]
    raw[:, _D] = q_diffraction
    raw[~allow] = 0.0
    total = raw.sum(axis=1)
    live = total > 0.0
    raw[live] /= total[live, None]
    return raw, live


class _MaterialPack:
    """Per-object slab parameters frozen at one frequency."""

    def __init__(self, scene, frequency):
        wavelength = SPEED_OF_LIGHT / frequency
        mats = scene._object_materials
        self.eta = np.array(
            [m.complex_permittivity(frequency) for m in mats]
        )
        self.thickness = np.array([m.thickness for m in mats])
        self.scattering = np.array([m.scattering for m in mats])
        self.wavelength = wavelength

    def coefficient_energy(self, rows, cos_theta):
        """(reflected, transmitted) energy per hit, both polarizations."""
        r_sq = np.zeros(len(rows))
        t_sq = np.zeros(len(rows))
        for r in np.unique(rows):
            mask = rows == r
            coeff = slab_fresnel(
                cos_theta[mask], self.eta[r], self.thickness[r],
                self.wavelength,
            )
            r_sq[mask] = np.abs(coeff.r_perp) ** 2 + np.abs(coeff.r_par) ** 2
            t_sq[mask] = np.abs(coeff.t_perp) ** 2 + np.abs(coeff.t_par) ** 2
        return r_sq, t_sq


class _SweepState:
    """Row-parallel state of the active rays of one chunk."""

    def __init__(self, source, directions, sample_ids):
        n = len(sample_ids)
        self.sample = sample_ids.astype(np.int64)
        self.origin = np.broadcast_to(source, (n, 3)).astype(np.float64).copy()
        self.direction = directions.astype(np.float64).copy()
        self.hash_round = np.zeros(n, dtype=np.uint64)
        self.hash_floor = np.zeros(n, dtype=np.uint64)
        self.run_prob = np.ones(n)
        self.prefix_prob = np.ones(n)
        self.suffix_start = np.zeros(n, dtype=np.int64)
        self.anchor = self.origin.copy()
        self.has_s = np.zeros(n, dtype=bool)
        self.has_d = np.zeros(n, dtype=bool)
        self.history = []

    def __len__(self):
        return len(self.sample)

    def select(self, keep):
        for name in ("sample", "origin", "direction", "hash_round",
                     "hash_floor", "run_prob", "prefix_prob",
                     "suffix_start", "anchor", "has_s", "has_d"):
            setattr(self, name, getattr(self, name)[keep])
        self.history = [
            {k: v[keep] for k, v in level.items()} for level in self.history
        ]


def _visible_pairs(accel, points, targets, normals, code):
    """(row, target) pairs an interaction vertex can actually reach.

    A reflection or diffuse bounce radiates into the incident half-space
    and a transmission into the far one, so targets on the wrong side
    are dropped before any occlusion rays are cast; edge vertices see
    both sides.  Pairs come back in (row, target) order.  Work proceeds
    in slabs to bound the pair count held at once.
    """
    n, n_t = len(points), len(targets)
    rows_out, tgts_out = [], []
    rows_per_slab = max(1, 2_000_000 // max(n_t, 1))
    for lo in range(0, n, rows_per_slab):
        hi = min(n, lo + rows_per_slab)
        diff = targets[None, :, :] - points[lo:hi, None, :]
        side = np.sum(diff * normals[lo:hi, None, :], axis=2)
        ok = np.where((code[lo:hi] == _T)[:, None], side < 0.0, side > 0.0)
        ok[code[lo:hi] == _D] = True
        r, t = np.nonzero(ok)
        if len(r) == 0:
            continue
        blocked = accel.occluded_batch(points[lo + r], targets[t])
        rows_out.append(lo + r[~blocked])
        tgts_out.append(t[~blocked])
    if rows_out:
        return np.concatenate(rows_out), np.concatenate(tgts_out)
    return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)


def _depth_streams(cfg, depth):
    n = cfg.num_samples

    def gen(purpose):
        return RngStream(cfg.seed, sample=0, depth=depth,
                         purpose=purpose).generator()

    return {
        "interaction": gen("interaction").random(n),
        "respawn": gen("respawn").random((n, 2)),
        "cone": gen("cone").random(n),
    }


def _allowed_columns(cfg):
    return np.array([k in cfg.enabled for k in INTERACTION_ORDER])


def _sweep_chunk(scene, pack, source, targets, cfg, directions, sample_ids,
                 streams, capacity):
    """Trace one contiguous block of samples through the bounce loop.

    Returns ({depth: emission batch}, counters).  Emission batches are
    ordered by (sample, target); purely specular chains whose exact hash
    pair already appeared earlier in this chunk are dropped here, which
    cannot disagree with single-threaded processing: a repeated pair
    would find its slots occupied there too, since slot counts only ever
    grow.
    """
    accel = scene.accel
    state = _SweepState(source, directions, sample_ids)
    seen_pairs = set()
    counters = Counter()
    batches = {}
    allowed = _allowed_columns(cfg)
    emitted_total = 0

    for depth in range(1, cfg.max_depth + 1):
        if len(state) == 0:
            break
        t, tri, _, _ = accel.trace_batch(state.origin, state.direction)
        hit = tri >= 0
        counters["samples_escaped"] += int(np.count_nonzero(~hit))
        state.select(hit)
        if len(state) == 0:
            break
        tri = tri[hit]
        t = t[hit]

        points = state.origin + t[:, None] * state.direction
        normals = accel.tri_normal[tri]
        facing = np.sum(state.direction * normals, axis=1)
        normals = np.where((facing > 0.0)[:, None], -normals, normals)
        cos_i = np.abs(np.sum(state.direction * normals, axis=1))
        obj = accel.tri_object_id[tri]
        prim = accel.tri_primitive_id[tri]
        rows = scene.tri_material_row[tri]

        r_sq, t_sq = pack.coefficient_energy(rows, cos_i)
        allow = np.broadcast_to(allowed, (len(state), 4)).copy()
        allow[:, _S] &= ~state.has_d
        allow[:, _D] &= ~state.has_d & ~state.has_s
        allow[:, _D] &= scene.tri_has_wedge[tri]
        probs, live = _interaction_rows(
            r_sq, t_sq, pack.scattering[rows], cfg.q_diffraction, allow
        )
        counters["samples_terminated"] += int(np.count_nonzero(~live))
        if not np.all(live):
            state.select(live)
            tri, points, normals = tri[live], points[live], normals[live]
            cos_i, obj, prim = cos_i[live], obj[live], prim[live]
            rows, probs = rows[live], probs[live]
        if len(state) == 0:
            break

        u = streams[depth]["interaction"][state.sample]
        cum = np.cumsum(probs, axis=1)
        code = np.minimum((u[:, None] >= cum).sum(axis=1), 3).astype(np.uint8)
        state.run_prob *= probs[np.arange(len(state)), code]

        wedge_ids = np.full(len(state), -1, dtype=np.int64)
        d_rows = np.nonzero(code == _D)[0]
        if len(d_rows):
            wedge_ids[d_rows], points[d_rows] = _project_diffractions(
                scene, tri[d_rows], points[d_rows]
            )
            state.has_d[d_rows] = True

        state.history.append({
            "kind": code.copy(),
            "object": obj.astype(np.int64),
            "primitive": prim.astype(np.int64),
            "vertex": points.copy(),
            "normal": normals.copy(),
            "wedge": wedge_ids.copy(),
        })

        r_rows = np.nonzero(code == _R)[0]
        if len(r_rows):
            state.hash_round[r_rows] = (
                np.uint64(HASH_CHAIN_BASE) * state.hash_round[r_rows]
                + scene.tri_plane_hash_round[tri[r_rows]]
            )
            state.hash_floor[r_rows] = (
                np.uint64(HASH_CHAIN_BASE) * state.hash_floor[r_rows]
                + scene.tri_plane_hash_floor[tri[r_rows]]
            )
        if len(d_rows):
            state.hash_round[d_rows] = (
                np.uint64(HASH_CHAIN_BASE) * state.hash_round[d_rows]
                + scene.wedge_hash_round[wedge_ids[d_rows]]
            )
            state.hash_floor[d_rows] = (
                np.uint64(HASH_CHAIN_BASE) * state.hash_floor[d_rows]
                + scene.wedge_hash_floor[wedge_ids[d_rows]]
            )

        s_rows = np.nonzero(code == _S)[0]
        if len(s_rows):
            state.has_s[s_rows] = True
            state.suffix_start[s_rows] = depth
            state.anchor[s_rows] = points[s_rows]
            state.prefix_prob[s_rows] = state.run_prob[s_rows]

        batch, n_dup = _emit_records(
            scene, state, targets, points, normals, code, depth,
            seen_pairs, capacity - emitted_total,
        )
        counters["duplicates"] += n_dup
        if batch is not None:
            emitted_total += len(batch["sample"])
            counters["chunk_truncated"] += batch.pop("truncated")
            batches[depth] = batch

        if depth == cfg.max_depth:
            break
        grazing = _continue_rays(scene, state, points, normals, code,
                                 wedge_ids, streams[depth])
        counters["samples_terminated"] += int(np.count_nonzero(grazing))
        if np.any(grazing):
            state.select(~grazing)

    return batches, counters


def _project_diffractions(scene, tri, points):
    """Snap diffraction hits to the nearest wedge owned by their triangle."""
    offsets = scene.tri_wedge_offsets
    counts = (offsets[tri + 1] - offsets[tri]).astype(np.int64)
    group = np.repeat(np.arange(len(tri)), counts)
    flat = np.concatenate([
        np.arange(offsets[s], offsets[s + 1]) for s in tri
    ]).astype(np.int64)
    wids = scene.tri_wedge_ids[flat]

    rel = points[group] - scene.wedge_origin[wids]
    x = np.clip(
        np.sum(rel * scene.wedge_ehat[wids], axis=1),
        0.0, scene.wedge_length[wids],
    )
    foot = scene.wedge_origin[wids] + x[:, None] * scene.wedge_ehat[wids]
    dist = np.linalg.norm(points[group] - foot, axis=1)

    order = np.lexsort((dist, group))
    _, first = np.unique(group[order], return_index=True)
    best = order[first]
    return wids[best], foot[best]


def _continue_rays(scene, state, points, normals, code, wedge_ids, streams):
    """Advance surviving rays one bounce; True rows graze along an edge."""
    new_dir = state.direction.copy()
    grazing = np.zeros(len(state), dtype=bool)

    r_rows = np.nonzero(code == _R)[0]
    if len(r_rows):
        d = state.direction[r_rows]
        n = normals[r_rows]
        new_dir[r_rows] = d - 2.0 * np.sum(d * n, axis=1)[:, None] * n

    s_rows = np.nonzero(code == _S)[0]
    if len(s_rows):
        u = streams["respawn"][state.sample[s_rows]]
        cos_t = u[:, 0]
        azim = 2.0 * np.pi * u[:, 1]
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
        n = normals[s_rows]
        t1 = _perpendicular_batch(n)
        t2 = np.cross(n, t1)
        new_dir[s_rows] = (
            (sin_t * np.cos(azim))[:, None] * t1
            + (sin_t * np.sin(azim))[:, None] * t2
            + cos_t[:, None] * n
        )

    d_rows = np.nonzero(code == _D)[0]
    if len(d_rows):
        wid = wedge_ids[d_rows]
        e = scene.wedge_ehat[wid]
        cos_b = np.clip(np.sum(state.direction[d_rows] * e, axis=1),
                        -1.0, 1.0)
        sin_b = np.sqrt(np.maximum(0.0, 1.0 - cos_b**2))
        graze = sin_b < 1e-9
        phi = streams["cone"][state.sample[d_rows]] \
            * scene.wedge_open[wid] * np.pi
        new_dir[d_rows] = (
            (sin_b * np.cos(phi))[:, None] * scene.wedge_t0[wid]
            + (sin_b * np.sin(phi))[:, None] * scene.wedge_n0[wid]
            + cos_b[:, None] * e
        )
        grazing[d_rows] = graze

    state.direction = new_dir
    state.origin = points.copy()
    return grazing


def _emit_records(scene, state, targets, points, normals, code, depth,
                  seen_pairs, room):
    """Collect this depth's diffuse paths and chain candidates.

    Every interaction vertex that sees a target produces a row: diffuse
    bounces record finished paths, the rest record candidate chains.
    Rows are ordered by (sample, target); purely specular chains whose
    hash pair repeats within the chunk are dropped.  At most room rows
    are kept.
    """
    row_idx, tgt_idx = _visible_pairs(
        scene.accel, points, targets, normals, code
    )
    if len(row_idx) == 0:
        return None, 0

    is_diffuse = code[row_idx] == _S
    chain_ok = (state.suffix_start[row_idx] == 0) & ~is_diffuse
    pair_r = _fnv1a_rows(state.hash_round[row_idx],
                         tgt_idx.astype(np.uint64))
    pair_f = _fnv1a_rows(state.hash_floor[row_idx],
                         tgt_idx.astype(np.uint64))

    seen = np.ones(len(row_idx), dtype=bool)
    n_dup = 0
    sub = np.nonzero(chain_ok)[0]
    if len(sub):
        key = np.stack([pair_r[sub], pair_f[sub]], axis=1)
        _, first, inverse = np.unique(
            key, axis=0, return_index=True, return_inverse=True
        )
        inverse = inverse.reshape(-1)
        keep_sub = np.arange(len(sub)) == first[inverse]
        for pos in np.nonzero(keep_sub)[0]:
            pair = (int(key[pos, 0]), int(key[pos, 1]))
            if pair in seen_pairs:
                keep_sub[pos] = False
            else:
                seen_pairs.add(pair)
        n_dup = int(np.count_nonzero(~keep_sub))
        seen[sub] = keep_sub

    row_idx = row_idx[seen]
    tgt_idx = tgt_idx[seen]
    is_diffuse = is_diffuse[seen]
    chain_ok = chain_ok[seen]
    pair_r = pair_r[seen]
    pair_f = pair_f[seen]
    if len(row_idx) == 0:
        return None, n_dup

    truncated = 0
    if len(row_idx) > max(room, 0):
        truncated = len(row_idx) - max(room, 0)
        keep = slice(0, max(room, 0))
        row_idx, tgt_idx = row_idx[keep], tgt_idx[keep]
        is_diffuse, chain_ok = is_diffuse[keep], chain_ok[keep]
        pair_r, pair_f = pair_r[keep], pair_f[keep]
    if len(row_idx) == 0:
        return None, n_dup

    batch = {
        "sample": state.sample[row_idx],
        "target": tgt_idx.astype(np.int64),
        "is_diffuse": is_diffuse,
        "chain_ok": chain_ok,
        "pair_round": pair_r,
        "pair_floor": pair_f,
        "chain_hash": state.hash_round[row_idx],
        "suffix_start": state.suffix_start[row_idx],
        "prefix_prob": state.prefix_prob[row_idx],
        "anchor": state.anchor[row_idx],
        "truncated": truncated,
    }
    for name in ("kind", "object", "primitive", "wedge"):
        batch[name] = np.stack(
            [state.history[lvl][name][row_idx] for lvl in range(depth)],
            axis=1,
        )
    for name in ("vertex", "normal"):
        batch[name] = np.stack(
            [state.history[lvl][name][row_idx] for lvl in range(depth)],
            axis=1,
        )
    return batch, n_dup


def _record_from_batch(scene, batch, i, source, targets, source_id):
    depth = batch["kind"].shape[1]
    steps = tuple(
        InteractionStep(
            kind=INTERACTION_ORDER[batch["kind"][i, lvl]],
            object_id=int(batch["object"][i, lvl]),
            primitive_id=int(batch["primitive"][i, lvl]),
            vertex=batch["vertex"][i, lvl],
            normal=batch["normal"][i, lvl],
            wedge_index=int(batch["wedge"][i, lvl]),
        )
        for lvl in range(depth)
    )
    target_id = int(batch["target"][i])
    return CandidateRecord(
        source_id=source_id,
        target_id=target_id,
        source=np.asarray(source, dtype=np.float64),
        target=targets[target_id],
        sample_id=int(batch["sample"][i]),
        steps=steps,
        suffix_start=int(batch["suffix_start"][i]),
        anchor=batch["anchor"][i],
        prefix_probability=float(batch["prefix_prob"][i]),
        chain_hash=int(batch["chain_hash"][i]),
        diffuse_terminal=bool(batch["is_diffuse"][i]),
    )


def generate_candidates(scene, source, targets, cfg, source_id=0):
    """Shoot the sample lattice from one source and collect candidates.

    Returns a GenerationResult whose records hold line-of-sight and
    bounced chain candidates plus finished diffuse paths, merged over
    worker chunks in (depth, sample, target) order so the outcome is
    identical for any worker count.
    """
    source = np.asarray(source, dtype=np.float64)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if len(targets) == 0:
        raise ValueError("at least one target is required")

    table = DedupTable(cfg.resolved_hash_capacity())
    buffer = PathBuffer(cfg.resolved_buffer_capacity())
    diag = Counter()

    occ0 = scene.accel.occluded_batch(
        np.broadcast_to(source, targets.shape), targets
    )
    for k in range(len(targets)):
        if occ0[k]:
            continue
        if not table.register(pair_with_target(0, k), pair_with_target(0, k)):
            diag["duplicates"] += 1
            continue
        buffer.append(CandidateRecord(
            source_id=source_id, target_id=k, source=source,
            target=targets[k], sample_id=-1, steps=(), suffix_start=0,
            anchor=source, prefix_probability=1.0, chain_hash=0,
        ))

    pack = _MaterialPack(scene, cfg.frequency)
    directions = fibonacci_directions(cfg.num_samples)
    streams = {
        depth: _depth_streams(cfg, depth)
        for depth in range(1, cfg.max_depth + 1)
    }
    bounds = np.linspace(0, cfg.num_samples, cfg.workers + 1).astype(int)
    spans = [
        (bounds[i], bounds[i + 1])
        for i in range(cfg.workers)
        if bounds[i + 1] > bounds[i]
    ]

    def run(span):
        lo, hi = span
        return _sweep_chunk(
            scene, pack, source, targets, cfg, directions[lo:hi],
            np.arange(lo, hi), streams, buffer.capacity,
        )

    if len(spans) > 1:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            results = list(pool.map(run, spans))
    else:
        results = [run(span) for span in spans]

    for _, counters in results:
        diag.update(counters)

    for depth in range(1, cfg.max_depth + 1):
        for batches, _ in results:
            batch = batches.get(depth)
            if batch is None:
                continue
            for i in range(len(batch["sample"])):
                if batch["chain_ok"][i]:
                    if not table.register(int(batch["pair_round"][i]),
                                          int(batch["pair_floor"][i])):
                        diag["duplicates"] += 1
                        continue
                if buffer.full:
                    diag["buffer_overflow"] += 1
                    continue
                buffer.append(_record_from_batch(
                    scene, batch, i, source, targets, source_id
                ))

    diag["buffer_overflow"] += buffer.discarded
    diagnostics = dict(diag)
    diagnostics["candidates"] = len(buffer.items)
    diagnostics["hash_load_factor"] = table.load_factor()
    diagnostics["hash_registered"] = table.registered
    return GenerationResult(records=buffer.items, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# image-method refinement


def _reflect_point(p, normal, on_plane):
    return p - 2.0 * float((p - on_plane) @ normal) * normal

def _reflect_vector(v, normal):
    return v - 2.0 * float(v @ normal) * normal


def _coplanar_with(hit_normal, hit_point, normal, on_plane):
    if abs(float(hit_normal @ normal)) < 1.0 - EPS_COPLANAR:
        return False
    return abs(float((hit_point - on_plane) @ normal)) <= EPS_COPLANAR


def refine_candidate(record, scene):
    """Exact path geometry of one candidate, or the reason it fails.

    The specular suffix is re-solved by backtracking rays from the
    target toward mirror images of the anchor, or of the diffraction
    point once an edge is involved.  Each backtracked ray must strike
    geometry coplanar with the recorded primitive, every connecting
    segment must be unobstructed, and a diffraction point must fall on
    the physical edge.  Rejection reasons: coplanar-miss, occluded,
    off-edge, degenerate.
    """
    prefix = record.steps[:record.suffix_start]
    suffix = record.steps[record.suffix_start:]

    if record.diffuse_terminal or not suffix:
        vertices = np.array(
            [record.source]
            + [st.vertex for st in record.steps]
            + [record.target]
        )
        return PathGeometry(
            source_id=record.source_id, target_id=record.target_id,
            sample_id=record.sample_id, vertices=vertices,
            steps=record.steps, chain_hash=record.chain_hash,
            diffuse_terminal=record.diffuse_terminal,
        )

    anchor = np.asarray(record.anchor, dtype=np.float64)
    target = np.asarray(record.target, dtype=np.float64)
    n = len(suffix)

    images = [anchor]
    for st in suffix:
        if st.kind is Interaction.REFLECTION:
            images.append(_reflect_point(images[-1], st.normal, st.vertex))
        else:
            images.append(images[-1])

    d_indices = [
        i for i, st in enumerate(suffix)
        if st.kind is Interaction.DIFFRACTION
    ]
    i_d = d_indices[0] if d_indices else None
    x = None
    edge_o = edge_e = None
    if i_d is not None:
        wedge = scene.wedges[suffix[i_d].wedge_index]
        # edge mirrored through every later recorded reflection; level j
        # holds the edge as seen after undoing steps i_d+1 .. j
        edge_o = [None] * n
        edge_e = [None] * n
        edge_o[i_d] = np.asarray(wedge.origin, dtype=np.float64)
        edge_e[i_d] = np.asarray(wedge.e_hat, dtype=np.float64)
        for j in range(i_d + 1, n):
            st = suffix[j]
            if st.kind is Interaction.REFLECTION:
                edge_o[j] = _reflect_point(edge_o[j - 1], st.normal,
                                           st.vertex)
                edge_e[j] = _reflect_vector(edge_e[j - 1], st.normal)
            else:
                edge_o[j] = edge_o[j - 1]
                edge_e[j] = edge_e[j - 1]
        try:
            x = solve_diffraction_point(
                images[n], target, edge_o[n - 1], edge_e[n - 1]
            )
        except Degenerate as exc:
            return Rejection("degenerate", str(exc))
        if not 0.0 <= x <= wedge.length:
            return Rejection("off-edge", f"edge offset {x:.6g}")

    refined = [None] * n
    accel = scene.accel
    for j in range(n - 1, -1, -1):
        from_point = target if j == n - 1 else refined[j + 1]
        if j == i_d:
            vertex = edge_o[i_d] + x * edge_e[i_d]
            if _segment_blocked(accel, from_point, vertex):
                return Rejection("occluded", "segment into the edge point")
            refined[j] = vertex
            continue
        aim = (images[j + 1] if i_d is None or j < i_d
               else edge_o[j] + x * edge_e[j])
        ray = aim - from_point
        length = np.linalg.norm(ray)
        if length < 1e-12:
            return Rejection("degenerate", "zero-length backtrack ray")
        ray = ray / length
        t, tri, _, _ = accel.trace_batch(from_point[None, :], ray[None, :])
        if tri[0] < 0:
            return Rejection("coplanar-miss", "backtrack ray escaped")
        st = suffix[j]
        if not _coplanar_with(accel.tri_normal[tri[0]],
                              from_point + t[0] * ray,
                              st.normal, st.vertex):
            return Rejection(
                "coplanar-miss",
                f"bounce {j} landed on non-coplanar geometry",
            )
        refined[j] = from_point + t[0] * ray

    if _segment_blocked(accel, anchor, refined[0]):
        return Rejection("occluded", "segment to the anchor")

    new_suffix = tuple(
        InteractionStep(
            kind=st.kind, object_id=st.object_id,
            primitive_id=st.primitive_id, vertex=refined[j],
            normal=st.normal, wedge_index=st.wedge_index,
        )
        for j, st in enumerate(suffix)
    )
    vertices = np.array(
        [record.source]
        + [st.vertex for st in prefix]
        + [v for v in refined]
        + [target]
    )
    return PathGeometry(
        source_id=record.source_id, target_id=record.target_id,
        sample_id=record.sample_id, vertices=vertices,
        steps=prefix + new_suffix, chain_hash=record.chain_hash,
    )


def _segment_blocked(accel, a, b):
    return bool(accel.occluded_batch(
        np.asarray(a, dtype=np.float64)[None, :],
        np.asarray(b, dtype=np.float64)[None, :],
    )[0])


# ---------------------------------------------------------------------------
# field evaluation


def _right_handed(comps, basis, k_out):
    """Reorder a transverse basis pair so (a, b, k) is right-handed.

    The slab and edge transforms hand back (perpendicular, parallel)
    pairs whose cross product points against the ray; swapping the pair
    and its components costs nothing and keeps the running frame a valid
    field frame.
    """
    a = np.asarray(basis[0], dtype=np.float64)
    b = np.asarray(basis[1], dtype=np.float64)
    k_out = np.asarray(k_out, dtype=np.float64)
    if float(np.cross(a, b) @ k_out) < 0.0:
        return np.array([comps[1], comps[0]], dtype=np.complex128), \
            (b, a, k_out)
    return comps, (a, b, k_out)


def _step_probability(scene, step, k_in, cfg, has_s, has_d):
    """Probability of the recorded interaction kind at replay geometry.

    Mirrors the masks used during generation: no diffraction after a
    diffuse bounce, neither diffuse nor a second edge after a
    diffraction, and no diffraction on primitives without a wedge.
    """
    material = scene.material_of(step.object_id)
    cos_i = abs(float(k_in @ step.normal))
    eta = material.complex_permittivity(cfg.frequency)
    coeff = slab_fresnel(cos_i, eta, material.thickness, cfg.wavelength)
    enabled = set(cfg.enabled)
    if has_s:
        enabled.discard(Interaction.DIFFRACTION)
    if has_d:
        enabled.discard(Interaction.DIFFRACTION)
        enabled.discard(Interaction.SCATTERING)
    if Interaction.DIFFRACTION in enabled and not scene.primitive_owns_wedge(
            step.object_id, step.primitive_id):
        enabled.discard(Interaction.DIFFRACTION)
    probs = interaction_probabilities(
        coeff, material.scattering, cfg.q_diffraction, enabled=enabled
    )
    return probs.as_tuple()[INTERACTION_ORDER.index(step.kind)]


def compute_path_fields(geometry, scene, cfg, tx_pattern, rx_pattern,
                        phase_rng=None):
    """Channel gain and delay of one refined path.

    Replays the polyline through the material operators: reflections and
    refractions multiply slab Jones matrices, a diffraction applies the
    edge transfer with two-segment spreading, and a diffuse bounce
    restarts the ray tube, dividing out the probability of the sampled
    prefix.  The returned gain carries the antenna patterns and
    spreading but not the carrier phase; the delay is the polyline
    length over the speed of light.  Returns
    (gain, delay, departure, arrival).
    """
    lam = cfg.wavelength
    verts = geometry.vertices
    segs = verts[1:] - verts[:-1]
    seg_len = np.linalg.norm(segs, axis=1)
    k_hats = segs / seg_len[:, None]
    delay = float(seg_len.sum()) / SPEED_OF_LIGHT

    start = pattern_to_gcs(tx_pattern, k_hats[0])
    comps = np.array([start.c_theta, start.c_phi], dtype=np.complex128)
    frame = start.frame

    gamma_prob = 1.0
    r_dist = 0.0
    s_dist = 0.0
    tube_omega = 4.0 * np.pi / cfg.num_samples
    diffracted = False
    has_s = False
    has_d = False

    for i, step in enumerate(geometry.steps):
        k_in = k_hats[i]
        k_out = k_hats[i + 1]
        r_dist += float(seg_len[i])
        material = scene.material_of(step.object_id)
        n_hat = np.asarray(step.normal, dtype=np.float64)
        if float(k_in @ n_hat) > 0.0:
            n_hat = -n_hat

        gamma_prob *= _step_probability(scene, step, k_in, cfg, has_s, has_d)

        if step.kind is Interaction.REFLECTION:
            k_r, matrix, _, b_out = specular_transform(
                k_in, n_hat, material, lam, in_basis=(frame[0], frame[1])
            )
            comps, frame = _right_handed(matrix @ comps, b_out, k_r)
        elif step.kind is Interaction.TRANSMISSION:
            _, matrix, _, b_out = refraction_transform(
                k_in, n_hat, material, lam, in_basis=(frame[0], frame[1])
            )
            comps, frame = _right_handed(matrix @ comps, b_out, k_in)
        elif step.kind is Interaction.DIFFRACTION:
            wedge = scene.wedges[step.wedge_index]
            mat0, matn = _wedge_materials(scene, wedge)
            remaining = float(seg_len[i + 1:].sum())
            matrix, b_in, b_out = utd_transfer(
                wedge, k_in, k_out, r_dist, remaining, lam, mat0, matn
            )
            convert = field_basis_change(b_in[0], b_in[1],
                                         frame[0], frame[1])
            comps, frame = _right_handed(
                matrix @ (convert @ comps), b_out, k_out
            )
            s_dist = r_dist
            r_dist = 0.0
            diffracted = True
            has_d = True
        else:
            jones = JonesField(complex(comps[0]), complex(comps[1]), frame)
            gamma = gamma_reflected(jones, k_in, n_hat, material, lam)
            cos_i = max(float(-(k_in @ n_hat)), 1e-12)
            patch = tube_omega * r_dist**2 / cos_i
            out = diffuse_transform(
                jones, k_in, k_out, n_hat, material, gamma, patch,
                rng=phase_rng,
            )
            comps = np.array([out.c_theta, out.c_phi]) / r_dist
            comps = comps / math.sqrt(gamma_prob)
            frame = out.frame
            gamma_prob = 1.0
            r_dist = 0.0
            tube_omega = 2.0 * np.pi
            has_s = True

    r_dist += float(seg_len[-1])
    arrival = k_hats[-1]
    rx_field = pattern_to_gcs(rx_pattern, -arrival)
    e_vec = comps[0] * frame[0] + comps[1] * frame[1]
    rx_vec = rx_field.c_theta * rx_field.frame[0] \
        + rx_field.c_phi * rx_field.frame[1]
    gain = (lam / (4.0 * np.pi)) * complex(e_vec @ rx_vec)
    if diffracted:
        gain /= math.sqrt(s_dist * r_dist * (s_dist + r_dist))
    else:
        gain /= r_dist
    return gain, delay, k_hats[0], arrival


def _wedge_materials(scene, wedge):
    owners0 = wedge.face0
    ownersn = wedge.facen or wedge.face0
    mat0 = scene.material_of(owners0[0][0])
    matn = scene.material_of(ownersn[0][0])
    return mat0, matn


def accumulate_doppler(geometry, scene, tx_velocity, rx_velocity, wavelength):
    """Doppler shift in Hz collected along one path.

    Each moving interaction vertex contributes the projection of its
    velocity onto the change of propagation direction; the endpoints add
    the usual radial terms.
    """
    verts = geometry.vertices
    segs = verts[1:] - verts[:-1]
    k_hats = segs / np.linalg.norm(segs, axis=1)[:, None]
    nu = float(np.asarray(tx_velocity) @ k_hats[0]) / wavelength
    nu -= float(np.asarray(rx_velocity) @ k_hats[-1]) / wavelength
    for i, step in enumerate(geometry.steps):
        v = scene.velocity_of(step.object_id)
        if np.any(v):
            nu += float(v @ (k_hats[i + 1] - k_hats[i])) / wavelength
    return nu


# ---------------------------------------------------------------------------
# top level


def _flatten_devices(devices, synthetic):
    flat = []
    for di, dev in enumerate(devices):
        if synthetic:
            flat.append((di, 0, dev.position))
        else:
            for ei, pos in enumerate(dev.element_positions()):
                flat.append((di, ei, pos))
    return flat


def compute_paths(scene, transmitters, receivers, cfg):
    """All propagation paths between the given devices.

    With synthetic arrays each device is traced from its reference
    position only and per-element phases are applied when assembling
    responses; otherwise every antenna element is traced individually.
    Paths are sorted by (receiver, transmitter, depth, chain hash,
    sample) so repeated runs with any worker count agree exactly.
    """
    transmitters = list(transmitters)
    receivers = list(receivers)
    if not transmitters or not receivers:
        raise ValueError("need at least one transmitter and one receiver")

    tx_flat = _flatten_devices(transmitters, cfg.synthetic_arrays)
    rx_flat = _flatten_devices(receivers, cfg.synthetic_arrays)
    targets = np.array([pos for _, _, pos in rx_flat])

    paths = []
    diagnostics = Counter()
    rejections = Counter()
    load_factor = 0.0
    for src_idx, (ti, te, tx_pos) in enumerate(tx_flat):
        generation = generate_candidates(
            scene, tx_pos, targets, cfg, source_id=src_idx
        )
        load_factor = max(load_factor,
                          generation.diagnostics["hash_load_factor"])
        for key, value in generation.diagnostics.items():
            if isinstance(value, (int, np.integer)):
                diagnostics[key] += value
        for record in generation.records:
            outcome = refine_candidate(record, scene)
            if isinstance(outcome, Rejection):
                rejections[outcome.reason] += 1
                continue
            ri, re, _ = rx_flat[record.target_id]
            tx_dev = transmitters[ti]
            rx_dev = receivers[ri]
            phase_rng = RngStream(
                cfg.seed, sample=max(record.sample_id, 0),
                depth=record.target_id,
                purpose=f"phase-{len(record.steps)}",
            ).generator()
            gain, delay, departure, arrival = compute_path_fields(
                outcome, scene, cfg, tx_dev.pattern, rx_dev.pattern,
                phase_rng=phase_rng,
            )
            doppler = accumulate_doppler(
                outcome, scene, tx_dev.velocity, rx_dev.velocity,
                cfg.wavelength,
            )
            paths.append(ValidPath(
                tx_index=ti, tx_element=te, rx_index=ri, rx_element=re,
                gain=gain, delay=delay, doppler=doppler,
                departure=departure, arrival=arrival,
                vertices=outcome.vertices, steps=outcome.steps,
                chain_hash=outcome.chain_hash,
                sample_id=outcome.sample_id,
            ))

    paths.sort(key=lambda p: (
        p.rx_index, p.rx_element, p.tx_index, p.tx_element,
        p.depth, p.chain_hash, p.sample_id,
    ))
    result = dict(diagnostics)
    result["hash_load_factor"] = load_factor
    result["refinement_rejections"] = dict(rejections)
    result["paths"] = len(paths)
    return PathSet(
        paths=paths, transmitters=transmitters, receivers=receivers,
        config=cfg, diagnostics=result,
    )


def frequency_response(path_set, frequencies, transmitter=0, receiver=0):
    """Channel matrix H[rx antenna, tx antenna, frequency] of one link.

    Sums path gains with their delay phase rotations; synthetic arrays
    expand each path with plane-wave steering phases at its departure
    and arrival directions.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=np.float64))
    cfg = path_set.config
    tx = path_set.transmitters[transmitter]
    rx = path_set.receivers[receiver]
    n_tx = len(tx.array.offsets)
    n_rx = len(rx.array.offsets)
    out = np.zeros((n_rx, n_tx, len(freqs)), dtype=np.complex128)

    for p in path_set.paths:
        if p.tx_index != transmitter or p.rx_index != receiver:
            continue
        spin = np.exp(-2j * np.pi * freqs * p.delay)
        if cfg.synthetic_arrays:
            u_tx = array_response(tx.array, p.departure, cfg.wavelength,
                                  incoming=False)
            u_rx = array_response(rx.array, p.arrival, cfg.wavelength,
                                  incoming=True)
            out += p.gain * u_rx[:, None, None] * u_tx[None, :, None] \
                * spin[None, None, :]
        else:
            out[p.rx_element, p.tx_element] += p.gain * spin
    return out


def baseband_gains(path_set, transmitter=0, receiver=0):
    """Per-path complex gains at the carrier plus their delays.

    Folds the carrier phase rotation into each gain; useful for building
    discrete channel impulse responses.
    """
    cfg = path_set.config
    gains, delays = [], []
    for p in path_set.paths:
        if p.tx_index != transmitter or p.rx_index != receiver:
            continue
        gains.append(p.gain * np.exp(-2j * np.pi * cfg.frequency * p.delay))
        delays.append(p.delay)
    return np.array(gains, dtype=np.complex128), np.array(delays)
