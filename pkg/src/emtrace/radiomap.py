"""Monte Carlo power maps over a planar measurement grid.

A lattice of ray tubes is shot from each source; whenever a tube segment
crosses the grid plane inside the rectangle, the tube's energy is
deposited into the crossed cell with a weight that makes the cell
average an unbiased estimate of the local path gain.  The unobstructed
direct contribution is integrated analytically at each cell center, and
edges near the source add a separately sampled first-order diffraction
term re-parametrized over the plane.
"""

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .em import (
    SPEED_OF_LIGHT,
    array_response,
    deterministic_perpendicular,
    make_pattern,
)
from .errors import NoIntersection
from .geometry import EPS_RAY
from .materials import (
    EPS_COT_POLE,
    EPS_EDGE_GRAZE,
    EPS_FRAME,
    fresnel_vacuum,
    scattering_pattern_eval,
    slab_fresnel,
    transition_function,
)
from .paths import (
    RadioDevice,
    _MaterialPack,
    _R,
    _S,
    _T,
    _interaction_rows,
    _wedge_materials,
)
from .sampling import (
    INTERACTION_ORDER,
    Interaction,
    RngStream,
    _perpendicular_batch,
    fibonacci_directions,
)

# deposits are accumulated per fixed-size sample chunk and merged in
# chunk order, so the map is bitwise identical for every worker count
CHUNK_SAMPLES = 1 << 19

PLANE_TOLERANCE = 1e-6
PROBE_POINTS = 8


# ---------------------------------------------------------------------------
# measurement grid


@dataclass(eq=False)
class MeasurementGrid:
    """Planar rectangle of equal cells accumulating received power.

    center is the rectangle midpoint, u_hat and v_hat its orthonormal
    in-plane axes.  cell_size = (w, h) is one cell's extent along each
    axis and shape = (nx, ny) the cell count, so the rectangle spans
    nx*w by ny*h around the center.  Cell (i, j) counts from the corner
    at center - (nx*w/2) u_hat - (ny*h/2) v_hat; map arrays are indexed
    [j, i].
    """

    center: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    cell_size: tuple
    shape: tuple

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.u_hat = np.asarray(self.u_hat, dtype=np.float64)
        self.v_hat = np.asarray(self.v_hat, dtype=np.float64)
        for axis in (self.u_hat, self.v_hat):
            if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                raise ValueError("grid axes must be unit vectors")
        if abs(float(self.u_hat @ self.v_hat)) > 1e-9:
            raise ValueError("grid axes must be orthogonal")
        w, h = self.cell_size
        nx, ny = self.shape
        if w <= 0.0 or h <= 0.0:
            raise ValueError("cell size must be positive")
        if nx < 1 or ny < 1:
            raise ValueError("grid shape must be positive")
        self.cell_size = (float(w), float(h))
        self.shape = (int(nx), int(ny))

    @classmethod
    def horizontal(cls, center, extent, cell_size):
        """Axis-aligned grid in a z = const plane covering extent (x, y)."""
        w, h = cell_size
        nx = max(1, int(round(extent[0] / w)))
        ny = max(1, int(round(extent[1] / h)))
        return cls(center, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                   (float(w), float(h)), (nx, ny))

    @property
    def normal(self):
        return np.cross(self.u_hat, self.v_hat)

    @property
    def cell_area(self):
        return self.cell_size[0] * self.cell_size[1]

    @property
    def corner(self):
        nx, ny = self.shape
        w, h = self.cell_size
        return (self.center
                - (0.5 * nx * w) * self.u_hat
                - (0.5 * ny * h) * self.v_hat)

    def cell_centers(self):
        """Midpoints of every cell, shape (ny, nx, 3)."""
        nx, ny = self.shape
        w, h = self.cell_size
        u = (np.arange(nx) + 0.5) * w
        v = (np.arange(ny) + 0.5) * h
        return (self.corner
                + u[None, :, None] * self.u_hat
                + v[:, None, None] * self.v_hat)

    def cell_lookup(self, point):
        """Cell index (i, j) containing a point, or None.

        The point must lie on the grid plane within a small tolerance
        and inside the rectangle; points exactly on an interior cell
        boundary belong to the higher-index cell.
        """
        p = np.asarray(point, dtype=np.float64)
        rel = p - self.corner
        if abs(float(rel @ self.normal)) >= PLANE_TOLERANCE:
            return None
        i = math.floor(float(rel @ self.u_hat) / self.cell_size[0])
        j = math.floor(float(rel @ self.v_hat) / self.cell_size[1])
        nx, ny = self.shape
        if 0 <= i < nx and 0 <= j < ny:
            return (i, j)
        return None


def _cell_rows(grid, points):
    """Vectorized cell indices of points already on the grid plane."""
    rel = points - grid.corner
    iu = np.floor(rel @ grid.u_hat / grid.cell_size[0]).astype(np.int64)
    iv = np.floor(rel @ grid.v_hat / grid.cell_size[1]).astype(np.int64)
    nx, ny = grid.shape
    ok = (iu >= 0) & (iu < nx) & (iv >= 0) & (iv < ny)
    return iu, iv, ok


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RadioMapConfig:
    """Knobs of the map estimators.

    rr_depth switches on Russian roulette for rays that have already
    undergone that many interactions; survivors are reweighted so the
    estimate stays unbiased.  gain_threshold kills rays whose field
    energy has dropped below it (from the same depth), trading a bounded
    bias for speed.  wedge_radius bounds the edge collection around each
    source and defaults to the scene diameter.
    """

    frequency: float = 3.5e9
    num_samples: int = 10_000_000
    wedge_samples: int = 100_000
    max_depth: int = 3
    enabled: frozenset = frozenset(Interaction)
    seed: int = 0
    workers: int = 1
    rr_depth: int = None
    rr_max: float = 0.95
    gain_threshold: float = 0.0
    wedge_radius: float = None

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise ValueError("frequency must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.wedge_samples < 1:
            raise ValueError("wedge_samples must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if not 0.0 < self.rr_max <= 1.0:
            raise ValueError("rr_max must lie in (0, 1]")
        if self.rr_depth is not None and not 0 <= self.rr_depth <= self.max_depth:
            raise ValueError("rr_depth must lie in [0, max_depth]")
        if self.gain_threshold < 0.0:
            raise ValueError("gain_threshold must be >= 0")
        if self.wedge_radius is not None and self.wedge_radius <= 0.0:
            raise ValueError("wedge_radius must be positive")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.frequency


def russian_roulette_probability(distance, field_energy, p_max):
    """Survival probability of a ray at a hit: min(r^2 |E|^2, p_max).

    distance is measured from the current tube origin and field_energy
    is the squared field magnitude there, so the product is the
    distance-free tube energy.
    """
    return min(distance * distance * field_energy, p_max)


def precoding_scalar(geometry, precoder, direction, wavelength):
    """Synthetic-array weight of one departure direction.

    Inner product of the array response with the precoding vector; the
    map deposits scale with its squared magnitude.
    """
    response = array_response(geometry, direction, wavelength, incoming=False)
    u_p = np.asarray(precoder, dtype=np.complex128)
    if u_p.shape != response.shape:
        raise ValueError("precoder length must match the array")
    return complex(response @ u_p)


def _resolve_precoder(geometry, precoder):
    if geometry is None:
        return None
    m = len(geometry.offsets)
    if precoder is None:
        return np.full(m, 1.0 / math.sqrt(m), dtype=np.complex128)
    u_p = np.asarray(precoder, dtype=np.complex128)
    if u_p.shape != (m,):
        raise ValueError("precoder length must match the array")
    return u_p


def _alpha_rows(geometry, precoder, directions, wavelength):
    """Squared precoding weight per departure direction row."""
    if geometry is None:
        return np.ones(len(directions))
    phase = (2.0 * np.pi / wavelength) * (directions @ geometry.offsets.T)
    alpha = np.exp(1j * phase) @ precoder
    return np.abs(alpha) ** 2


# ---------------------------------------------------------------------------
# field helpers shared by both estimators


def _pattern_fields(pattern, directions):
    """World-frame transverse field of each departure direction row."""
    rot = pattern.rotation()
    local = directions @ rot
    theta = np.arccos(np.clip(local[:, 2], -1.0, 1.0))
    phi = np.arctan2(local[:, 1], local[:, 0])
    c_th, c_ph = pattern.evaluator(theta, phi)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    th_hat = np.stack([ct * cp, ct * sp, -st], axis=1) @ rot.T
    ph_hat = np.stack([-sp, cp, np.zeros_like(sp)], axis=1) @ rot.T
    return c_th[:, None] * th_hat + c_ph[:, None] * ph_hat


def _transverse_rows(directions):
    """Zenith/azimuth unit vectors of each direction row."""
    theta = np.arccos(np.clip(directions[:, 2], -1.0, 1.0))
    phi = np.arctan2(directions[:, 1], directions[:, 0])
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    th_hat = np.stack([ct * cp, ct * sp, -st], axis=1)
    ph_hat = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
    return th_hat, ph_hat


def _incidence_rows(k_i, n_hat):
    """Perpendicular/parallel frames of row-aligned incident rays."""
    cross = np.cross(k_i, n_hat)
    norm = np.linalg.norm(cross, axis=1)
    bad = norm < EPS_FRAME
    if np.any(bad):
        cross[bad] = [deterministic_perpendicular(k) for k in k_i[bad]]
        norm[bad] = 1.0
    e_perp = cross / norm[:, None]
    return e_perp, np.cross(e_perp, k_i)


def _slab_rows(pack, rows, cos_theta):
    """Slab coefficients per hit row, grouped by material."""
    n = len(rows)
    out = [np.zeros(n, dtype=np.complex128) for _ in range(4)]
    for r in np.unique(rows):
        mask = rows == r
        coeff = slab_fresnel(cos_theta[mask], pack.eta[r],
                             pack.thickness[r], pack.wavelength)
        out[0][mask], out[1][mask] = coeff.r_perp, coeff.r_par
        out[2][mask], out[3][mask] = coeff.t_perp, coeff.t_par
    return out


class _SurfaceTables:
    """Per-material-row scattering parameters the bounce loop indexes."""

    def __init__(self, scene):
        mats = scene._object_materials
        self.xpd = np.array([m.xpd_kx for m in mats])
        self.random_phases = np.array([m.random_phases for m in mats],
                                      dtype=bool)
        self.patterns = list(m.pattern for m in mats)
        self.spec_amp = np.array([m.specular_factor for m in mats])


def _pattern_rows(tables, rows, k_i, k_s, n_hat):
    """Scattering pattern density per row, grouped by material."""
    f_s = np.zeros(len(rows))
    for r in np.unique(rows):
        mask = rows == r
        f_s[mask] = scattering_pattern_eval(
            tables.patterns[r], k_i[mask], k_s[mask], n_hat[mask])
    return f_s


# ---------------------------------------------------------------------------
# bounce estimator


def _chunk_stream(cfg, chunk_index, segment, purpose):
    return RngStream(cfg.seed, sample=chunk_index, depth=segment,
                     purpose=purpose).generator()


def _map_chunk(scene, pack, tables, source, grid, cfg, chunk_index,
               directions, weight0, pattern):
    """Trace one chunk of tubes and accumulate its grid deposits.

    Per-round random draws are generated for the full chunk and indexed
    by each ray's position in it, so the outcome depends only on the
    chunk index, never on how chunks are distributed over workers.
    """
    accel = scene.accel
    n0 = len(directions)
    nx, ny = grid.shape
    n_hat = grid.normal
    plane_off = float(n_hat @ grid.center)
    lam = cfg.wavelength
    scale = (lam / (4.0 * np.pi)) ** 2 / grid.cell_area
    allowed = np.array([
        kind in cfg.enabled and kind is not Interaction.DIFFRACTION
        for kind in INTERACTION_ORDER
    ])
    any_random_phase = bool(np.any(tables.random_phases))
    cull_from = cfg.rr_depth if cfg.rr_depth is not None else 0

    values = np.zeros((ny, nx))
    counters = Counter()
    state = {
        "origin": np.broadcast_to(source, (n0, 3)).astype(np.float64).copy(),
        "direction": directions.astype(np.float64).copy(),
        "field": _pattern_fields(pattern, directions),
        "r_dist": np.zeros(n0),
        "omega": np.full(n0, 4.0 * np.pi / cfg.num_samples),
        "weight": np.asarray(weight0, dtype=np.float64).copy(),
        "slot": np.arange(n0),
    }

    def select(keep):
        for key in state:
            state[key] = state[key][keep]

    for seg in range(cfg.max_depth + 1):
        if len(state["slot"]) == 0:
            break
        t_hit, tri, _, _ = accel.trace_batch(state["origin"],
                                             state["direction"])

        # the direct segment is integrated analytically; every later
        # segment deposits where it crosses the plane before its hit
        # (escaped rays have t_hit = inf and still deposit)
        if seg >= 1:
            denom = state["direction"] @ n_hat
            s_plane = np.full(len(denom), -1.0)
            towards = np.abs(denom) > 1e-12
            s_plane[towards] = (
                plane_off - state["origin"][towards] @ n_hat
            ) / denom[towards]
            crossing = (s_plane > EPS_RAY) & (s_plane < t_hit)
            rows = np.nonzero(crossing)[0]
            if len(rows):
                pts = state["origin"][rows] \
                    + s_plane[rows, None] * state["direction"][rows]
                iu, iv, ok = _cell_rows(grid, pts)
                rows, iu, iv = rows[ok], iu[ok], iv[ok]
            if len(rows):
                e_sq = np.sum(np.abs(state["field"][rows]) ** 2, axis=1)
                val = scale * e_sq * state["omega"][rows] \
                    / np.abs(denom[rows]) * state["weight"][rows]
                np.add.at(values, (iv, iu), val)
                counters["deposits"] += len(rows)

        hit = tri >= 0
        counters["escaped"] += int(np.count_nonzero(~hit))
        if seg == cfg.max_depth:
            break
        select(hit)
        tri, t_hit = tri[hit], t_hit[hit]
        if len(state["slot"]) == 0:
            break
        r_hit = state["r_dist"] + t_hit

        # depth culling: a deterministic energy floor, then roulette
        # with fair reweighting of the survivors
        if seg >= cull_from and (cfg.gain_threshold > 0.0
                                 or cfg.rr_depth is not None):
            e_sq = np.sum(np.abs(state["field"]) ** 2, axis=1)
            keep = np.ones(len(e_sq), dtype=bool)
            if cfg.gain_threshold > 0.0:
                keep &= e_sq >= cfg.gain_threshold * r_hit**2
                counters["threshold_killed"] += int(np.count_nonzero(~keep))
            if cfg.rr_depth is not None and seg >= cfg.rr_depth:
                survival = np.minimum(e_sq, cfg.rr_max)
                u_rr = _chunk_stream(cfg, chunk_index, seg,
                                     "map-roulette").random(n0)
                u_rr = u_rr[state["slot"]]
                lost = keep & (u_rr >= survival)
                counters["roulette_killed"] += int(np.count_nonzero(lost))
                keep &= u_rr < survival
                state["weight"][keep] /= survival[keep]
            if not np.all(keep):
                select(keep)
                tri, t_hit, r_hit = tri[keep], t_hit[keep], r_hit[keep]
                if len(state["slot"]) == 0:
                    continue

        points = state["origin"] + t_hit[:, None] * state["direction"]
        normals = accel.tri_normal[tri]
        facing = np.sum(state["direction"] * normals, axis=1)
        normals = np.where((facing > 0.0)[:, None], -normals, normals)
        cos_i = np.abs(np.sum(state["direction"] * normals, axis=1))
        rows = scene.tri_material_row[tri]

        r_sq, t_sq = pack.coefficient_energy(rows, cos_i)
        allow = np.broadcast_to(allowed, (len(rows), 4)).copy()
        probs, live = _interaction_rows(
            r_sq, t_sq, pack.scattering[rows], 0.0, allow)
        counters["terminated"] += int(np.count_nonzero(~live))
        if not np.all(live):
            select(live)
            points, normals, cos_i, rows, probs, r_hit = (
                a[live] for a in (points, normals, cos_i, rows, probs, r_hit))
        if len(state["slot"]) == 0:
            continue

        u = _chunk_stream(cfg, chunk_index, seg, "map-interaction").random(n0)
        u = u[state["slot"]]
        cum = np.cumsum(probs, axis=1)
        code = np.minimum((u[:, None] >= cum).sum(axis=1), 3).astype(np.uint8)
        state["weight"] /= probs[np.arange(len(code)), code]

        direction = state["direction"]
        field = state["field"]
        e_perp, e_par_i = _incidence_rows(direction, normals)
        rp, rl, tp, tl = _slab_rows(pack, rows, cos_i)
        c_perp = np.sum(field * e_perp, axis=1)
        c_par = np.sum(field * e_par_i, axis=1)
        new_dir = direction.copy()

        r_rows = np.nonzero(code == _R)[0]
        if len(r_rows):
            d = direction[r_rows]
            n = normals[r_rows]
            k_r = d - 2.0 * np.sum(d * n, axis=1)[:, None] * n
            e_par_r = np.cross(e_perp[r_rows], k_r)
            amp = tables.spec_amp[rows[r_rows]]
            field[r_rows] = amp[:, None] * (
                (rp[r_rows] * c_perp[r_rows])[:, None] * e_perp[r_rows]
                + (rl[r_rows] * c_par[r_rows])[:, None] * e_par_r
            )
            new_dir[r_rows] = k_r

        t_rows = np.nonzero(code == _T)[0]
        if len(t_rows):
            field[t_rows] = (
                (tp[t_rows] * c_perp[t_rows])[:, None] * e_perp[t_rows]
                + (tl[t_rows] * c_par[t_rows])[:, None] * e_par_i[t_rows]
            )

        state["r_dist"] = r_hit

        s_rows = np.nonzero(code == _S)[0]
        if len(s_rows):
            u_sp = _chunk_stream(cfg, chunk_index, seg,
                                 "map-respawn").random((n0, 2))
            u_sp = u_sp[state["slot"][s_rows]]
            k_i = direction[s_rows]
            n = normals[s_rows]
            cos_t = u_sp[:, 0]
            azim = 2.0 * np.pi * u_sp[:, 1]
            sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
            t1 = _perpendicular_batch(n)
            t2 = np.cross(n, t1)
            k_s = ((sin_t * np.cos(azim))[:, None] * t1
                   + (sin_t * np.sin(azim))[:, None] * t2
                   + cos_t[:, None] * n)

            g_num = np.sqrt(np.abs(rp[s_rows] * c_perp[s_rows]) ** 2
                            + np.abs(rl[s_rows] * c_par[s_rows]) ** 2)
            g_den = np.sqrt(np.abs(c_perp[s_rows]) ** 2
                            + np.abs(c_par[s_rows]) ** 2)
            gamma = np.where(g_den > 0.0, g_num / np.where(g_den > 0.0,
                                                           g_den, 1.0), 0.0)
            f_s = _pattern_rows(tables, rows[s_rows], k_i, k_s, n)
            cos_s = cos_i[s_rows]
            patch = state["omega"][s_rows] * r_hit[s_rows] ** 2 \
                / np.maximum(cos_s, 1e-12)
            amplitude = pack.scattering[rows[s_rows]] * gamma \
                * np.sqrt(f_s * cos_s * patch)

            th_i, ph_i = _transverse_rows(k_i)
            ci0 = np.sum(field[s_rows] * th_i, axis=1)
            ci1 = np.sum(field[s_rows] * ph_i, axis=1)
            kx = tables.xpd[rows[s_rows]]
            chi1 = np.zeros(len(s_rows))
            chi2 = np.zeros(len(s_rows))
            rnd = tables.random_phases[rows[s_rows]]
            if any_random_phase and np.any(rnd):
                u_ph = _chunk_stream(cfg, chunk_index, seg,
                                     "map-phase").random((n0, 2))
                u_ph = u_ph[state["slot"][s_rows]]
                chi1[rnd] = 2.0 * np.pi * u_ph[rnd, 0]
                chi2[rnd] = 2.0 * np.pi * u_ph[rnd, 1]
            sq = np.sqrt(1.0 - kx)
            sk = np.sqrt(kx)
            co0 = amplitude * np.exp(1j * chi1) * (sq * ci0 - sk * ci1)
            co1 = amplitude * np.exp(1j * chi2) * (sk * ci0 + sq * ci1)
            th_s, ph_s = _transverse_rows(k_s)
            out = co0[:, None] * th_s + co1[:, None] * ph_s
            # the closed tube's spreading is paid here; the respawned
            # tube starts fresh over the hemisphere
            field[s_rows] = out / r_hit[s_rows, None]
            new_dir[s_rows] = k_s
            state["r_dist"][s_rows] = 0.0
            state["omega"][s_rows] = 2.0 * np.pi
            counters["respawns"] += len(s_rows)

        state["origin"] = points
        state["direction"] = new_dir

    return values, counters


def _direct_cells(scene, source, grid, cfg, pattern, geometry, precoder):
    """Analytic unobstructed direct-path gain at each cell center."""
    centers = grid.cell_centers().reshape(-1, 3)
    diff = centers - source
    dist = np.linalg.norm(diff, axis=1)
    vals = np.zeros(len(centers))
    ok = dist > 1e-9
    if np.any(ok):
        dirs = diff[ok] / dist[ok, None]
        e_sq = np.sum(np.abs(_pattern_fields(pattern, dirs)) ** 2, axis=1)
        a_sq = _alpha_rows(geometry, precoder, dirs, cfg.wavelength)
        gain = (cfg.wavelength / (4.0 * np.pi * dist[ok])) ** 2 * e_sq * a_sq
        blocked = scene.accel.occluded_batch(
            np.broadcast_to(source, dirs.shape), centers[ok])
        gain[blocked] = 0.0
        vals[ok] = gain
    nx, ny = grid.shape
    return vals.reshape(ny, nx)


def compute_radio_map_sbr(scene, source, grid, cfg, *, pattern=None,
                          array=None, precoder=None):
    """Bounce-traced power map of one source, direct term included.

    Returns (values, diagnostics).  values[j, i] estimates the average
    path gain over cell (i, j) for a polarization-matched isotropic
    probe antenna; the direct contribution is evaluated analytically at
    the cell center.  Diffraction never occurs inside the bounce loop;
    edges are handled by the separate estimator.
    """
    source = np.asarray(source, dtype=np.float64)
    if pattern is None:
        pattern = make_pattern("isotropic")
    precoder = _resolve_precoder(array, precoder)
    pack = _MaterialPack(scene, cfg.frequency)
    tables = _SurfaceTables(scene)
    lam = cfg.wavelength

    directions = fibonacci_directions(cfg.num_samples)
    spans = [
        (ci, lo, min(lo + CHUNK_SAMPLES, cfg.num_samples))
        for ci, lo in enumerate(range(0, cfg.num_samples, CHUNK_SAMPLES))
    ]

    def run(span):
        ci, lo, hi = span
        dirs = directions[lo:hi]
        weight0 = _alpha_rows(array, precoder, dirs, lam)
        return _map_chunk(scene, pack, tables, source, grid, cfg, ci,
                          dirs, weight0, pattern)

    if cfg.workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, spans))
    else:
        results = [run(span) for span in spans]

    nx, ny = grid.shape
    values = np.zeros((ny, nx))
    diag = Counter(samples=cfg.num_samples, chunks=len(spans))
    for vals, counters in results:
        values += vals
        diag.update(counters)

    direct = _direct_cells(scene, source, grid, cfg, pattern, array, precoder)
    diag["direct_visible"] = int(np.count_nonzero(direct > 0.0))
    values += direct
    return values, dict(diag)


# ---------------------------------------------------------------------------
# edge estimator


def _scene_diameter(scene):
    bmin, bmax = scene.accel.bounds
    return float(np.linalg.norm(bmax - bmin))


def collect_wedges_near_source(scene, source, radius):
    """Wedge indices within radius of the source and not fully hidden.

    Distance is from the source to the edge segment.  Visibility is
    probed at eight points spread along the edge; one clear probe keeps
    the wedge.
    """
    source = np.asarray(source, dtype=np.float64)
    if not scene.wedges:
        return []
    origin = scene.wedge_origin
    e_hat = scene.wedge_ehat
    length = scene.wedge_length
    x = np.clip(np.sum((source - origin) * e_hat, axis=1), 0.0, length)
    foot = origin + x[:, None] * e_hat
    near = np.linalg.norm(source - foot, axis=1) <= radius
    idx = np.nonzero(near)[0]
    if len(idx) == 0:
        return []
    frac = (np.arange(PROBE_POINTS) + 0.5) / PROBE_POINTS
    probes = origin[idx, None, :] \
        + (frac[None, :, None] * length[idx, None, None]) * e_hat[idx, None, :]
    flat = probes.reshape(-1, 3)
    blocked = scene.accel.occluded_batch(
        np.broadcast_to(source, flat.shape), flat
    ).reshape(len(idx), PROBE_POINTS)
    return [int(i) for i in idx[~np.all(blocked, axis=1)]]


def _cone_points(wedge, source, xs, phis):
    """Edge point and diffracted direction of each (offset, azimuth) row.

    The polar angle of the outgoing cone keeps the sign of the incident
    direction along the edge, so rays leave on the correct half of the
    cone on both sides of the source's projection.
    """
    v = wedge.origin[None, :] + xs[:, None] * wedge.e_hat[None, :]
    d = v - source
    s_in = np.linalg.norm(d, axis=1)
    k_i = d / s_in[:, None]
    cos_b = d @ wedge.e_hat / s_in
    sin_b = np.sqrt(np.maximum(0.0, 1.0 - cos_b**2))
    k_s = ((sin_b * np.cos(phis))[:, None] * wedge.t0_hat
           + (sin_b * np.sin(phis))[:, None] * wedge.n0_hat
           + cos_b[:, None] * wedge.e_hat)
    return v, s_in, k_i, k_s, sin_b


def diffraction_weighting_factor(wedge, source, x, phi, plane_point,
                                 plane_normal):
    """Area stretch of the edge-to-plane map at one sample.

    Norm of the cross product of the partial derivatives of the plane
    crossing with respect to the edge offset and the cone azimuth, by
    central differences; it converts uniform (offset, azimuth) sampling
    density into area density on the plane.  Raises NoIntersection when
    the diffracted ray runs parallel to the plane.
    """
    source = np.asarray(source, dtype=np.float64)
    n_hat = np.asarray(plane_normal, dtype=np.float64)
    plane_off = float(n_hat @ np.asarray(plane_point, dtype=np.float64))
    h_x = 1e-4 * max(1.0, wedge.length)
    h_p = 1e-4

    def crossing(xv, pv):
        v, _, _, k_s, _ = _cone_points(wedge, source,
                                       np.array([xv]), np.array([pv]))
        denom = float(k_s[0] @ n_hat)
        if abs(denom) < 1e-9:
            raise NoIntersection("diffracted ray parallel to the map plane")
        gamma = (plane_off - float(v[0] @ n_hat)) / denom
        return v[0] + gamma * k_s[0]

    d_dx = (crossing(x + h_x, phi) - crossing(x - h_x, phi)) / (2.0 * h_x)
    d_dp = (crossing(x, phi + h_p) - crossing(x, phi - h_p)) / (2.0 * h_p)
    return float(np.linalg.norm(np.cross(d_dx, d_dp)))


def _weighting_rows(wedge, source, xs, phis, plane_off, n_hat):
    """Vectorized twin of diffraction_weighting_factor.

    Returns (factor, ok); rows whose difference stencil meets a ray
    parallel to the plane come back not ok.
    """
    h_x = 1e-4 * max(1.0, wedge.length)
    h_p = 1e-4

    def crossing(xv, pv):
        v, _, _, k_s, _ = _cone_points(wedge, source, xv, pv)
        denom = k_s @ n_hat
        bad = np.abs(denom) < 1e-9
        gamma = (plane_off - v @ n_hat) / np.where(bad, 1.0, denom)
        return v + gamma[:, None] * k_s, bad

    pa, b1 = crossing(xs + h_x, phis)
    pb, b2 = crossing(xs - h_x, phis)
    pc, b3 = crossing(xs, phis + h_p)
    pd, b4 = crossing(xs, phis - h_p)
    factor = np.linalg.norm(
        np.cross((pa - pb) / (2.0 * h_x), (pc - pd) / (2.0 * h_p)), axis=1)
    return factor, ~(b1 | b2 | b3 | b4)


def _cot_rows(big_angle, n_open, k_wave, l_rows, sign):
    """Vectorized boundary-aware cotangent-transition product."""
    n_round = np.round((big_angle + sign * np.pi) / (2.0 * n_open * np.pi))
    eps = big_angle - (2.0 * n_open * np.pi * n_round - sign * np.pi)
    out = np.zeros(len(big_angle), dtype=np.complex128)
    pole = np.abs(eps) < EPS_COT_POLE
    regular = ~pole
    if np.any(regular):
        cot = 1.0 / np.tan((np.pi + sign * big_angle[regular])
                           / (2.0 * n_open))
        a_val = 2.0 * np.cos(
            (2.0 * n_open * np.pi * n_round[regular] - big_angle[regular])
            / 2.0) ** 2
        out[regular] = cot * transition_function(
            k_wave * l_rows[regular] * a_val)
    if np.any(pole):
        sgn = np.where(eps[pole] >= 0.0, 1.0, -1.0)
        kl = k_wave * l_rows[pole]
        out[pole] = sign * (
            n_open * np.exp(1j * np.pi / 4.0)
            * (np.sqrt(2.0 * np.pi * kl) * sgn
               - 2.0 * kl * eps[pole] * np.exp(1j * np.pi / 4.0))
        )
    return out


def _utd_rows(wedge, s_i, s_o, dist_in, dist_out, wavelength, eta_0, eta_n):
    """Row-parallel edge transfer matching the scalar operator.

    Returns (matrix, phi_hat_in, beta_hat_in, valid); rows grazing the
    edge come back invalid and must be masked by the caller.
    """
    e_hat = wedge.e_hat
    n_open = wedge.n
    e_rows = np.broadcast_to(e_hat, s_i.shape)

    cos_beta = s_i @ e_hat
    sin_beta0 = np.sqrt(np.maximum(0.0, 1.0 - cos_beta**2))
    valid = sin_beta0 >= EPS_EDGE_GRAZE

    cross_i = np.cross(s_i, e_rows)
    norm_i = np.linalg.norm(cross_i, axis=1)
    phi_hat_in = cross_i / np.where(norm_i > 0.0, norm_i, 1.0)[:, None]
    beta_hat_in = np.cross(phi_hat_in, s_i)
    cross_o = np.cross(-s_o, e_rows)
    norm_o = np.linalg.norm(cross_o, axis=1)
    valid &= norm_o >= EPS_EDGE_GRAZE
    phi_hat_out = cross_o / np.where(norm_o > 0.0, norm_o, 1.0)[:, None]
    beta_hat_out = np.cross(phi_hat_out, s_o)

    t0 = wedge.t0_hat
    n0 = wedge.n0_hat
    s_i_t = s_i - cos_beta[:, None] * e_rows
    nt = np.linalg.norm(s_i_t, axis=1)
    s_i_t = s_i_t / np.where(nt > 0.0, nt, 1.0)[:, None]
    s_o_t = s_o - (s_o @ e_hat)[:, None] * e_rows
    nt = np.linalg.norm(s_o_t, axis=1)
    s_o_t = s_o_t / np.where(nt > 0.0, nt, 1.0)[:, None]

    sgn_i = np.where(-(s_i_t @ n0) >= 0.0, 1.0, -1.0)
    phi_in = np.pi - (
        np.pi - np.arccos(np.clip(-(s_i_t @ t0), -1.0, 1.0))) * sgn_i
    sgn_o = np.where(s_o_t @ n0 >= 0.0, 1.0, -1.0)
    phi_out = np.pi - (
        np.pi - np.arccos(np.clip(s_o_t @ t0, -1.0, 1.0))) * sgn_o

    k_wave = 2.0 * np.pi / wavelength
    l_param = dist_in * dist_out / (dist_in + dist_out) * sin_beta0**2
    sin_safe = np.where(valid, sin_beta0, 1.0)
    prefactor = -np.exp(-1j * np.pi / 4.0) / (
        2.0 * n_open * np.sqrt(2.0 * np.pi * k_wave) * sin_safe)
    diff = phi_out - phi_in
    summ = phi_out + phi_in
    d1 = prefactor * _cot_rows(diff, n_open, k_wave, l_param, +1.0)
    d2 = prefactor * _cot_rows(diff, n_open, k_wave, l_param, -1.0)
    d3 = prefactor * _cot_rows(summ, n_open, k_wave, l_param, +1.0)
    d4 = prefactor * _cot_rows(summ, n_open, k_wave, l_param, -1.0)

    def dots(a, b):
        return np.sum(a * b, axis=1)

    cos_r0 = np.abs(np.sin(phi_in))
    cos_rn = np.abs(np.sin(n_open * np.pi - phi_out))
    refl = []
    for n_face, cos_r, eta in ((n0, cos_r0, eta_0),
                               (wedge.nn_hat, cos_rn, eta_n)):
        e_i_perp, _ = _incidence_rows(s_i, np.broadcast_to(n_face, s_i.shape))
        e_i_par = np.cross(e_i_perp, s_i)
        e_r_par = np.cross(e_i_perp, s_o)
        coeff = fresnel_vacuum(cos_r, eta)
        w_in = np.stack([
            np.stack([dots(e_i_perp, phi_hat_in),
                      dots(e_i_perp, beta_hat_in)], axis=1),
            np.stack([dots(e_i_par, phi_hat_in),
                      dots(e_i_par, beta_hat_in)], axis=1),
        ], axis=1)
        w_out = np.stack([
            np.stack([dots(phi_hat_out, e_i_perp),
                      dots(phi_hat_out, e_r_par)], axis=1),
            np.stack([dots(beta_hat_out, e_i_perp),
                      dots(beta_hat_out, e_r_par)], axis=1),
        ], axis=1)
        coeffs = np.stack([np.asarray(coeff.r_perp),
                           np.asarray(coeff.r_par)], axis=1)
        refl.append(np.einsum("nij,njk->nik",
                              w_out * coeffs[:, None, :], w_in))
    refl_0, refl_n = refl

    eye = np.eye(2, dtype=np.complex128)
    matrix = -(
        (d1 + d2)[:, None, None] * eye
        - d3[:, None, None] * refl_n
        - d4[:, None, None] * refl_0
    )
    return matrix, phi_hat_in, beta_hat_in, valid


def compute_radio_map_diffraction(scene, source, grid, wedges, cfg, *,
                                  pattern=None, array=None, precoder=None):
    """Edge-diffracted power map of one source over the listed wedges.

    Each wedge is sampled uniformly in edge offset and cone azimuth, the
    diffracted ray is intersected with the grid plane, and the deposit
    is weighted by the local area stretch of that parametrization.
    Wedge results are merged in list order regardless of worker count.
    """
    source = np.asarray(source, dtype=np.float64)
    if pattern is None:
        pattern = make_pattern("isotropic")
    precoder = _resolve_precoder(array, precoder)
    lam = cfg.wavelength
    n_hat = grid.normal
    plane_off = float(n_hat @ grid.center)
    nx, ny = grid.shape
    scale = (lam / (4.0 * np.pi)) ** 2 / grid.cell_area

    def run(wedge_index):
        w = scene.wedges[wedge_index]
        mat0, matn = _wedge_materials(scene, w)
        eta0 = mat0.complex_permittivity(cfg.frequency)
        etan = matn.complex_permittivity(cfg.frequency)
        vals = np.zeros((ny, nx))
        counters = Counter()
        norm = w.length * w.n * np.pi / cfg.wedge_samples
        for block, lo in enumerate(range(0, cfg.wedge_samples,
                                         CHUNK_SAMPLES)):
            nb = min(CHUNK_SAMPLES, cfg.wedge_samples - lo)
            u = RngStream(cfg.seed, sample=wedge_index, depth=block,
                          purpose="map-wedge").generator().random((nb, 2))
            xs = u[:, 0] * w.length
            phis = u[:, 1] * w.n * np.pi
            v, s_in, k_i, k_s, sin_b = _cone_points(w, source, xs, phis)
            counters["cone_samples"] += nb

            keep = sin_b >= EPS_EDGE_GRAZE
            denom = k_s @ n_hat
            towards = np.abs(denom) > 1e-9
            keep &= towards
            gamma = (plane_off - v @ n_hat) / np.where(towards, denom, 1.0)
            keep &= gamma > EPS_RAY
            # the incident ray must come through the exterior region
            inc = -k_i
            azim = np.arctan2(inc @ w.n0_hat, inc @ w.t0_hat)
            azim = np.where(azim < 0.0, azim + 2.0 * np.pi, azim)
            keep &= azim <= w.n * np.pi
            pts = v + gamma[:, None] * k_s
            iu, iv, inside = _cell_rows(grid, pts)
            keep &= inside
            sel = np.nonzero(keep)[0]
            if len(sel) == 0:
                continue

            blocked = scene.accel.occluded_batch(
                np.broadcast_to(source, (len(sel), 3)), v[sel])
            blocked |= scene.accel.occluded_batch(v[sel], pts[sel])
            sel = sel[~blocked]
            if len(sel) == 0:
                continue

            matrix, p_in, b_in, ok = _utd_rows(
                w, k_i[sel], k_s[sel], s_in[sel], gamma[sel],
                lam, eta0, etan)
            sel, matrix, p_in, b_in = sel[ok], matrix[ok], p_in[ok], b_in[ok]
            if len(sel) == 0:
                continue
            factor, wok = _weighting_rows(w, source, xs[sel], phis[sel],
                                          plane_off, n_hat)
            sel, matrix, p_in, b_in, factor = (
                sel[wok], matrix[wok], p_in[wok], b_in[wok], factor[wok])
            if len(sel) == 0:
                continue

            field = _pattern_fields(pattern, k_i[sel])
            c0 = np.sum(field * p_in, axis=1)
            c1 = np.sum(field * b_in, axis=1)
            o0 = matrix[:, 0, 0] * c0 + matrix[:, 0, 1] * c1
            o1 = matrix[:, 1, 0] * c0 + matrix[:, 1, 1] * c1
            spread = s_in[sel] * gamma[sel] * (s_in[sel] + gamma[sel])
            e_p = (np.abs(o0) ** 2 + np.abs(o1) ** 2) / spread
            a_sq = _alpha_rows(array, precoder, k_i[sel], lam)
            val = norm * scale * e_p * factor * a_sq
            np.add.at(vals, (iv[sel], iu[sel]), val)
            counters["deposits"] += len(sel)
        return vals, counters

    wedge_list = [int(w) for w in wedges]
    if cfg.workers > 1 and len(wedge_list) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, wedge_list))
    else:
        results = [run(wi) for wi in wedge_list]

    values = np.zeros((ny, nx))
    diag = Counter(wedges=len(wedge_list))
    for vals, counters in results:
        values += vals
        diag.update(counters)
    return values, dict(diag)


# ---------------------------------------------------------------------------
# top level


@dataclass(eq=False)
class RadioMapResult:
    """Per-source cell gains on a shared measurement grid."""

    grid: MeasurementGrid
    values: np.ndarray
    diagnostics: list

    def total(self):
        """Cell gains summed over every source."""
        return self.values.sum(axis=0)


def compute_radio_map(scene, transmitters, grid, cfg, *, precoders=None):
    """Radio map of one or more transmitters, one value layer each.

    Transmitters may be RadioDevice instances or bare positions.  The
    bounce estimator always runs; the edge term is added per source when
    diffraction is enabled, over the wedges within the configured radius
    (scene diameter when unset).  Returns a RadioMapResult whose values
    have shape (num_transmitters, ny, nx).
    """
    devices = [
        t if isinstance(t, RadioDevice)
        else RadioDevice(position=np.asarray(t, dtype=np.float64))
        for t in transmitters
    ]
    if precoders is not None and len(precoders) != len(devices):
        raise ValueError("need one precoder per transmitter")
    nx, ny = grid.shape
    values = np.zeros((len(devices), ny, nx))
    diagnostics = []
    for ti, dev in enumerate(devices):
        pre = None if precoders is None else precoders[ti]
        vals, diag = compute_radio_map_sbr(
            scene, dev.position, grid, cfg,
            pattern=dev.pattern, array=dev.array, precoder=pre)
        if Interaction.DIFFRACTION in cfg.enabled and scene.wedges:
            radius = (cfg.wedge_radius if cfg.wedge_radius is not None
                      else _scene_diameter(scene))
            wedge_ids = collect_wedges_near_source(scene, dev.position,
                                                   radius)
            if wedge_ids:
                dvals, ddiag = compute_radio_map_diffraction(
                    scene, dev.position, grid, wedge_ids, cfg,
                    pattern=dev.pattern, array=dev.array, precoder=pre)
                vals = vals + dvals
                for key, count in ddiag.items():
                    diag[key] = diag.get(key, 0) + count
        values[ti] = vals
        diagnostics.append(diag)
    return RadioMapResult(grid=grid, values=values, diagnostics=diagnostics)
