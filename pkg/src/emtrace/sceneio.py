"""Scene description files, mesh loading, and result serialization.

Scene files are plain text.  A line without leading whitespace either
sets a global key (``format_version``, ``frequency``) or opens a block
(``material <name>``, ``object <name>``, ``transmitter <name>``,
``receiver <name>``, ``grid``); indented ``key value...`` lines belong
to the most recent block.  ``#`` starts a comment.  Units are meters,
Hz, seconds, watts, and radians; angle keys accept a ``_deg`` variant.

    format_version 1
    frequency 3.5e9

    material concrete
      eps_r 5.24
      sigma 0.1
      thickness 0.3
      scattering 0.3
      xpd 0.1
      scattering_pattern lambertian
      random_phases off

    object floor
      mesh floor.obj
      material concrete
      velocity 0 0 0

    transmitter tx0
      position 0 0 2
      orientation 0 0 0
      pattern isotropic
      array 1 1 0.5 0.5
      power 1.0

    receiver rx0
      position 5 0 1.5

    grid
      center 0 0 1.5
      axis_u 1 0 0
      axis_v 0 1 0
      cell_size 0.1 0.1
      shape 20 20

``array`` is rows, columns, and the two element spacings; the panel
spans the device frame's y (columns) and z (rows) axes and follows the
device orientation.  Mesh paths resolve relative to the scene file.
"""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .em import ArrayGeometry, angles_of, make_pattern, rotation_ypr
from .errors import MissingMesh, NonManifoldWarning, ParseError, \
    UnresolvedMaterial
from .geometry import EPS_AREA, Mesh
from .materials import RadioMaterial, ScatteringPattern
from .paths import RadioDevice, SceneModel
from .radiomap import MeasurementGrid

SCENE_FORMAT_VERSION = 1

PATH_COLUMNS = ("tx", "rx", "depth", "interactions", "re_a", "im_a",
                "tau", "nu", "theta_d", "phi_d", "theta_a", "phi_a")

MAP_FLOOR_DB = -150.0
MAP_CEIL_DB = -50.0
PGM_MAX = 65535


# ---------------------------------------------------------------------------
# description types


@dataclass
class ObjectSpec:
    name: str
    mesh_path: str
    material: str
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass
class DeviceSpec:
    name: str
    position: tuple = None
    orientation: tuple = (0.0, 0.0, 0.0)
    pattern: str = "isotropic"
    array: tuple = (1, 1, 0.5, 0.5)
    power: float = 1.0
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass
class SceneDescription:
    """Parsed scene file before mesh loading and resolution."""

    frequency: float = None
    materials: dict = field(default_factory=dict)
    objects: list = field(default_factory=list)
    transmitters: list = field(default_factory=list)
    receivers: list = field(default_factory=list)
    grid: MeasurementGrid = None


@dataclass
class LoadedScene:
    """Fully resolved scene plus the validation report."""

    description: SceneDescription
    model: SceneModel
    transmitters: list
    receivers: list
    grid: MeasurementGrid
    warnings: list

    @property
    def frequency(self):
        return self.description.frequency


# ---------------------------------------------------------------------------
# mesh loading


def _obj_corner_index(token, num_vertices, line_no):
    head = token.split("/", 1)[0]
    try:
        raw = int(head)
    except ValueError:
        raise ParseError(f"bad face index {token!r}", line=line_no) from None
    if raw == 0:
        raise ParseError("face indices are 1-based, got 0", line=line_no)
    idx = raw - 1 if raw > 0 else num_vertices + raw
    if not 0 <= idx < num_vertices:
        raise ParseError(f"face index {raw} out of range", line=line_no)
    return idx


def _read_obj_arrays(path):
    """Vertices and fan-triangulated faces of an ASCII geometry file."""
    vertices = []
    faces = []
    with open(path, "r", encoding="ascii") as handle:
        for line_no, line in enumerate(handle, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError("vertex needs 3 coordinates",
                                     line=line_no)
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ParseError(f"bad vertex {body!r}",
                                     line=line_no) from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError("face needs at least 3 vertices",
                                     line=line_no)
                corners = [_obj_corner_index(t, len(vertices), line_no)
                           for t in parts[1:]]
                for k in range(1, len(corners) - 1):
                    faces.append((corners[0], corners[k], corners[k + 1]))
            # vn/vt/o/g/s/usemtl/mtllib records carry no geometry here
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return verts, tris


def _drop_degenerate(verts, tris, label):
    if len(tris) == 0:
        return tris
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    bad = areas <= EPS_AREA
    if np.any(bad):
        count = int(np.count_nonzero(bad))
        plural = "s" if count != 1 else ""
        warnings.warn(f"{label}: dropped {count} degenerate triangle{plural}")
    return tris[~bad]


def _warn_non_manifold(tris, label):
    if len(tris) == 0:
        return
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]],
                            tris[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    over = int(np.count_nonzero(counts > 2))
    if over:
        warnings.warn(f"{label}: {over} edge(s) shared by more than two "
                      "faces", NonManifoldWarning)


def load_mesh_obj(path, object_id=0, material_ref=""):
    """Triangle mesh from an ASCII geometry file.

    Polygons are fan-triangulated from their first vertex; indices come
    back 0-based.  Degenerate triangles are dropped with a warning, and
    edges shared by more than two faces raise a NonManifoldWarning
    (collected, not fatal).
    """
    verts, tris = _read_obj_arrays(path)
    label = Path(path).name
    tris = _drop_degenerate(verts, tris, label)
    _warn_non_manifold(tris, label)
    return Mesh(verts, tris, object_id=object_id, material_ref=material_ref)


# ---------------------------------------------------------------------------
# scene loading


_TRUE_WORDS = {"1", "true", "on", "yes"}
_FALSE_WORDS = {"0", "false", "off", "no"}


def _parse_bool(word, line_no, key):
    low = word.lower()
    if low in _TRUE_WORDS:
        return True
    if low in _FALSE_WORDS:
        return False
    raise ParseError(f"expected a boolean, got {word!r}", line=line_no,
                     field=key)


def _parse_floats(parts, count, line_no, key):
    if len(parts) != count:
        raise ParseError(f"expected {count} value(s)", line=line_no,
                         field=key)
    try:
        return tuple(float(x) for x in parts)
    except ValueError:
        raise ParseError(f"bad number in {parts!r}", line=line_no,
                         field=key) from None


def _material_from_block(name, props, line_no):
    kwargs = {"name": name}
    pattern = None
    for key, (parts, ln) in props.items():
        if key in ("eps_r", "sigma", "thickness", "scattering", "xpd"):
            value, = _parse_floats(parts, 1, ln, key)
            kwargs["xpd_kx" if key == "xpd" else key] = value
        elif key == "random_phases":
            if len(parts) != 1:
                raise ParseError("expected one word", line=ln, field=key)
            kwargs["random_phases"] = _parse_bool(parts[0], ln, key)
        elif key == "scattering_pattern":
            kind = parts[0] if parts else ""
            extra = [float(x) for x in parts[1:]]
            try:
                if kind == "lambertian":
                    pattern = ScatteringPattern("lambertian")
                elif kind == "directive":
                    pattern = ScatteringPattern(
                        "directive", alpha_r=int(extra[0]) if extra else 1)
                elif kind == "backscattering":
                    pattern = ScatteringPattern(
                        "backscattering",
                        alpha_r=int(extra[0]) if len(extra) > 0 else 1,
                        alpha_i=int(extra[1]) if len(extra) > 1 else 1,
                        lambda_mix=extra[2] if len(extra) > 2 else 1.0)
                else:
                    raise ParseError(f"unknown scattering pattern {kind!r}",
                                     line=ln, field=key)
            except (ValueError, IndexError):
                raise ParseError("bad scattering pattern parameters",
                                 line=ln, field=key) from None
        else:
            raise ParseError(f"unknown material key {key!r}", line=ln,
                             field=key)
    if pattern is not None:
        kwargs["pattern"] = pattern
    try:
        return RadioMaterial(**kwargs)
    except ValueError as exc:
        raise ParseError(str(exc), line=line_no) from None


def _object_from_block(name, props, line_no):
    spec = ObjectSpec(name=name, mesh_path=None, material=None)
    for key, (parts, ln) in props.items():
        if key == "mesh":
            spec.mesh_path = " ".join(parts)
        elif key == "material":
            if len(parts) != 1:
                raise ParseError("expected one material name", line=ln,
                                 field=key)
            spec.material = parts[0]
        elif key == "velocity":
            spec.velocity = _parse_floats(parts, 3, ln, key)
        else:
            raise ParseError(f"unknown object key {key!r}", line=ln,
                             field=key)
    if spec.mesh_path is None:
        raise ParseError("object needs a mesh", line=line_no, field="mesh")
    if spec.material is None:
        raise ParseError("object needs a material", line=line_no,
                         field="material")
    return spec


def _device_from_block(name, props, line_no):
    spec = DeviceSpec(name=name)
    for key, (parts, ln) in props.items():
        if key == "position":
            spec.position = _parse_floats(parts, 3, ln, key)
        elif key == "orientation":
            spec.orientation = _parse_floats(parts, 3, ln, key)
        elif key == "orientation_deg":
            spec.orientation = tuple(
                np.deg2rad(_parse_floats(parts, 3, ln, key)))
        elif key == "pattern":
            if len(parts) != 1:
                raise ParseError("expected one pattern name", line=ln,
                                 field=key)
            spec.pattern = parts[0]
        elif key == "array":
            rows, cols, sv, sh = _parse_floats(parts, 4, ln, key)
            if rows < 1 or cols < 1 or rows != int(rows) or cols != int(cols):
                raise ParseError("array counts must be positive integers",
                                 line=ln, field=key)
            spec.array = (int(rows), int(cols), sv, sh)
        elif key == "power":
            spec.power, = _parse_floats(parts, 1, ln, key)
            if spec.power <= 0.0:
                raise ParseError("power must be positive", line=ln, field=key)
        elif key == "velocity":
            spec.velocity = _parse_floats(parts, 3, ln, key)
        else:
            raise ParseError(f"unknown device key {key!r}", line=ln,
                             field=key)
    if spec.position is None:
        raise ParseError("device needs a position", line=line_no,
                         field="position")
    return spec


def _grid_from_block(props, line_no):
    fields = {}
    for key, (parts, ln) in props.items():
        if key in ("center", "axis_u", "axis_v"):
            fields[key] = _parse_floats(parts, 3, ln, key)
        elif key in ("cell_size",):
            fields[key] = _parse_floats(parts, 2, ln, key)
        elif key == "shape":
            w, h = _parse_floats(parts, 2, ln, key)
            fields[key] = (int(w), int(h))
        else:
            raise ParseError(f"unknown grid key {key!r}", line=ln, field=key)
    for required in ("center", "cell_size", "shape"):
        if required not in fields:
            raise ParseError(f"grid needs {required}", line=line_no,
                             field=required)
    try:
        return MeasurementGrid(
            fields["center"],
            fields.get("axis_u", (1.0, 0.0, 0.0)),
            fields.get("axis_v", (0.0, 1.0, 0.0)),
            fields["cell_size"], fields["shape"])
    except ValueError as exc:
        raise ParseError(str(exc), line=line_no) from None


_BLOCK_KINDS = ("material", "object", "transmitter", "receiver", "grid")


def parse_scene_text(text):
    """SceneDescription from scene-file text; raises ParseError."""
    desc = SceneDescription()
    version = None
    block = None          # (kind, name, props, line_no)

    def close_block():
        nonlocal block
        if block is None:
            return
        kind, name, props, ln = block
        if kind == "material":
            if name in desc.materials:
                raise ParseError(f"material {name!r} redefined", line=ln)
            desc.materials[name] = _material_from_block(name, props, ln)
        elif kind == "object":
            desc.objects.append(_object_from_block(name, props, ln))
        elif kind == "transmitter":
            desc.transmitters.append(_device_from_block(name, props, ln))
        elif kind == "receiver":
            desc.receivers.append(_device_from_block(name, props, ln))
        elif kind == "grid":
            if desc.grid is not None:
                raise ParseError("grid redefined", line=ln)
            desc.grid = _grid_from_block(props, ln)
        block = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        indented = body[0] in " \t"
        parts = body.split()
        if indented:
            if block is None:
                raise ParseError("property outside any block", line=line_no,
                                 field=parts[0])
            key = parts[0]
            if key in block[2]:
                raise ParseError(f"duplicate key {key!r}", line=line_no,
                                 field=key)
            block[2][key] = (parts[1:], line_no)
            continue
        close_block()
        head = parts[0]
        if head == "format_version":
            try:
                version = int(parts[1])
            except (IndexError, ValueError):
                raise ParseError("bad format_version", line=line_no,
                                 field="format_version") from None
        elif head == "frequency":
            desc.frequency, = _parse_floats(parts[1:], 1, line_no,
                                            "frequency")
        elif head in _BLOCK_KINDS:
            if head == "grid":
                name = None
            elif len(parts) == 2:
                name = parts[1]
            else:
                raise ParseError(f"{head} needs exactly one name",
                                 line=line_no, field=head)
            block = (head, name, {}, line_no)
        else:
            raise ParseError(f"unknown directive {head!r}", line=line_no)
    close_block()

    if version != SCENE_FORMAT_VERSION:
        raise ParseError(
            f"unsupported format_version {version!r} "
            f"(expected {SCENE_FORMAT_VERSION})", field="format_version")
    if desc.frequency is None or desc.frequency <= 0.0:
        raise ParseError("scene needs a positive frequency",
                         field="frequency")
    return desc


def _resolve_device(spec):
    rows, cols, sv, sh = spec.array
    local = np.zeros((rows * cols, 3))
    for r in range(rows):
        for c in range(cols):
            local[r * cols + c, 1] = (c - (cols - 1) / 2.0) * sh
            local[r * cols + c, 2] = (r - (rows - 1) / 2.0) * sv
    rot = rotation_ypr(*spec.orientation)
    return RadioDevice(
        position=np.asarray(spec.position, dtype=np.float64),
        pattern=make_pattern(spec.pattern, orientation=spec.orientation),
        array=ArrayGeometry(local @ rot.T),
        velocity=np.asarray(spec.velocity, dtype=np.float64),
        name=spec.name,
    )


def load_scene(path):
    """Fully resolved scene from a scene file.

    Returns a LoadedScene whose warnings list reports dropped degenerate
    triangles and non-manifold edges.  Raises ParseError for malformed
    text, UnresolvedMaterial for an unknown material name, and
    MissingMesh for an absent mesh file.
    """
    path = Path(path)
    desc = parse_scene_text(path.read_text(encoding="utf-8"))

    meshes = []
    materials = {}
    velocities = {}
    report = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for oid, spec in enumerate(desc.objects):
            if spec.material not in desc.materials:
                raise UnresolvedMaterial(spec.material)
            mesh_path = Path(spec.mesh_path)
            if not mesh_path.is_absolute():
                mesh_path = path.parent / mesh_path
            if not mesh_path.exists():
                raise MissingMesh(str(mesh_path))
            mesh = load_mesh_obj(mesh_path, object_id=oid,
                                 material_ref=spec.material)
            meshes.append(mesh)
            materials[oid] = desc.materials[spec.material]
            if any(v != 0.0 for v in spec.velocity):
                velocities[oid] = np.asarray(spec.velocity, dtype=np.float64)
    report.extend(str(w.message) for w in caught)

    model = SceneModel(meshes, materials, velocities=velocities)
    return LoadedScene(
        description=desc,
        model=model,
        transmitters=[_resolve_device(s) for s in desc.transmitters],
        receivers=[_resolve_device(s) for s in desc.receivers],
        grid=desc.grid,
        warnings=report,
    )


# ---------------------------------------------------------------------------
# scene writing


def _fmt(value):
    return repr(float(value))


def _fmt_vec(values):
    return " ".join(_fmt(v) for v in values)


def write_scene(loaded, directory, name="scene.scene"):
    """Serialize a loaded scene into a directory, one mesh file per object.

    Returns the scene file path.  Reloading reproduces the triangle
    counts and material values (degenerate triangles were already
    dropped on load).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    desc = loaded.description
    lines = [f"format_version {SCENE_FORMAT_VERSION}",
             f"frequency {_fmt(desc.frequency)}", ""]

    for mat_name, mat in desc.materials.items():
        lines += [
            f"material {mat_name}",
            f"  eps_r {_fmt(mat.eps_r)}",
            f"  sigma {_fmt(mat.sigma)}",
            f"  thickness {_fmt(mat.thickness)}",
            f"  scattering {_fmt(mat.scattering)}",
            f"  xpd {_fmt(mat.xpd_kx)}",
            f"  random_phases {'on' if mat.random_phases else 'off'}",
            f"  scattering_pattern {mat.pattern.kind} {mat.pattern.alpha_r}"
            f" {mat.pattern.alpha_i} {_fmt(mat.pattern.lambda_mix)}",
            "",
        ]

    for spec, mesh in zip(desc.objects, loaded.model.meshes):
        obj_name = f"{spec.name}.obj"
        write_mesh_obj(mesh, directory / obj_name)
        lines += [f"object {spec.name}",
                  f"  mesh {obj_name}",
                  f"  material {spec.material}"]
        if any(v != 0.0 for v in spec.velocity):
            lines.append(f"  velocity {_fmt_vec(spec.velocity)}")
        lines.append("")

    for kind, specs in (("transmitter", desc.transmitters),
                        ("receiver", desc.receivers)):
        for spec in specs:
            lines += [f"{kind} {spec.name}",
                      f"  position {_fmt_vec(spec.position)}"]
            if any(a != 0.0 for a in spec.orientation):
                lines.append(f"  orientation {_fmt_vec(spec.orientation)}")
            if spec.pattern != "isotropic":
                lines.append(f"  pattern {spec.pattern}")
            rows, cols, sv, sh = spec.array
            if (rows, cols) != (1, 1):
                lines.append(f"  array {rows} {cols} {_fmt(sv)} {_fmt(sh)}")
            if spec.power != 1.0:
                lines.append(f"  power {_fmt(spec.power)}")
            if any(v != 0.0 for v in spec.velocity):
                lines.append(f"  velocity {_fmt_vec(spec.velocity)}")
            lines.append("")

    if desc.grid is not None:
        g = desc.grid
        lines += [
            "grid",
            f"  center {_fmt_vec(g.center)}",
            f"  axis_u {_fmt_vec(g.u_hat)}",
            f"  axis_v {_fmt_vec(g.v_hat)}",
            f"  cell_size {_fmt(g.cell_size[0])} {_fmt(g.cell_size[1])}",
            f"  shape {g.shape[0]} {g.shape[1]}",
            "",
        ]

    out = directory / name
    out.write_text("\n".join(lines), encoding="utf-8")
    return out


def write_mesh_obj(mesh, path):
    """ASCII geometry file of one mesh (1-based face indices)."""
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}"
             for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# result serialization


def _path_record(p):
    theta_d, phi_d = angles_of(p.departure)
    theta_a, phi_a = angles_of(p.arrival)
    return {
        "tx": int(p.tx_index),
        "rx": int(p.rx_index),
        "depth": int(p.depth),
        "interactions": ",".join(p.kinds),
        "re_a": float(p.gain.real),
        "im_a": float(p.gain.imag),
        "tau": float(p.delay),
        "nu": float(p.doppler),
        "theta_d": float(theta_d),
        "phi_d": float(phi_d),
        "theta_a": float(theta_a),
        "phi_a": float(phi_a),
    }


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "," in text or '"' in text or "\n" in text:
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_paths(result, path, fmt="csv"):
    """Serialize computed paths, one record per path.

    CSV columns are exactly tx, rx, depth, interactions, re_a, im_a,
    tau, nu, theta_d, phi_d, theta_a, phi_a with floats as shortest
    round-trip decimals; the json format adds each path's vertex list.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown path format {fmt!r}")
    records = [_path_record(p) for p in result.paths]
    if fmt == "csv":
        lines = [",".join(PATH_COLUMNS)]
        for rec in records:
            lines.append(",".join(_csv_cell(rec[c]) for c in PATH_COLUMNS))
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    else:
        for rec, p in zip(records, result.paths):
            rec["vertices"] = [[float(x) for x in v] for v in p.vertices]
        Path(path).write_text(json.dumps(records, indent=1) + "\n",
                              encoding="ascii")


def read_paths_csv(path):
    """Parse a paths CSV back into a list of record dicts."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    header = lines[0].split(",")
    records = []
    for line in lines[1:]:
        cells = []
        rest = line
        while rest is not None:
            if rest.startswith('"'):
                end = rest.index('"', 1)
                cells.append(rest[1:end])
                rest = rest[end + 2:] if end + 1 < len(rest) else None
            elif "," in rest:
                cell, rest = rest.split(",", 1)
                cells.append(cell)
            else:
                cells.append(rest)
                rest = None
        rec = dict(zip(header, cells))
        for key in ("tx", "rx", "depth"):
            rec[key] = int(rec[key])
        for key in ("re_a", "im_a", "tau", "nu",
                    "theta_d", "phi_d", "theta_a", "phi_a"):
            rec[key] = float(rec[key])
        records.append(rec)
    return records


def write_radio_map(grid, values, path, fmt="csv",
                    floor_db=MAP_FLOOR_DB, ceil_db=MAP_CEIL_DB):
    """Serialize one map layer over a measurement grid.

    CSV holds the linear gains row-major, row 0 at the minimum v-axis
    coordinate.  PGM is 16-bit grayscale of the dB values affinely
    mapped from [floor_db, ceil_db] (clamped); the mapping is recorded
    in the comment line.
    """
    values = np.asarray(values, dtype=np.float64)
    nx, ny = grid.shape
    if values.shape != (ny, nx):
        raise ValueError(f"values shape {values.shape} does not match "
                         f"grid {grid.shape}")
    if fmt == "csv":
        lines = [",".join(repr(float(v)) for v in row) for row in values]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    elif fmt == "pgm":
        if not ceil_db > floor_db:
            raise ValueError("ceil_db must exceed floor_db")
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(values)
        db = np.clip(db, floor_db, ceil_db)
        pixels = np.rint(
            (db - floor_db) / (ceil_db - floor_db) * PGM_MAX
        ).astype(np.int64)
        lines = [
            "P2",
            f"# gain dB mapped [{floor_db:g}, {ceil_db:g}] -> [0, {PGM_MAX}]"
            "; row 0 = minimum v axis",
            f"{nx} {ny}",
            str(PGM_MAX),
        ]
        lines += [" ".join(str(int(p)) for p in row) for row in pixels]
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    else:
        raise ValueError(f"unknown map format {fmt!r}")


def read_radio_map_csv(path):
    """Parse a map CSV back into its (ny, nx) array."""
    rows = [
        [float(cell) for cell in line.split(",")]
        for line in Path(path).read_text(encoding="ascii").splitlines()
        if line
    ]
    return np.asarray(rows, dtype=np.float64)
