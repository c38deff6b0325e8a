"""Mesh and scene files, frame export and CSV logs.

Mesh files are line oriented::

    tetmesh v1
    nodes 4
    0 0 0
    ...
    elems 1
    0 1 2 3

Blank lines and ``#`` comments are ignored. Scene files hold one
``section.key = value`` per line; each ``body.mesh`` line starts a new body
and the following ``body.*`` keys apply to it.
"""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .collision import METHODS, CollisionSettings
from .errors import ConfigurationError, DegenerateElementError, MaterialError, OrientationError, ParseError, SceneError
from .fracture import FractureLimits
from .mesh import PRESETS, Material, TetMesh, volumes_batch
from .remesh import SnapThresholds
from .sim import INTEGRATORS, EnergyReport, SimConfig

MESH_HEADER = "tetmesh v1"
STATE_HEADER = "tetstate v1"
CSV_COLUMNS = ("frame", "time", "kinetic", "elastic", "nodes", "elements", "fragments")


def _fmt(x) -> str:
    return repr(float(x))


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        for number, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield number, line


# ------------------------------------------------------------------- meshes
def read_mesh_arrays(path):
    """Node coordinates and element indices from a mesh file, unvalidated."""
    path = str(path)
    lines = list(_content_lines(path))
    pos = 0

    def take(expect):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file, expected {expect}", path, lines[-1][0] if lines else 1)
        item = lines[pos]
        pos += 1
        return item

    number, line = take("header")
    if line != MESH_HEADER:
        raise ParseError(f"expected header {MESH_HEADER!r}, got {line!r}", path, number)

    def count(keyword):
        number, line = take(f"'{keyword} N'")
        parts = line.split()
        if len(parts) != 2 or parts[0] != keyword:
            raise ParseError(f"expected '{keyword} N', got {line!r}", path, number)
        try:
            n = int(parts[1])
        except ValueError:
            raise ParseError(f"bad {keyword} count {parts[1]!r}", path, number) from None
        if n < 0:
            raise ParseError(f"negative {keyword} count", path, number)
        return n

    n_nodes = count("nodes")
    nodes = np.empty((n_nodes, 3))
    for i in range(n_nodes):
        number, line = take("node coordinates")
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"node line needs 3 values, got {len(parts)}", path, number)
        try:
            nodes[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"bad node coordinate in {line!r}", path, number) from None
        if not np.all(np.isfinite(nodes[i])):
            raise ParseError("non-finite node coordinate", path, number)
    n_elems = count("elems")
    elems = np.empty((n_elems, 4), dtype=np.int64)
    lines_of = []
    for e in range(n_elems):
        number, line = take("element indices")
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"element line needs 4 indices, got {len(parts)}", path, number)
        try:
            elems[e] = [int(p) for p in parts]
        except ValueError:
            raise ParseError(f"bad element index in {line!r}", path, number) from None
        if elems[e].min() < 0 or elems[e].max() >= n_nodes:
            raise ParseError(f"element index out of range 0..{n_nodes - 1}", path, number)
        lines_of.append(number)
    if pos != len(lines):
        raise ParseError("trailing content after elements", path, lines[pos][0])
    return nodes, elems, lines_of


def parse_mesh(path, material: Material | None = None, body=0) -> TetMesh:
    """Read and validate a mesh file; world positions equal material positions.

    Raises
    ------
    ParseError
        Malformed content, with the offending line number.
    OrientationError
        An element with negative (or zero) volume, naming the element.
    """
    nodes, elems, lines_of = read_mesh_arrays(path)
    if len(elems):
        vols = volumes_batch(nodes[elems])
        bad = np.flatnonzero(vols <= 0)
        if len(bad):
            e = int(bad[0])
            raise OrientationError(
                f"element {e} has non-positive volume {vols[e]:.3g}; vertices must be positively oriented",
                str(path),
                lines_of[e],
            )
    try:
        return TetMesh.from_arrays(nodes, elems, material, body=body)
    except DegenerateElementError as exc:
        line = lines_of[exc.element] if exc.element is not None else None
        raise ParseError(str(exc), str(path), line) from exc


def write_mesh(path, nodes, elems=None):
    """Write a mesh file. ``nodes`` may be a TetMesh (live entities, compacted)."""
    if isinstance(nodes, TetMesh):
        nodes, elems = compact_arrays(nodes)
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    elems = np.asarray(elems, dtype=np.int64).reshape(-1, 4)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MESH_HEADER}\nnodes {len(nodes)}\n")
        for x in nodes:
            fh.write(" ".join(_fmt(c) for c in x) + "\n")
        fh.write(f"elems {len(elems)}\n")
        for row in elems:
            fh.write(" ".join(str(int(i)) for i in row) + "\n")


def compact_arrays(mesh: TetMesh, world=False):
    """Live nodes and elements renumbered densely, in handle order."""
    live = mesh.live_nodes()
    remap = np.full(mesh.n_node_slots, -1, dtype=np.int64)
    remap[live] = np.arange(len(live))
    coords = mesh.p[live] if world else mesh.m[live]
    return coords.copy(), remap[mesh.elems[mesh.live_elements()]]


# ------------------------------------------------------------------- scenes
MATERIAL_KEYS = {"lambda": "lam", "mu": "mu", "phi": "phi", "psi": "psi", "rho": "rho", "tau": "tau"}


@dataclass(frozen=True)
class BodySpec:
    mesh: str
    material: Material
    translate: tuple = (0.0, 0.0, 0.0)
    rotate: tuple = (0.0, 0.0, 1.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    fixed: str = "none"
    preset: str = ""
    overrides: tuple = ()


@dataclass(frozen=True)
class OutputSettings:
    frames_per_second: float = 30.0
    state_dump: bool = False


@dataclass(frozen=True)
class Scene:
    bodies: tuple
    sim: SimConfig
    material: Material | None = None
    material_preset: str = ""
    material_overrides: tuple = ()
    output: OutputSettings = field(default_factory=OutputSettings)
    path: str = ""

    @property
    def fracture(self) -> SnapThresholds:
        return self.sim.snap

    @property
    def collision(self) -> CollisionSettings:
        return self.sim.collision


_FIXED_TERM = re.compile(r"^\s*([xyz])\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*$")


def parse_fixed(selector: str):
    """Validate a fixed-node selector.

    ``none``, ``all``, or comparisons joined by ``and`` / ``or`` where
    ``and`` binds tighter, e.g. ``x < -0.4 or x > 0.4 and z > 1``.
    Returns a list of clauses, each a list of ``(axis, op, value)`` terms.
    """
    text = selector.strip()
    if text in ("none", "all"):
        return text
    clauses = []
    for clause in text.split(" or "):
        terms = []
        for part in clause.split(" and "):
            m = _FIXED_TERM.match(part)
            if not m:
                raise SceneError(f"bad fixed selector term {part!r}")
            try:
                value = float(m.group(3))
            except ValueError:
                raise SceneError(f"bad number in fixed selector {part!r}") from None
            terms.append(("xyz".index(m.group(1)), m.group(2), value))
        clauses.append(terms)
    return clauses


def select_fixed(selector: str, points) -> np.ndarray:
    parsed = parse_fixed(selector)
    points = np.asarray(points)
    if parsed == "none":
        return np.zeros(len(points), dtype=bool)
    if parsed == "all":
        return np.ones(len(points), dtype=bool)
    ops = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal}
    mask = np.zeros(len(points), dtype=bool)
    for terms in parsed:
        hit = np.ones(len(points), dtype=bool)
        for axis, op, value in terms:
            hit &= ops[op](points[:, axis], value)
        mask |= hit
    return mask


def _floats(value, n, key):
    parts = value.replace(",", " ").split()
    if len(parts) != n:
        raise SceneError(f"{key} needs {n} numbers, got {value!r}")
    try:
        out = tuple(float(p) for p in parts)
    except ValueError:
        raise SceneError(f"{key}: bad number in {value!r}") from None
    if not all(math.isfinite(x) for x in out):
        raise SceneError(f"{key}: non-finite value")
    return out


def _float(value, key):
    return _floats(value, 1, key)[0]


def _int(value, key):
    try:
        return int(value)
    except ValueError:
        raise SceneError(f"{key}: expected an integer, got {value!r}") from None


def _bool(value, key):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise SceneError(f"{key}: expected a boolean, got {value!r}")


def _choice(value, options, key):
    if value not in options:
        raise SceneError(f"{key} must be one of {options}, got {value!r}")
    return value


def _resolve_material(preset, overrides, base=None, where="material"):
    if preset:
        if preset not in PRESETS:
            raise SceneError(f"{where}.preset: unknown preset {preset!r}; known: {sorted(PRESETS)}")
        values = {f.name: getattr(PRESETS[preset], f.name) for f in fields(Material)}
    elif base is not None:
        values = {f.name: getattr(base, f.name) for f in fields(Material)}
    else:
        values = {}
    for key, value in overrides:
        values[MATERIAL_KEYS[key]] = value
    missing = [k for k, attr in MATERIAL_KEYS.items() if attr not in values]
    if missing:
        raise SceneError(f"{where}: missing required keys {', '.join(where + '.' + k for k in missing)}")
    try:
        return Material(**values)
    except MaterialError as exc:
        raise SceneError(f"{where}: {exc}") from exc


_SIM_KEYS = {"dt", "duration", "integrator", "gravity", "split"}
_FRACTURE_KEYS = {"enabled", "stride", "max_splits_per_step", "snap_distance", "snap_angle"}
_COLLISION_KEYS = {
    "method",
    "stiffness",
    "volume_stiffness",
    "damping",
    "ground",
    "ground_height",
    "ground_normal",
    "ground_stiffness",
    "rebuild_interval",
}
_IO_KEYS = {"frames_per_second", "state_dump"}
_BODY_KEYS = {"mesh", "translate", "rotate", "velocity", "fixed", "preset"} | set(MATERIAL_KEYS)


def parse_scene(path) -> Scene:
    """Parse and fully validate a scene file; mesh paths must exist."""
    path = str(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = {}
    seen = set()
    bodies_raw = []
    try:
        for number, line in _content_lines(path):
            if "=" not in line:
                raise ParseError(f"expected 'section.key = value', got {line!r}", path, number)
            key, value = (s.strip() for s in line.split("=", 1))
            if "." not in key:
                raise ParseError(f"key {key!r} lacks a section", path, number)
            section, name = key.split(".", 1)
            if section == "body":
                if name not in _BODY_KEYS:
                    raise ParseError(f"unknown key {key!r}", path, number)
                if name == "mesh":
                    bodies_raw.append({"mesh": (value, number)})
                    continue
                if not bodies_raw:
                    raise ParseError(f"{key} before any body.mesh", path, number)
                if name in bodies_raw[-1]:
                    raise ParseError(f"duplicate key {key!r} for this body", path, number)
                bodies_raw[-1][name] = (value, number)
                continue
            allowed = {
                "material": set(MATERIAL_KEYS) | {"preset"},
                "sim": _SIM_KEYS,
                "fracture": _FRACTURE_KEYS,
                "collision": _COLLISION_KEYS,
                "io": _IO_KEYS,
            }.get(section)
            if allowed is None or name not in allowed:
                raise ParseError(f"unknown key {key!r}", path, number)
            if key in seen:
                raise ParseError(f"duplicate key {key!r}", path, number)
            seen.add(key)
            entries[key] = (value, number)
        return _build_scene(path, base_dir, entries, bodies_raw)
    except SceneError as exc:
        raise ParseError(str(exc), path) from exc


def _build_scene(path, base_dir, entries, bodies_raw):
    def get(key, convert, default=None, required=False):
        if key not in entries:
            if required:
                raise SceneError(f"missing required key {key}")
            return default
        value, number = entries[key]
        try:
            return convert(value, key)
        except SceneError as exc:
            raise ParseError(str(exc), path, number) from exc

    preset = get("material.preset", lambda v, k: v, "")
    overrides = tuple(
        (k, get(f"material.{k}", _float)) for k in MATERIAL_KEYS if f"material.{k}" in entries
    )
    material = None
    if preset or overrides:
        material = _resolve_material(preset, overrides)

    snap = SnapThresholds(
        get("fracture.snap_distance", _float, 0.005),
        get("fracture.snap_angle", _float, 0.1),
    )
    if not (snap.distance >= 0 and snap.angle >= 0):
        raise SceneError("snap thresholds must be >= 0")
    try:
        collision = CollisionSettings(
            method=get("collision.method", lambda v, k: _choice(v, METHODS, k), "node_penetration"),
            stiffness=get("collision.stiffness", _float, 1e6),
            volume_stiffness=get("collision.volume_stiffness", _float, 1e10),
            damping=get("collision.damping", _float, 0.0),
            ground=get("collision.ground", _bool, False),
            ground_height=get("collision.ground_height", _float, 0.0),
            ground_normal=get("collision.ground_normal", lambda v, k: _floats(v, 3, k), (0.0, 0.0, 1.0)),
            ground_stiffness=get("collision.ground_stiffness", _float, 1e6),
            rebuild_interval=get("collision.rebuild_interval", _int, 64),
        )
        limits = FractureLimits(get("fracture.max_splits_per_step", _int, 32))
        sim = SimConfig(
            dt=get("sim.dt", _float, required=True),
            duration=get("sim.duration", _float, 0.0),
            integrator=get("sim.integrator", lambda v, k: _choice(v, INTEGRATORS, k), "euler"),
            gravity=get("sim.gravity", lambda v, k: _floats(v, 3, k), (0.0, 0.0, -9.81)),
            fracture_enabled=get("fracture.enabled", _bool, True),
            fracture_stride=get("fracture.stride", _int, 1),
            split=get("sim.split", lambda v, k: _choice(v, ("total", "elastic"), k), "total"),
            limits=limits,
            snap=snap,
            collision=collision,
        )
        output = OutputSettings(
            get("io.frames_per_second", _float, 30.0),
            get("io.state_dump", _bool, False),
        )
    except (ValueError, ConfigurationError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise SceneError(str(exc)) from exc
    if not output.frames_per_second > 0:
        raise SceneError("io.frames_per_second must be > 0")

    if not bodies_raw:
        raise SceneError("scene has no bodies (add a body.mesh line)")
    bodies = []
    for i, raw in enumerate(bodies_raw):
        where = f"body {i}"

        def bget(name, convert, default):
            if name not in raw:
                return default
            value, number = raw[name]
            try:
                return convert(value, f"body.{name}")
            except SceneError as exc:
                raise ParseError(f"{where}: {exc}", path, number) from exc

        mesh_rel, number = raw["mesh"]
        mesh_path = mesh_rel if os.path.isabs(mesh_rel) else os.path.join(base_dir, mesh_rel)
        if not os.path.isfile(mesh_path):
            raise ParseError(f"{where}: mesh file {mesh_rel!r} not found", path, number)
        bpreset = bget("preset", lambda v, k: v, "")
        bover = tuple((k, bget(k, _float, None)) for k in MATERIAL_KEYS if k in raw)
        if not (bpreset or bover) and material is None:
            raise SceneError(f"{where}: no material (set material.* or body.preset / body.<param>)")
        bmat = _resolve_material(bpreset, bover, material, where) if (bpreset or bover) else material
        fixed = bget("fixed", lambda v, k: (parse_fixed(v), v.strip())[1], "none")
        bodies.append(
            BodySpec(
                mesh=mesh_rel,
                material=bmat,
                translate=bget("translate", lambda v, k: _floats(v, 3, k), (0.0, 0.0, 0.0)),
                rotate=bget("rotate", lambda v, k: _floats(v, 4, k), (0.0, 0.0, 1.0, 0.0)),
                velocity=bget("velocity", lambda v, k: _floats(v, 3, k), (0.0, 0.0, 0.0)),
                fixed=fixed,
                preset=bpreset,
                overrides=bover,
            )
        )
    return Scene(tuple(bodies), sim, material, preset, overrides, output, path)


def write_scene(scene: Scene, path):
    """Serialize a scene so that ``parse_scene`` reproduces it."""
    s = scene.sim
    c = s.collision
    lines = ["# fracsim scene"]
    if scene.material_preset:
        lines.append(f"material.preset = {scene.material_preset}")
    for k, v in scene.material_overrides:
        lines.append(f"material.{k} = {_fmt(v)}")
    lines += [
        f"sim.dt = {_fmt(s.dt)}",
        f"sim.duration = {_fmt(s.duration)}",
        f"sim.integrator = {s.integrator}",
        "sim.gravity = " + " ".join(_fmt(g) for g in s.gravity),
        f"sim.split = {s.split}",
        f"fracture.enabled = {'true' if s.fracture_enabled else 'false'}",
        f"fracture.stride = {s.fracture_stride}",
        f"fracture.max_splits_per_step = {s.limits.max_splits_per_step}",
        f"fracture.snap_distance = {_fmt(s.snap.distance)}",
        f"fracture.snap_angle = {_fmt(s.snap.angle)}",
        f"collision.method = {c.method}",
        f"collision.stiffness = {_fmt(c.stiffness)}",
        f"collision.volume_stiffness = {_fmt(c.volume_stiffness)}",
        f"collision.damping = {_fmt(c.damping)}",
        f"collision.ground = {'true' if c.ground else 'false'}",
        f"collision.ground_height = {_fmt(c.ground_height)}",
        "collision.ground_normal = " + " ".join(_fmt(x) for x in c.ground_normal),
        f"collision.ground_stiffness = {_fmt(c.ground_stiffness)}",
        f"collision.rebuild_interval = {c.rebuild_interval}",
        f"io.frames_per_second = {_fmt(scene.output.frames_per_second)}",
        f"io.state_dump = {'true' if scene.output.state_dump else 'false'}",
    ]
    for b in scene.bodies:
        lines += [
            "",
            f"body.mesh = {b.mesh}",
            "body.translate = " + " ".join(_fmt(x) for x in b.translate),
            "body.rotate = " + " ".join(_fmt(x) for x in b.rotate),
            "body.velocity = " + " ".join(_fmt(x) for x in b.velocity),
            f"body.fixed = {b.fixed}",
        ]
        if b.preset:
            lines.append(f"body.preset = {b.preset}")
        for k, v in b.overrides:
            lines.append(f"body.{k} = {_fmt(v)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def rotation_matrix(axis, degrees) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if degrees == 0.0:
        return np.eye(3)
    if n == 0:
        raise SceneError("rotation axis must be non-zero")
    k = axis / n
    t = math.radians(degrees)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(t) * kx + (1 - math.cos(t)) * kx @ kx


def build_mesh(scene: Scene) -> TetMesh:
    """Instantiate all bodies into one mesh; body ``i`` gets body id ``i``.

    Each body is rotated about the origin of its mesh file, then translated.
    The transformed positions serve as both material and world positions;
    the fixed selector is evaluated on them.
    """
    base_dir = os.path.dirname(os.path.abspath(scene.path)) if scene.path else os.getcwd()
    mesh = TetMesh()
    for i, b in enumerate(scene.bodies):
        mesh_path = b.mesh if os.path.isabs(b.mesh) else os.path.join(base_dir, b.mesh)
        nodes, elems, _ = read_mesh_arrays(mesh_path)
        rot = rotation_matrix(b.rotate[:3], b.rotate[3])
        x = nodes @ rot.T + np.asarray(b.translate)
        if len(elems):
            vols = volumes_batch(nodes[elems])
            bad = np.flatnonzero(vols <= 0)
            if len(bad):
                raise OrientationError(f"element {int(bad[0])} has non-positive volume", mesh_path)
        fixed = select_fixed(b.fixed, x)
        v = np.tile(np.asarray(b.velocity, dtype=float), (len(x), 1))
        try:
            mesh.append_body(x, elems, b.material, body=i, v=v, fixed=fixed)
        except DegenerateElementError as exc:
            raise ParseError(str(exc), mesh_path) from exc
    return mesh


# ------------------------------------------------------------------ output
def surface_faces(mesh: TetMesh):
    """Boundary triangles grouped by fragment: ``{label: [(a, b, c), ...]}``."""
    labels = mesh.fragment_labels()
    groups: dict[int, list] = {}
    for e, tri in mesh.boundary_faces():
        groups.setdefault(int(labels[e]), []).append(tri)
    return dict(sorted(groups.items()))


def export_frame(mesh: TetMesh, out_dir, index: int, time=0.0, state_dump=False):
    """Write ``frame_NNNNN.obj`` (and optionally ``state_NNNNN.txt``).

    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = surface_faces(mesh)
    used = sorted({i for tris in groups.values() for tri in tris for i in tri})
    index_of = {n: k + 1 for k, n in enumerate(used)}
    path = out_dir / f"frame_{index:05d}.obj"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# frame {index} time {_fmt(time)}\n")
        fh.write(f"# nodes {mesh.node_count} elements {mesh.element_count} fragments {len(groups)}\n")
        for n in used:
            fh.write("v " + " ".join(_fmt(c) for c in mesh.p[n]) + "\n")
        for label, tris in groups.items():
            fh.write(f"g fragment_{label}\n")
            for tri in tris:
                fh.write("f " + " ".join(str(index_of[i]) for i in tri) + "\n")
    written = [path]
    if state_dump:
        spath = out_dir / f"state_{index:05d}.txt"
        write_state(mesh, spath, time)
        written.append(spath)
    return written


def read_obj_faces(path):
    """Vertices and per-group faces from an exported frame (for audits)."""
    verts, groups, current = [], {}, None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "#":
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "g":
                current = parts[1]
                groups[current] = []
            elif parts[0] == "f":
                groups.setdefault(current, []).append(tuple(int(x) - 1 for x in parts[1:4]))
    return np.array(verts).reshape(-1, 3), groups


def write_state(mesh: TetMesh, path, time=0.0):
    """Full restartable state: materials, node and element tables by handle."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{STATE_HEADER}\ntime {_fmt(time)}\n")
        fh.write(f"materials {len(mesh.materials)}\n")
        for m in mesh.materials:
            fh.write(" ".join(_fmt(getattr(m, f.name)) for f in fields(Material)) + "\n")
        live = mesh.live_nodes()
        fh.write(f"nodes {len(live)}\n")
        for n in live:
            vals = list(mesh.m[n]) + list(mesh.p[n]) + list(mesh.v[n]) + [mesh.mass[n]]
            fh.write(f"{n} " + " ".join(_fmt(x) for x in vals) + f" {int(mesh.fixed[n])} {int(mesh.node_body[n])}\n")
        elems = mesh.live_elements()
        fh.write(f"elems {len(elems)}\n")
        for e in elems:
            fh.write(f"{e} " + " ".join(str(int(i)) for i in mesh.elems[e]) + f" {int(mesh.mat[e])} {int(mesh.elem_body[e])}\n")


def read_state(path):
    """Rebuild a mesh from ``write_state`` output. Returns ``(mesh, time)``.

    Live entities are restored densely renumbered in handle order.
    """
    path = str(path)
    lines = list(_content_lines(path))
    it = iter(lines)

    def nxt():
        try:
            return next(it)
        except StopIteration:
            raise ParseError("unexpected end of state file", path) from None

    number, line = nxt()
    if line != STATE_HEADER:
        raise ParseError(f"expected header {STATE_HEADER!r}", path, number)
    try:
        time = float(nxt()[1].split()[1])
        n_mat = int(nxt()[1].split()[1])
        mats = [Material(*(float(x) for x in nxt()[1].split())) for _ in range(n_mat)]
        n_nodes = int(nxt()[1].split()[1])
        rows = [nxt()[1].split() for _ in range(n_nodes)]
        n_el = int(nxt()[1].split()[1])
        erows = [nxt()[1].split() for _ in range(n_el)]
    except (ValueError, IndexError, TypeError, MaterialError) as exc:
        raise ParseError(f"malformed state file: {exc}", path) from exc
    handles = [int(r[0]) for r in rows]
    remap = {h: k for k, h in enumerate(handles)}
    data = np.array([[float(x) for x in r[1:11]] for r in rows]).reshape(-1, 10)
    elems = np.array([[remap[int(i)] for i in r[1:5]] for r in erows], dtype=np.int64).reshape(-1, 4)
    mesh = TetMesh(max(1, n_nodes), max(1, n_el))
    mesh.materials = list(mats)
    mesh.append_body(data[:, 0:3], elems, None, p=data[:, 3:6], v=data[:, 6:9], validate=False)
    mesh.mass[:n_nodes] = data[:, 9]
    mesh.fixed[:n_nodes] = [bool(int(r[11])) for r in rows]
    mesh.node_body[:n_nodes] = [int(r[12]) for r in rows]
    mesh.mat[:n_el] = [int(r[5]) for r in erows]
    mesh.elem_body[:n_el] = [int(r[6]) for r in erows]
    mesh.touch()
    return mesh, time


class CsvLog:
    """Frame log with one row per exported frame."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)

    def write(self, frame: int, report: EnergyReport):
        self._writer.writerow(
            [
                frame,
                _fmt(report.time),
                _fmt(report.kinetic),
                _fmt(report.elastic),
                report.node_count,
                report.element_count,
                report.fragment_count,
            ]
        )
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def log_csv(reports, path):
    """Write ``(frame, EnergyReport)`` pairs to ``path``."""
    with CsvLog(path) as log:
        for frame, report in reports:
            log.write(frame, report)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "BodySpec",
    "CsvLog",
    "OutputSettings",
    "Scene",
    "build_mesh",
    "compact_arrays",
    "export_frame",
    "log_csv",
    "parse_fixed",
    "parse_mesh",
    "parse_scene",
    "read_csv",
    "read_mesh_arrays",
    "read_obj_faces",
    "read_state",
    "select_fixed",
    "surface_faces",
    "write_mesh",
    "write_scene",
    "write_state",
]
