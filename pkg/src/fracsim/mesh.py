"""Tetrahedral mesh data model.

Nodes and elements live in growable numpy arrays addressed by stable integer
handles. Retired handles go on a free-list and are reused lowest-first, so
handles held by callers survive unrelated mutations and the whole pipeline
stays deterministic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateElementError, MaterialError

VOLUME_FLOOR = 1e-12
CONDITION_LIMIT = 1e8

# local vertex triples of the face opposite vertex i, ordered so the
# right-hand normal points away from vertex i for a positively oriented tet
FACE_VERTS = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))
EDGE_VERTS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass(frozen=True)
class Material:
    """Isotropic elastic/viscous material with a fracture toughness.

    Attributes are the Lamé constants ``lam`` and ``mu`` (N/m^2), the
    damping constants ``phi`` and ``psi`` (N s/m^2), density ``rho``
    (kg/m^3) and toughness ``tau``.
    """

    lam: float
    mu: float
    phi: float
    psi: float
    rho: float
    tau: float

    def __post_init__(self):
        for name in ("lam", "mu", "phi", "psi", "rho", "tau"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise MaterialError(f"material {name} must be finite, got {value!r}")
        if self.mu <= 0:
            raise MaterialError(f"mu must be > 0, got {self.mu!r}")
        if self.rho <= 0:
            raise MaterialError(f"rho must be > 0, got {self.rho!r}")
        if self.tau <= 0:
            raise MaterialError(f"tau must be > 0, got {self.tau!r}")
        for name in ("lam", "phi", "psi"):
            if getattr(self, name) < 0:
                raise MaterialError(f"{name} must be >= 0, got {getattr(self, name)!r}")

    def wave_speed(self) -> float:
        """Dilatational wave speed sqrt((lam + 2 mu) / rho)."""
        return float(np.sqrt((self.lam + 2.0 * self.mu) / self.rho))


# Named example materials for scene presets (lam, mu, phi, psi, rho, tau).
PRESETS = {
    "glass": Material(1.04e8, 1.04e8, 0.0, 6760.0, 2588.0, 10140.0),
    "wall1": Material(6.03e8, 1.21e8, 3015.0, 6030.0, 2309.0, 6030.0),
    "wall2": Material(0.0, 1.81e8, 0.0, 18090.0, 2309.0, 6030.0),
    "bowl1": Material(2.65e6, 3.97e6, 264.0, 397.0, 1013.0, 52.9),
    "bowl2": Material(2.65e6, 3.97e6, 264.0, 397.0, 1013.0, 39.6),
    "bowl3": Material(2.65e6, 3.97e6, 264.0, 397.0, 1013.0, 33.1),
    "bowl4": Material(2.65e6, 3.97e6, 264.0, 397.0, 1013.0, 13.2),
    "comp_bowl": Material(0.0, 5.29e7, 0.0, 198.0, 1013.0, 106.0),
    "the_end": Material(0.0, 9.21e6, 0.0, 9.2, 705.0, 73.6),
}


@dataclass
class Node:
    """Snapshot of one node's state."""

    material_pos: np.ndarray
    world_pos: np.ndarray
    velocity: np.ndarray
    mass: float
    force_accum: np.ndarray
    fixed: bool = False
    tensile_set: list = field(default_factory=list)
    compressive_set: list = field(default_factory=list)


@dataclass
class Element:
    """Snapshot of one element: node handles, basis matrix, volume, material."""

    nodes: tuple
    beta: np.ndarray
    volume: float
    material: Material


def element_volume(m1, m2, m3, m4) -> float:
    """Signed volume; positive when (m2-m1, m3-m1, m4-m1) is right-handed."""
    m1 = np.asarray(m1, dtype=float)
    a = np.asarray(m2, dtype=float) - m1
    b = np.asarray(m3, dtype=float) - m1
    c = np.asarray(m4, dtype=float) - m1
    return float(np.dot(np.cross(a, b), c) / 6.0)


def volumes_batch(x: np.ndarray) -> np.ndarray:
    """Signed volumes for a stack of vertex arrays ``(n, 4, 3)``."""
    a = x[:, 1] - x[:, 0]
    b = x[:, 2] - x[:, 0]
    c = x[:, 3] - x[:, 0]
    return np.einsum("ni,ni->n", np.cross(a, b), c) / 6.0


def altitudes_batch(x: np.ndarray) -> np.ndarray:
    """Minimum altitude (3 |vol| / largest face area) of each tet in ``(n, 4, 3)``."""
    areas = np.stack(
        [0.5 * np.linalg.norm(np.cross(x[:, b] - x[:, a], x[:, c] - x[:, a]), axis=1) for a, b, c in FACE_VERTS],
        axis=1,
    )
    big = areas.max(axis=1)
    return np.divide(3.0 * np.abs(volumes_batch(x)), big, out=np.zeros(len(x)), where=big > 0)


def _homogeneous(x: np.ndarray) -> np.ndarray:
    # columns (m_i; 1)
    n = len(x)
    out = np.ones((n, 4, 4))
    out[:, :3, :] = np.swapaxes(x, 1, 2)
    return out


def condition_batch(x: np.ndarray) -> np.ndarray:
    """Shape condition number of tets ``(n, 4, 3)``.

    The homogeneous vertex matrix is evaluated after moving the centroid to
    the origin and scaling by the longest edge, so the estimate measures
    element shape only, not its position or size.
    """
    c = x.mean(axis=1, keepdims=True)
    d = x - c
    edges = np.stack([x[:, j] - x[:, i] for i, j in EDGE_VERTS], axis=1)
    scale = np.sqrt(np.max(np.einsum("nki,nki->nk", edges, edges), axis=1))
    scale = np.where(scale > 0, scale, 1.0)
    h = _homogeneous(d / scale[:, None, None])
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(h)
    return np.where(np.isfinite(cond), cond, np.inf)


def compute_beta(m1, m2, m3, m4) -> np.ndarray:
    """Inverse of the homogeneous material-coordinate matrix of a tet.

    Row ``i`` holds the coefficients of the linear shape function of node
    ``i``, so ``beta @ (u; 1)`` gives barycentric coordinates of ``u``.

    Raises
    ------
    DegenerateElementError
        If the nodes are (nearly) coplanar.
    """
    x = np.array([m1, m2, m3, m4], dtype=float)[None]
    cond = condition_batch(x)[0]
    if not cond <= CONDITION_LIMIT:
        raise DegenerateElementError(f"element basis is ill-conditioned (cond ~ {cond:.3g})")
    return np.linalg.inv(_homogeneous(x)[0])


def barycentric(element: Element, u) -> np.ndarray:
    """Barycentric coordinates of material point ``u`` in ``element``."""
    return element.beta @ np.append(np.asarray(u, dtype=float), 1.0)


def face_key(a, b, c) -> tuple:
    return tuple(sorted((int(a), int(b), int(c))))


def edge_key(a, b) -> tuple:
    a, b = int(a), int(b)
    return (a, b) if a < b else (b, a)


class TetMesh:
    """Nodes, elements and adjacency; the mutable simulation state.

    Array attributes are indexed by handle and sized to capacity; only rows
    flagged in ``node_alive`` / ``elem_alive`` are meaningful.
    """

    def __init__(self, node_capacity=16, elem_capacity=16):
        self.materials: list[Material] = []
        self._alloc_nodes(max(1, node_capacity))
        self._alloc_elems(max(1, elem_capacity))
        self.n_node_slots = 0
        self.n_elem_slots = 0
        self._free_nodes: list[int] = []
        self._free_elems: list[int] = []
        self.face_map: dict[tuple, list[int]] = {}
        self.node_elements: list[set] = []
        self.version = 0
        self.topology_version = 0
        self._live_cache = {}
        # per-step scratch: forces each element exerts on its nodes
        self.scratch = None

    # ------------------------------------------------------------------ storage
    def _alloc_nodes(self, cap):
        self.m = np.zeros((cap, 3))
        self.p = np.zeros((cap, 3))
        self.v = np.zeros((cap, 3))
        self.mass = np.zeros(cap)
        self.force = np.zeros((cap, 3))
        self.fixed = np.zeros(cap, dtype=bool)
        self.node_alive = np.zeros(cap, dtype=bool)
        self.node_body = np.zeros(cap, dtype=np.int64)

    def _alloc_elems(self, cap):
        self.elems = np.zeros((cap, 4), dtype=np.int64)
        self.beta = np.zeros((cap, 4, 4))
        self.vol = np.zeros(cap)
        self.mat = np.zeros(cap, dtype=np.int64)
        self.elem_alive = np.zeros(cap, dtype=bool)
        self.elem_body = np.zeros(cap, dtype=np.int64)

    def _grow(self, names, new_cap):
        for name in names:
            old = getattr(self, name)
            arr = np.zeros((new_cap,) + old.shape[1:], dtype=old.dtype)
            arr[: len(old)] = old
            setattr(self, name, arr)

    def _ensure_node_capacity(self, n):
        cap = len(self.m)
        if n > cap:
            new = max(n, 2 * cap)
            self._grow(("m", "p", "v", "mass", "force", "fixed", "node_alive", "node_body"), new)

    def _ensure_elem_capacity(self, n):
        cap = len(self.elems)
        if n > cap:
            new = max(n, 2 * cap)
            self._grow(("elems", "beta", "vol", "mat", "elem_alive", "elem_body"), new)

    def _touch_topology(self):
        self.version += 1
        self.topology_version += 1
        self._live_cache.clear()
        self.scratch = None

    def touch(self):
        """Mark world state (positions/velocities) as changed."""
        self.version += 1
        self.scratch = None

    # ------------------------------------------------------------------ queries
    def live_nodes(self) -> np.ndarray:
        key = "nodes"
        if key not in self._live_cache:
            self._live_cache[key] = np.flatnonzero(self.node_alive[: self.n_node_slots])
        return self._live_cache[key]

    def live_elements(self) -> np.ndarray:
        key = "elems"
        if key not in self._live_cache:
            self._live_cache[key] = np.flatnonzero(self.elem_alive[: self.n_elem_slots])
        return self._live_cache[key]

    @property
    def node_count(self) -> int:
        return len(self.live_nodes())

    @property
    def element_count(self) -> int:
        return len(self.live_elements())

    def element(self, e: int) -> Element:
        return Element(
            tuple(int(i) for i in self.elems[e]),
            self.beta[e].copy(),
            float(self.vol[e]),
            self.materials[self.mat[e]],
        )

    def node(self, n: int) -> Node:
        tensile, compressive = self.node_force_sets(n) if self.scratch is not None else ([], [])
        return Node(
            self.m[n].copy(),
            self.p[n].copy(),
            self.v[n].copy(),
            float(self.mass[n]),
            self.force[n].copy(),
            bool(self.fixed[n]),
            tensile,
            compressive,
        )

    def node_force_sets(self, n: int):
        """Per-element tensile and compressive forces acting on node ``n``.

        Requires the scratch force field from the current step.
        """
        if self.scratch is None:
            raise RuntimeError("no force scratch; assemble forces first")
        tensile, compressive = [], []
        for e in sorted(self.node_elements[n]):
            row = self.scratch.row_of[e]
            local = int(np.flatnonzero(self.elems[e] == n)[0])
            tensile.append(self.scratch.tensile[row, local].copy())
            compressive.append(self.scratch.compressive[row, local].copy())
        return tensile, compressive

    def element_material(self, e: int) -> Material:
        return self.materials[self.mat[e]]

    def material_id(self, material: Material) -> int:
        for i, known in enumerate(self.materials):
            if known == material:
                return i
        self.materials.append(material)
        return len(self.materials) - 1

    # ---------------------------------------------------------------- mutation
    def add_node(self, m, p=None, v=None, *, body=0, fixed=False, mass=0.0) -> int:
        if self._free_nodes:
            h = heapq.heappop(self._free_nodes)
        else:
            h = self.n_node_slots
            self._ensure_node_capacity(h + 1)
            self.n_node_slots += 1
            self.node_elements.append(set())
        self.m[h] = m
        self.p[h] = m if p is None else p
        self.v[h] = 0.0 if v is None else v
        self.mass[h] = mass
        self.force[h] = 0.0
        self.fixed[h] = fixed
        self.node_alive[h] = True
        self.node_body[h] = body
        self.node_elements[h] = set()
        self._touch_topology()
        return h

    def retire_node(self, h: int):
        if self.node_elements[h]:
            raise ValueError(f"node {h} is still referenced by elements")
        self.node_alive[h] = False
        heapq.heappush(self._free_nodes, h)
        self._touch_topology()

    def add_element(self, nodes, material: Material | int, *, body=None, beta=None) -> int:
        """Insert a positively oriented tetrahedron and register its adjacency."""
        nodes = tuple(int(i) for i in nodes)
        if len(set(nodes)) != 4:
            raise DegenerateElementError(f"element repeats a node: {nodes}")
        x = self.m[list(nodes)]
        vol = element_volume(*x)
        if vol < VOLUME_FLOOR:
            raise DegenerateElementError(f"element volume {vol:.3g} below floor")
        if beta is None:
            beta = compute_beta(*x)
        mid = material if isinstance(material, (int, np.integer)) else self.material_id(material)
        if self._free_elems:
            h = heapq.heappop(self._free_elems)
        else:
            h = self.n_elem_slots
            self._ensure_elem_capacity(h + 1)
            self.n_elem_slots += 1
        self.elems[h] = nodes
        self.beta[h] = beta
        self.vol[h] = vol
        self.mat[h] = mid
        self.elem_alive[h] = True
        self.elem_body[h] = self.node_body[nodes[0]] if body is None else body
        self._link(h)
        self._touch_topology()
        return h

    def remove_element(self, h: int):
        self._unlink(h)
        self.elem_alive[h] = False
        heapq.heappush(self._free_elems, h)
        self._touch_topology()

    def replace_element_nodes(self, h: int, nodes):
        """Swap the node tuple of an element whose material geometry is unchanged."""
        self._unlink(h)
        self.elems[h] = nodes
        self._link(h)
        self._touch_topology()

    def _link(self, h):
        nodes = self.elems[h]
        for i in nodes:
            self.node_elements[i].add(h)
        for tri in FACE_VERTS:
            key = face_key(*nodes[list(tri)])
            self.face_map.setdefault(key, []).append(h)

    def _unlink(self, h):
        nodes = self.elems[h]
        for i in nodes:
            self.node_elements[i].discard(h)
        for tri in FACE_VERTS:
            key = face_key(*nodes[list(tri)])
            lst = self.face_map[key]
            lst.remove(h)
            if not lst:
                del self.face_map[key]

    # --------------------------------------------------------------- geometry
    def assemble_masses(self, elements=None):
        """Lumped masses: each element gives rho*vol/4 to each of its nodes.

        Nodes with no incident element keep their previous mass.
        """
        idx = self.live_elements()
        rho = np.array([mat.rho for mat in self.materials])[self.mat[idx]] if len(idx) else np.zeros(0)
        share = np.repeat(rho * self.vol[idx] / 4.0, 4)
        total = np.bincount(self.elems[idx].ravel(), weights=share, minlength=self.n_node_slots)
        counts = np.bincount(self.elems[idx].ravel(), minlength=self.n_node_slots)
        n = self.n_node_slots
        has = counts[:n] > 0
        self.mass[:n] = np.where(has, total[:n], self.mass[:n])

    def total_mass(self) -> float:
        return float(np.sum(self.mass[self.live_nodes()]))

    def element_masses(self) -> np.ndarray:
        idx = self.live_elements()
        rho = np.array([mat.rho for mat in self.materials])[self.mat[idx]]
        return rho * self.vol[idx]

    def edge_elements(self, a: int, b: int) -> set:
        return self.node_elements[a] & self.node_elements[b]

    def element_faces(self, e: int):
        nodes = self.elems[e]
        return [tuple(int(i) for i in nodes[list(tri)]) for tri in FACE_VERTS]

    def boundary_faces(self):
        """Oriented triangles of faces incident to exactly one element."""
        out = []
        for e in self.live_elements():
            for tri in self.element_faces(e):
                if len(self.face_map[face_key(*tri)]) == 1:
                    out.append((int(e), tri))
        return out

    def fragment_labels(self) -> np.ndarray:
        """Connected-component label of every element slot (-1 if retired).

        Elements are connected when they share a node. Labels are numbered
        in order of the lowest element handle in each component.
        """
        cached = self._live_cache.get("fragments")
        if cached is not None:
            return cached
        idx = self.live_elements()
        n_nodes, n_el = self.n_node_slots, self.n_elem_slots
        labels = np.full(n_el, -1, dtype=np.int64)
        if len(idx):
            rows = np.repeat(idx + n_nodes, 4)
            cols = self.elems[idx].ravel()
            size = n_nodes + n_el
            graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
            _, comp = connected_components(graph, directed=False)
            comp_el = comp[idx + n_nodes]
            _, first = np.unique(comp_el, return_index=True)
            rank = np.empty(len(first), dtype=np.int64)
            rank[np.argsort(first)] = np.arange(len(first))
            labels[idx] = rank[np.unique(comp_el, return_inverse=True)[1]]
        self._live_cache["fragments"] = labels
        return labels

    def fragment_count(self) -> int:
        labels = self.fragment_labels()
        return int(labels.max() + 1) if len(labels) else 0

    # ------------------------------------------------------------------ audits
    def check_adjacency(self):
        """Raise AssertionError if adjacency caches disagree with the element list."""
        expected_faces: dict[tuple, list[int]] = {}
        expected_nodes = [set() for _ in range(self.n_node_slots)]
        for e in self.live_elements():
            nodes = self.elems[e]
            for i in nodes:
                assert self.node_alive[i], f"element {e} references retired node {i}"
                expected_nodes[i].add(int(e))
            for tri in FACE_VERTS:
                expected_faces.setdefault(face_key(*nodes[list(tri)]), []).append(int(e))
        got = {k: sorted(v) for k, v in self.face_map.items()}
        want = {k: sorted(v) for k, v in expected_faces.items()}
        assert got == want, "face_map out of sync with elements"
        for k, v in want.items():
            assert len(v) <= 2, f"face {k} shared by {len(v)} elements"
        for i in range(self.n_node_slots):
            if self.node_alive[i]:
                assert self.node_elements[i] == expected_nodes[i], f"node_elements[{i}] stale"

    def degeneracy_report(self):
        idx = self.live_elements()
        x = self.m[self.elems[idx]]
        vols = volumes_batch(x)
        cond = condition_batch(x) if len(idx) else np.zeros(0)
        bad = idx[(vols < VOLUME_FLOOR) | ~(cond <= CONDITION_LIMIT)]
        return {
            "min_volume": float(vols.min()) if len(vols) else 0.0,
            "max_condition": float(cond.max()) if len(cond) else 0.0,
            "degenerate": [int(e) for e in bad],
        }

    # ------------------------------------------------------------ construction
    @classmethod
    def from_arrays(cls, m, elems, material: Material | None = None, *, body=0, validate=True):
        """Build a mesh whose world positions equal its material positions.

        ``material`` may be left ``None`` for a geometry-only skeleton; a
        material must be assigned (``assign_material``) before simulation.
        """
        m = np.asarray(m, dtype=float).reshape(-1, 3)
        elems = np.asarray(elems, dtype=np.int64).reshape(-1, 4)
        mesh = cls(len(m), len(elems))
        mesh.append_body(m, elems, material, body=body, validate=validate)
        return mesh

    def append_body(self, m, elems, material, *, body=0, p=None, v=None, fixed=None, validate=True):
        """Bulk-insert nodes and elements; returns the new node handles."""
        m = np.asarray(m, dtype=float).reshape(-1, 3)
        elems = np.asarray(elems, dtype=np.int64).reshape(-1, 4)
        if len(elems) and (elems.min() < 0 or elems.max() >= len(m)):
            raise DegenerateElementError("element references a node index out of range")
        n0 = self.n_node_slots
        self._ensure_node_capacity(n0 + len(m))
        sl = slice(n0, n0 + len(m))
        self.m[sl] = m
        self.p[sl] = m if p is None else p
        self.v[sl] = 0.0 if v is None else v
        self.mass[sl] = 0.0
        self.force[sl] = 0.0
        self.fixed[sl] = False if fixed is None else fixed
        self.node_alive[sl] = True
        self.node_body[sl] = body
        self.n_node_slots += len(m)
        self.node_elements.extend(set() for _ in range(len(m)))

        x = m[elems]
        vols = volumes_batch(x) if len(elems) else np.zeros(0)
        if validate and len(elems):
            if len({tuple(sorted(row)) for row in elems.tolist()}) != len(elems):
                raise DegenerateElementError("duplicate element in mesh")
            bad = np.flatnonzero(vols < VOLUME_FLOOR)
            if len(bad):
                e = int(bad[0])
                raise DegenerateElementError(
                    f"element {e} has volume {vols[e]:.3g} (negative orientation or degenerate)", element=e
                )
            cond = condition_batch(x)
            bad = np.flatnonzero(~(cond <= CONDITION_LIMIT))
            if len(bad):
                e = int(bad[0])
                raise DegenerateElementError(f"element {e} is ill-conditioned (cond ~ {cond[e]:.3g})", element=e)
        mid = -1 if material is None else self.material_id(material)
        e0 = self.n_elem_slots
        self._ensure_elem_capacity(e0 + len(elems))
        es = slice(e0, e0 + len(elems))
        self.elems[es] = elems + n0
        self.beta[es] = np.linalg.inv(_homogeneous(x)) if len(elems) else 0.0
        self.vol[es] = vols
        self.mat[es] = mid
        self.elem_alive[es] = True
        self.elem_body[es] = body
        self.n_elem_slots += len(elems)
        for e in range(e0, e0 + len(elems)):
            self._link(e)
        self._touch_topology()
        if validate:
            for key, lst in self.face_map.items():
                if len(lst) > 2:
                    raise DegenerateElementError(f"face {key} shared by {len(lst)} elements")
        if material is not None:
            self.assemble_masses()
        return np.arange(n0, n0 + len(m))

    def assign_material(self, material: Material, elements=None):
        mid = self.material_id(material)
        idx = self.live_elements() if elements is None else np.asarray(elements)
        self.mat[idx] = mid
        self.assemble_masses()

    def copy(self) -> "TetMesh":
        import copy

        return copy.deepcopy(self)
