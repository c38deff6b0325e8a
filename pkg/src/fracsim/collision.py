"""Penalty contact: ground plane, node penetration and overlap volume.

Every contact is applied as an action on one set of nodes and an equal and
opposite reaction on another, distributed by barycentric weights of the
application point, so each pair exerts zero net force and zero net moment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import FACE_VERTS, TetMesh

METHODS = ("node_penetration", "overlap_volume", "none")


@dataclass
class ContactForce:
    """A force on a node (``kind="node"``) or on an element at ``point``."""

    target: int
    kind: str
    force: np.ndarray
    point: np.ndarray


@dataclass(frozen=True)
class CollisionSettings:
    """Contact parameters.

    ``damping`` is a Hunt-Crossley style coefficient (s/m): the normal force
    is ``k * depth * (1 + damping * approach_speed)`` clamped at zero, which
    keeps the force continuous at zero depth.
    """

    method: str = "node_penetration"
    stiffness: float = 1e6
    volume_stiffness: float = 1e10
    damping: float = 0.0
    ground: bool = False
    ground_height: float = 0.0
    ground_normal: tuple = (0.0, 0.0, 1.0)
    ground_stiffness: float = 1e6
    rebuild_interval: int = 64

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"collision method must be one of {METHODS}, got {self.method!r}")
        for name in ("stiffness", "volume_stiffness", "ground_stiffness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.damping >= 0:
            raise ValueError("damping must be >= 0")
        if self.rebuild_interval < 1:
            raise ValueError("rebuild_interval must be >= 1")
        if not np.linalg.norm(self.ground_normal) > 0:
            raise ValueError("ground_normal must be non-zero")


def accumulate(contacts, mesh: TetMesh, out=None) -> np.ndarray:
    """Sum contacts into a per-node force array.

    Element contacts are spread over the element's nodes with the barycentric
    weights of the application point.
    """
    n = mesh.n_node_slots
    out = np.zeros((n, 3)) if out is None else out
    for c in contacts:
        if c.kind == "node":
            out[c.target] += c.force
        else:
            nodes = mesh.elems[c.target]
            w = _world_barycentric(mesh.p[nodes][None], c.point[None])[0]
            out[nodes] += w[:, None] * c.force
    return out


def _penalty(k, depth, approach, damping):
    return np.maximum(0.0, k * depth * (1.0 + damping * approach))


# ---------------------------------------------------------------- ground
def ground_forces(mesh: TetMesh, plane=((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)), stiffness=1e6, damping=0.0):
    """Penalty contacts for nodes below a half-space boundary.

    ``plane`` is ``(point, normal)``; the normal points out of the ground.
    """
    nodes, force = _ground_array(mesh, plane, stiffness, damping)
    return [ContactForce(int(i), "node", f, mesh.p[i].copy()) for i, f in zip(nodes, force)]


def _ground_array(mesh, plane, stiffness, damping):
    point, normal = (np.asarray(a, dtype=float) for a in plane)
    normal = normal / np.linalg.norm(normal)
    live = mesh.live_nodes()
    d = (mesh.p[live] - point) @ normal
    below = d < 0.0
    idx = live[below]
    depth = -d[below]
    approach = -(mesh.v[idx] @ normal)
    mag = _penalty(stiffness, depth, approach, damping)
    return idx, mag[:, None] * normal


# ------------------------------------------------------------ geometry utils
def _world_inverse(x):
    """Inverse homogeneous matrices of world tets ``(k, 4, 3)``.

    Flat or inverted-to-flat tets get an all-zero inverse, which makes every
    inside test fail for them.
    """
    h = np.ones((len(x), 4, 4))
    h[:, :3, :] = np.swapaxes(x, 1, 2)
    out = np.zeros_like(h)
    if len(x) == 0:
        return out
    edges = x[:, 1:] - x[:, :1]
    scale = np.max(np.linalg.norm(edges, axis=2), axis=1) ** 3
    det = np.linalg.det(h)
    ok = np.abs(det) > 1e-12 * scale
    if np.any(ok):
        out[ok] = np.linalg.inv(h[ok])
    return out


def _world_barycentric(x, points):
    w = _world_inverse(x)
    ph = np.concatenate([points, np.ones((len(points), 1))], axis=1)
    return np.einsum("kij,kj->ki", w, ph)


# ------------------------------------------------------- node penetration
def _node_element_candidates(mesh, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    a, b = pairs[:, 0], pairs[:, 1]
    na = mesh.elems[a]
    nb = mesh.elems[b]
    cand = np.concatenate(
        [
            np.column_stack([na.ravel(), np.repeat(b, 4)]),
            np.column_stack([nb.ravel(), np.repeat(a, 4)]),
        ]
    )
    return np.unique(cand, axis=0)


def _penetrations(mesh, cand):
    """Inside tests for (node, element) rows; returns mask, weights, face, distance, normal."""
    x = mesh.p[mesh.elems[cand[:, 1]]]
    w = _world_inverse(x)
    pts = mesh.p[cand[:, 0]]
    bary = np.einsum("kij,kj->ki", w, np.concatenate([pts, np.ones((len(pts), 1))], axis=1))
    inside = np.all(bary > 0.0, axis=1)
    grad = w[:, :, :3]
    gnorm = np.linalg.norm(grad, axis=2)
    dist = bary / gnorm
    face = np.argmin(dist, axis=1)
    rows = np.arange(len(cand))
    normal = -grad[rows, face] / gnorm[rows, face][:, None]
    return inside, bary, dist[rows, face], normal


def node_penetration_forces(mesh: TetMesh, pairs, stiffness=1e6, damping=0.0):
    """Push nodes found inside a foreign element out through its nearest face.

    Each (node, element) combination is counted once however many candidate
    element pairs reveal it.
    """
    cand = _node_element_candidates(mesh, pairs)
    if len(cand) == 0:
        return []
    inside, bary, depth, normal = _penetrations(mesh, cand)
    return _penetration_contacts(mesh, cand[inside], bary[inside], depth[inside], normal[inside], stiffness, damping)


def _penetration_contacts(mesh, cand, bary, depth, normal, stiffness, damping):
    out = []
    if len(cand) == 0:
        return out
    nodes_b = mesh.elems[cand[:, 1]]
    v_host = np.einsum("ki,kix->kx", bary, mesh.v[nodes_b])
    approach = -np.einsum("kx,kx->k", mesh.v[cand[:, 0]] - v_host, normal)
    mag = _penalty(stiffness, depth, approach, damping)
    for (node, elem), m, nrm in zip(cand, mag, normal):
        if m == 0.0:
            continue
        f = m * nrm
        pt = mesh.p[node].copy()
        out.append(ContactForce(int(node), "node", f, pt))
        out.append(ContactForce(int(elem), "element", -f, pt))
    return out


# --------------------------------------------------------- overlap volume
def _clip_polygon(poly, d, eps):
    out = []
    cut = []
    k = len(poly)
    for i in range(k):
        cur, nxt = poly[i], poly[(i + 1) % k]
        dc, dn = d[i], d[(i + 1) % k]
        if dc >= -eps:
            out.append(cur)
            if abs(dc) <= eps:
                cut.append(cur)
        if (dc > eps and dn < -eps) or (dc < -eps and dn > eps):
            x = cur + (dc / (dc - dn)) * (nxt - cur)
            out.append(x)
            cut.append(x)
    return out, cut


def _cap(points, normal, eps):
    if len(points) < 3:
        return None
    pts = np.array(points)
    keep = [pts[0]]
    for q in pts[1:]:
        if min(np.linalg.norm(q - r) for r in keep) > eps:
            keep.append(q)
    if len(keep) < 3:
        return None
    pts = np.array(keep)
    c = pts.mean(axis=0)
    e1 = pts[0] - c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    ang = np.arctan2((pts - c) @ e2, (pts - c) @ e1)
    return pts[np.argsort(ang, kind="stable")]


def _tet_faces(x):
    return [x[list(tri)] for tri in FACE_VERTS]


def clip_tets(xa, xb, eps=1e-14):
    """Intersection of tets ``xa`` and ``xb`` (world vertex arrays ``(4, 3)``).

    Returns a list of ``(polygon, owner, face)`` with outward-oriented
    polygons; ``owner`` is 0 for pieces of A's faces, 1 for B's faces.
    """
    scale = max(np.ptp(xa, axis=0).max(), np.ptp(xb, axis=0).max(), 1e-300)
    tol = eps * scale
    faces = [(poly, 0, i) for i, poly in enumerate(_tet_faces(xa))]
    wb = _world_inverse(xb[None])[0]
    for i in range(4):
        g = wb[i, :3]
        gn = np.linalg.norm(g)
        normal = -g / gn
        new = []
        cap_pts = []
        flush = False
        for poly, owner, fid in faces:
            poly = np.asarray(poly)
            d = (poly @ g + wb[i, 3]) / gn
            if np.all(d >= -tol):
                new.append((poly, owner, fid))
                cap_pts.extend(p for p, di in zip(poly, d) if abs(di) <= tol)
                # a face lying in the plane already is the cross-section
                flush |= bool(np.all(np.abs(d) <= tol))
                continue
            if np.all(d <= tol):
                cap_pts.extend(p for p, di in zip(poly, d) if abs(di) <= tol)
                continue
            out, cut = _clip_polygon(list(poly), d, tol)
            cap_pts.extend(cut)
            if len(out) >= 3:
                new.append((np.array(out), owner, fid))
        cap = None if flush else _cap(cap_pts, normal, tol)
        if cap is not None and new:
            new.append((cap, 1, i))
        faces = new
        if not faces:
            break
    return faces


def polyhedron_volume(faces, ref=None):
    """Volume and centroid of a closed polyhedron from outward faces."""
    if not faces:
        return 0.0, np.zeros(3)
    if ref is None:
        ref = np.mean(np.concatenate([f[0] for f in faces]), axis=0)
    vol = 0.0
    mom = np.zeros(3)
    for poly, *_ in faces:
        a = poly[0] - ref
        for j in range(1, len(poly) - 1):
            b = poly[j] - ref
            c = poly[j + 1] - ref
            v = np.dot(a, np.cross(b, c)) / 6.0
            vol += v
            mom += v * (a + b + c) / 4.0
    if vol <= 0.0:
        return 0.0, ref.copy()
    return vol, ref + mom / vol


def area_normal(faces, owner=1):
    total = np.zeros(3)
    for poly, who, _ in faces:
        if who != owner:
            continue
        a = poly[0]
        for j in range(1, len(poly) - 1):
            total += 0.5 * np.cross(poly[j] - a, poly[j + 1] - a)
    return total


def overlap(xa, xb):
    """Overlap volume, centroid and unit push direction for A (or ``None``).

    The direction is the normalised sum of area-weighted outward normals of
    B's faces bounding the overlap. It is ``None`` when one tet contains the
    other, since those faces then vanish or cancel.
    """
    faces = clip_tets(np.asarray(xa, dtype=float), np.asarray(xb, dtype=float))
    vol, cen = polyhedron_volume(faces)
    if vol <= 0.0:
        return 0.0, cen, np.zeros(3)
    n = area_normal(faces, owner=1)
    size = np.linalg.norm(n)
    scale = sum(0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) for p in _tet_faces(np.asarray(xb)))
    if size <= 1e-9 * scale:
        return vol, cen, None
    return vol, cen, n / size


def overlap_volume_forces(mesh: TetMesh, pairs, stiffness=1e10, damping=0.0, fallback_stiffness=1e6):
    """Contacts proportional to the overlap volume of each element pair.

    Pairs where one element contains the other fall back to node penetration.
    """
    out = []
    fallback = []
    for a, b in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
        xa = mesh.p[mesh.elems[a]]
        xb = mesh.p[mesh.elems[b]]
        vol, cen, direction = overlap(xa, xb)
        if vol <= 0.0:
            continue
        if direction is None:
            fallback.append((a, b))
            continue
        wa = _world_barycentric(xa[None], cen[None])[0]
        wb = _world_barycentric(xb[None], cen[None])[0]
        rel = wa @ mesh.v[mesh.elems[a]] - wb @ mesh.v[mesh.elems[b]]
        approach = -float(rel @ direction)
        mag = float(_penalty(stiffness, vol, approach, damping))
        if mag == 0.0:
            continue
        f = mag * direction
        out.append(ContactForce(int(a), "element", f, cen.copy()))
        out.append(ContactForce(int(b), "element", -f, cen.copy()))
    if fallback:
        out.extend(node_penetration_forces(mesh, fallback, fallback_stiffness, damping))
    return out


# --------------------------------------------------------------- broadphase
def element_bounds(mesh: TetMesh, elements):
    x = mesh.p[mesh.elems[elements]]
    return x.min(axis=1), x.max(axis=1)


def _overlaps(lo_a, hi_a, lo_b, hi_b):
    return np.all((lo_a <= hi_b) & (lo_b <= hi_a), axis=-1)


@dataclass
class BroadphaseTree:
    """AABB hierarchy over elements with a cached traversal front.

    Nodes are stored in preorder; ``leaf[i]`` is the element handle of a leaf
    or -1. The front is the set of node pairs where the last traversal
    stopped; the next query restarts from it instead of from the root.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    depth: np.ndarray
    topology_version: int
    built_step: int = 0
    front: np.ndarray = field(default_factory=lambda: np.zeros((1, 2), dtype=np.int64))

    @classmethod
    def build(cls, mesh: TetMesh, step=0):
        elems = mesh.live_elements()
        lo_e, hi_e = element_bounds(mesh, elems)
        centers = 0.5 * (lo_e + hi_e)
        los, his, left, right, leaf, depth = [], [], [], [], [], []

        def node(ids, d):
            k = len(leaf)
            los.append(lo_e[ids].min(axis=0))
            his.append(hi_e[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            depth.append(d)
            if len(ids) == 1:
                leaf.append(int(elems[ids[0]]))
                return k
            leaf.append(-1)
            c = centers[ids]
            axis = int(np.argmax(np.ptp(c, axis=0)))
            order = ids[np.argsort(c[:, axis], kind="stable")]
            half = len(order) // 2
            left[k] = node(order[:half], d + 1)
            right[k] = node(order[half:], d + 1)
            return k

        if len(elems):
            node(np.arange(len(elems)), 0)
        tree = cls(
            np.array(los).reshape(-1, 3),
            np.array(his).reshape(-1, 3),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(leaf, dtype=np.int64),
            np.array(depth, dtype=np.int64),
            mesh.topology_version,
            step,
        )
        tree.front = np.zeros((1 if len(elems) else 0, 2), dtype=np.int64)
        return tree

    def refit(self, mesh: TetMesh):
        if len(self.leaf) == 0:
            return
        is_leaf = self.leaf >= 0
        lo_e, hi_e = element_bounds(mesh, self.leaf[is_leaf])
        self.lo[is_leaf] = lo_e
        self.hi[is_leaf] = hi_e
        for d in range(int(self.depth.max()), -1, -1):
            k = np.flatnonzero((self.depth == d) & ~is_leaf)
            if len(k) == 0:
                continue
            l, r = self.left[k], self.right[k]
            self.lo[k] = np.minimum(self.lo[l], self.lo[r])
            self.hi[k] = np.maximum(self.hi[l], self.hi[r])

    def query(self):
        """Overlapping leaf pairs ``(e1, e2)`` with ``e1 < e2``, updating the front."""
        if len(self.front) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        fa, fb = self.front[:, 0], self.front[:, 1]
        stopped = []
        hits = []
        while len(fa):
            ov = _overlaps(self.lo[fa], self.hi[fa], self.lo[fb], self.hi[fb])
            la = self.leaf[fa] >= 0
            lb = self.leaf[fb] >= 0
            done = ~ov | (la & lb)
            stopped.append(np.column_stack([fa[done], fb[done]]))
            h = ov & la & lb & (fa != fb)
            hits.append(np.column_stack([self.leaf[fa[h]], self.leaf[fb[h]]]))
            ea, eb = fa[~done], fb[~done]
            same = ea == eb
            sa = ea[same]
            # a node against itself: both children and their cross pair
            n1a = np.concatenate([self.left[sa], self.right[sa], self.left[sa]])
            n1b = np.concatenate([self.left[sa], self.right[sa], self.right[sa]])
            da, db = ea[~same], eb[~same]
            leaf_a = self.leaf[da] >= 0
            leaf_b = self.leaf[db] >= 0
            bigger_a = (self.hi[da] - self.lo[da]).sum(axis=1) >= (self.hi[db] - self.lo[db]).sum(axis=1)
            split_a = ~leaf_a & (bigger_a | leaf_b)
            xa, xb = da[split_a], db[split_a]
            ya, yb = da[~split_a], db[~split_a]
            fa = np.concatenate([n1a, self.left[xa], self.right[xa], ya, ya])
            fb = np.concatenate([n1b, xb, xb, self.left[yb], self.right[yb]])
        self.front = np.concatenate(stopped) if stopped else np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(hits) if hits else np.zeros((0, 2), dtype=np.int64)
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0) if len(pairs) else pairs.reshape(0, 2)


def broadphase(mesh: TetMesh, tree: BroadphaseTree, fragment_labels=None):
    """Candidate element pairs whose current AABBs overlap.

    Pairs sharing a node are dropped. Pairs within one body are kept only
    when that body has split into more than one fragment; pass the
    per-element ``fragment_labels`` to enable that, otherwise all same-body
    pairs are dropped.
    """
    pairs = tree.query()
    if len(pairs) == 0:
        return pairs
    na = mesh.elems[pairs[:, 0]]
    nb = mesh.elems[pairs[:, 1]]
    shares = np.any(na[:, :, None] == nb[:, None, :], axis=(1, 2))
    keep = ~shares
    ba = mesh.elem_body[pairs[:, 0]]
    bb = mesh.elem_body[pairs[:, 1]]
    same = ba == bb
    if fragment_labels is None:
        keep &= ~same
    else:
        live = mesh.live_elements()
        bodies = mesh.elem_body[live]
        labels = fragment_labels[live]
        multi = set()
        for body in np.unique(bodies):
            if len(np.unique(labels[bodies == body])) > 1:
                multi.add(int(body))
        allowed = np.isin(ba, sorted(multi)) if multi else np.zeros(len(pairs), dtype=bool)
        keep &= ~same | allowed
    return pairs[keep]


def brute_force_pairs(mesh: TetMesh):
    """All overlapping-AABB element pairs, O(n^2); a reference for tests."""
    elems = mesh.live_elements()
    lo, hi = element_bounds(mesh, elems)
    ov = _overlaps(lo[:, None], hi[:, None], lo[None], hi[None])
    i, j = np.nonzero(np.triu(ov, 1))
    return np.column_stack([elems[i], elems[j]])


class CollisionWorld:
    """Per-simulation contact state: settings and the broadphase tree."""

    def __init__(self, settings: CollisionSettings | None = None):
        self.settings = settings or CollisionSettings()
        self.tree: BroadphaseTree | None = None
        self.step = 0

    def forces(self, mesh: TetMesh, fragment_labels=None) -> np.ndarray:
        s = self.settings
        out = np.zeros((mesh.n_node_slots, 3))
        if s.ground:
            plane = ((0.0, 0.0, 0.0), np.asarray(s.ground_normal, dtype=float))
            normal = plane[1] / np.linalg.norm(plane[1])
            plane = (normal * s.ground_height, normal)
            idx, f = _ground_array(mesh, plane, s.ground_stiffness, s.damping)
            out[idx] += f
        if s.method != "none" and mesh.element_count > 1:
            stale = (
                self.tree is None
                or self.tree.topology_version != mesh.topology_version
                or self.step - self.tree.built_step >= s.rebuild_interval
            )
            if stale:
                self.tree = BroadphaseTree.build(mesh, self.step)
            else:
                self.tree.refit(mesh)
            pairs = broadphase(mesh, self.tree, fragment_labels)
            if len(pairs):
                if s.method == "node_penetration":
                    contacts = node_penetration_forces(mesh, pairs, s.stiffness, s.damping)
                else:
                    contacts = overlap_volume_forces(mesh, pairs, s.volume_stiffness, s.damping, s.stiffness)
                accumulate(contacts, mesh, out)
        self.step += 1
        return out
