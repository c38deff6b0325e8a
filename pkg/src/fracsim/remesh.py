"""Local remeshing around a fracturing node.

The node is duplicated into ``n+`` / ``n-``. Incident elements that the
fracture plane misses are handed to one copy according to side; those it
crosses are cut along the plane. Elements sharing a cut edge are subdivided
with the same cut nodes so the mesh stays conforming.

Every subdivision is done by recursive edge bisection in one global
cut-edge order. A face carrying two cuts is therefore triangulated
identically by both elements that share it, whichever of them is the
primary (plane-cut) element. Edges are bisected in descending
``(min handle, max handle)`` order. On a face ``(a, b, c)`` cut on ``ab`` and
``ac`` this draws the quad diagonal to the lower-handle of ``b`` and ``c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateElementError, RemeshAbort
from .mesh import (
    CONDITION_LIMIT,
    VOLUME_FLOOR,
    TetMesh,
    altitudes_batch,
    compute_beta,
    condition_batch,
    edge_key,
    volumes_batch,
)

log = logging.getLogger(__name__)

PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class SnapThresholds:
    """Snap a node onto the fracture plane when it is closer than
    ``distance`` (m) or the line from the origin node to it makes an angle
    below ``angle`` (rad) with the plane."""

    distance: float = 0.005
    angle: float = 0.1


class EdgeIntersection(NamedTuple):
    t: float
    material_pos: np.ndarray
    world_pos: np.ndarray
    velocity: np.ndarray


@dataclass
class EdgeCut:
    edge: tuple
    t: float
    nodes: tuple = ()
    boundary: bool = False


@dataclass
class ElementOp:
    kind: str  # "reassign", "primary" or "secondary"
    element: int
    side: int = 0
    children: list = field(default_factory=list)


@dataclass
class SplitPlan:
    origin_node: int
    point: np.ndarray
    normal: np.ndarray
    plus_node: int = -1
    minus_node: int = -1
    snapped: list = field(default_factory=list)
    edge_cuts: list = field(default_factory=list)
    element_ops: list = field(default_factory=list)

    @property
    def modified_elements(self) -> set:
        return {op.element for op in self.element_ops}

    @property
    def new_nodes(self) -> list:
        out = [self.minus_node]
        for cut in self.edge_cuts:
            out.extend(cut.nodes)
        return out


def signed_distance(points, point, normal):
    return (np.asarray(points, dtype=float) - point) @ normal


def cut_edge(mesh: TetMesh, edge, point, normal) -> EdgeIntersection | None:
    """Where the plane crosses edge ``(a, b)``, interpolated from ``a`` to ``b``.

    ``t`` is found in world space; material position, world position and
    velocity are all interpolated with that same ``t``. Returns ``None`` if
    the edge is (nearly) parallel to the plane or does not straddle it.
    """
    a, b = edge
    pa, pb = mesh.p[a], mesh.p[b]
    da = float(np.dot(pa - point, normal))
    db = float(np.dot(pb - point, normal))
    seg = pb - pa
    if abs(da - db) < PARALLEL_EPS * np.linalg.norm(seg):
        return None
    if not (da > 0.0 > db or da < 0.0 < db):
        return None
    t = da / (da - db)
    return EdgeIntersection(
        t,
        mesh.m[a] + t * (mesh.m[b] - mesh.m[a]),
        pa + t * seg,
        mesh.v[a] + t * (mesh.v[b] - mesh.v[a]),
    )


def _bisect(tet, cuts):
    """Recursively split ``tet`` along each ``(a, b, x)`` cut it contains, in order."""
    for k, (a, b, x) in enumerate(cuts):
        if a in tet and b in tet:
            keep_a = tuple(x if i == b else i for i in tet)
            keep_b = tuple(x if i == a else i for i in tet)
            rest = cuts[k + 1 :]
            return _bisect(keep_a, rest) + _bisect(keep_b, rest)
    return [tet]


class _Draft:
    """Pre-commit state of a split; nothing touches the mesh until commit."""

    def __init__(self, mesh, plan, star, snapped_d):
        self.mesh = mesh
        self.plan = plan
        self.star = star
        self.d = snapped_d  # node -> snapped signed distance
        self.cut_index = {}  # edge key -> index into plan.edge_cuts
        self.cut_pos = []  # EdgeIntersection per cut
        self.pieces = []  # (parent, kind, [(tet, side)])
        self.reassign = []  # (element, side)

    def placeholder(self, k):
        return -1 - k

    def coords(self, ident):
        if ident >= 0:
            return self.mesh.m[ident]
        return self.cut_pos[-1 - ident].material_pos

    def ordered_cuts(self, edges=None):
        keys = sorted(self.cut_index if edges is None else edges, reverse=True)
        return [(a, b, self.placeholder(self.cut_index[(a, b)])) for a, b in keys]


def _snap(mesh, n, link, point, normal, th: SnapThresholds):
    d = signed_distance(mesh.p[link], point, normal)
    dist = np.linalg.norm(mesh.p[link] - point, axis=1)
    sin_angle = np.divide(np.abs(d), dist, out=np.zeros_like(d), where=dist > 0)
    snap = (np.abs(d) < th.distance) | (sin_angle < np.sin(th.angle))
    real = dict(zip(link.tolist(), d.tolist()))
    snapped = dict(zip(link.tolist(), np.where(snap, 0.0, d).tolist()))
    snapped[n] = 0.0
    return real, snapped, [int(i) for i in link[snap]]


def plan_split(mesh: TetMesh, event, thresholds: SnapThresholds | None = None) -> _Draft:
    """Classify incident elements and compute primary cuts and subdivisions."""
    th = thresholds or SnapThresholds()
    n = int(event.node)
    if not mesh.node_alive[n]:
        raise RemeshAbort(f"node {n} does not exist")
    normal = np.asarray(event.plane_normal, dtype=float)
    norm = np.linalg.norm(normal)
    if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
        raise RemeshAbort("fracture plane normal must be unit length")
    normal = normal / norm
    point = mesh.p[n].copy()
    star = sorted(int(e) for e in mesh.node_elements[n])
    if not star:
        raise RemeshAbort(f"node {n} has no elements")
    link = np.array(sorted({int(i) for e in star for i in mesh.elems[e]} - {n}), dtype=np.int64)
    real, d, snapped = _snap(mesh, n, link, point, normal, th)
    plan = SplitPlan(n, point, normal, plus_node=n, snapped=snapped)
    draft = _Draft(mesh, plan, star, d)

    intersected = []
    for e in star:
        others = [int(i) for i in mesh.elems[e] if i != n]
        ds = [d[i] for i in others]
        if any(x > 0 for x in ds) and any(x < 0 for x in ds):
            intersected.append(e)
            for i in range(3):
                for j in range(i + 1, 3):
                    a, b = others[i], others[j]
                    if d[a] * d[b] < 0:
                        key = edge_key(a, b)
                        if key not in draft.cut_index:
                            draft.cut_index[key] = len(plan.edge_cuts)
                            hit = cut_edge(mesh, key, point, normal)
                            if hit is None:
                                raise RemeshAbort(f"edge {key} is parallel to the fracture plane")
                            plan.edge_cuts.append(EdgeCut(key, hit.t))
                            draft.cut_pos.append(hit)
        else:
            s = sum(ds)
            if s == 0.0:
                s = sum(real[i] for i in others)
            draft.reassign.append((e, 1 if s >= 0 else -1))

    cuts = draft.ordered_cuts()
    for e in intersected:
        children = []
        for tet in _bisect(tuple(int(i) for i in mesh.elems[e]), cuts):
            ds = [d.get(i, 0.0) if i >= 0 else 0.0 for i in tet]
            if any(x > 0 for x in ds) and any(x < 0 for x in ds):
                raise RemeshAbort("subdivision produced a piece straddling the plane")
            s = sum(ds)
            if s == 0.0:
                raise RemeshAbort("subdivision produced a piece lying in the plane")
            children.append((tet, 1 if s > 0 else -1))
        draft.pieces.append((e, "primary", children))

    sides = [s for _, s in draft.reassign] + [s for _, _, ch in draft.pieces for _, s in ch]
    if all(s > 0 for s in sides) or all(s < 0 for s in sides):
        raise RemeshAbort(f"all elements at node {n} lie on one side of the plane", reason="one_side")
    return draft


def boundary_edge_case(mesh: TetMesh, plan_or_draft) -> list:
    """Mark cut edges whose elements all touch the origin node.

    Such an edge lies on the material boundary, so the crack passes through
    it and it receives two co-located nodes, one per side.
    """
    draft = plan_or_draft
    plan = draft.plan
    star = set(draft.star)
    marked = []
    for cut in plan.edge_cuts:
        around = mesh.edge_elements(*cut.edge)
        cut.boundary = around <= star
        if cut.boundary:
            marked.append(cut.edge)
    return marked


def neighbor_consistency(mesh: TetMesh, plan_or_draft) -> list:
    """Subdivide non-incident elements that share a cut edge.

    Only existing nodes and the plan's cut nodes are used, and the pieces
    keep the original (unsplit) nodes, so no discontinuity opens there.
    Returns the affected element handles.
    """
    draft = plan_or_draft
    star = set(draft.star)
    touched: dict[int, list] = {}
    for key in draft.cut_index:
        for e in sorted(mesh.edge_elements(*key) - star):
            touched.setdefault(e, []).append(key)
    for e in sorted(touched):
        cuts = draft.ordered_cuts(touched[e])
        children = [(tet, 0) for tet in _bisect(tuple(int(i) for i in mesh.elems[e]), cuts)]
        draft.pieces.append((e, "secondary", children))
    return sorted(touched)


def _validate(draft: _Draft, th: SnapThresholds):
    mesh = draft.mesh
    plan = draft.plan
    # cut nodes must keep clear of every node of the elements around the edge
    for k, cut in enumerate(plan.edge_cuts):
        x = draft.cut_pos[k].world_pos
        near = {int(i) for e in mesh.edge_elements(*cut.edge) for i in mesh.elems[e]}
        gap = np.min(np.linalg.norm(mesh.p[sorted(near)] - x, axis=1))
        if gap < th.distance:
            raise RemeshAbort(f"cut on edge {cut.edge} lands {gap:.3g} m from an existing node")
    tets = [tet for _, _, children in draft.pieces for tet, _ in children]
    if not tets:
        return []
    x = np.array([[draft.coords(i) for i in tet] for tet in tets])
    vols = volumes_batch(x)
    if np.any(vols < VOLUME_FLOOR):
        raise RemeshAbort(f"subdivision volume {vols.min():.3g} below floor")
    cond = condition_batch(x)
    if np.any(~(cond <= CONDITION_LIMIT)):
        raise RemeshAbort(f"subdivision condition {cond.max():.3g} above limit")
    # the snap distance doubles as the thinnest piece a cut may leave behind;
    # slivers would force a far smaller stable time step than the parent mesh
    h = altitudes_batch(x)
    if np.any(h < th.distance):
        raise RemeshAbort(f"subdivision altitude {h.min():.3g} m below snap distance {th.distance:.3g} m")
    return tets


def _commit(draft: _Draft):
    mesh = draft.mesh
    plan = draft.plan
    n = plan.origin_node
    body = int(mesh.node_body[n])
    minus = mesh.add_node(mesh.m[n], mesh.p[n], mesh.v[n], body=body, fixed=bool(mesh.fixed[n]))
    plan.minus_node = minus

    mapping_plus = {n: n}
    mapping_minus = {n: minus}
    for k, cut in enumerate(plan.edge_cuts):
        hit = draft.cut_pos[k]
        a, b = cut.edge
        fixed = bool(mesh.fixed[a] and mesh.fixed[b])
        first = mesh.add_node(hit.material_pos, hit.world_pos, hit.velocity, body=body, fixed=fixed)
        ph = draft.placeholder(k)
        mapping_plus[ph] = first
        if cut.boundary:
            second = mesh.add_node(hit.material_pos, hit.world_pos, hit.velocity, body=body, fixed=fixed)
            mapping_minus[ph] = second
            cut.nodes = (first, second)
        else:
            mapping_minus[ph] = first
            cut.nodes = (first,)

    for e, side in draft.reassign:
        if side < 0:
            nodes = [mapping_minus.get(int(i), int(i)) for i in mesh.elems[e]]
            mesh.replace_element_nodes(e, nodes)
        plan.element_ops.append(ElementOp("reassign", e, side))

    for parent, kind, children in draft.pieces:
        mat = int(mesh.mat[parent])
        pbody = int(mesh.elem_body[parent])
        mesh.remove_element(parent)
        handles = []
        for tet, side in children:
            table = mapping_minus if side < 0 else mapping_plus
            nodes = [table.get(i, i) for i in tet]
            beta = compute_beta(*mesh.m[nodes])
            handles.append(mesh.add_element(nodes, mat, body=pbody, beta=beta))
        plan.element_ops.append(ElementOp(kind, parent, 0, handles))

    mesh.assemble_masses()
    return plan


def split_node(mesh: TetMesh, event, thresholds: SnapThresholds | None = None) -> SplitPlan:
    """Duplicate ``event.node`` and remesh its neighbourhood along the plane.

    The plane passes through the node's world position with normal
    ``event.plane_normal``; elements on the positive side keep the original
    handle (``n+``), the negative side gets a new node (``n-``).

    Raises
    ------
    RemeshAbort
        When no discontinuity would result or a produced tetrahedron would be
        degenerate. The mesh is unchanged in that case.
    """
    th = thresholds or SnapThresholds()
    draft = plan_split(mesh, event, th)
    boundary_edge_case(mesh, draft)
    neighbor_consistency(mesh, draft)
    _validate(draft, th)
    try:
        return _commit(draft)
    except DegenerateElementError as exc:  # pragma: no cover - guarded by _validate
        raise RuntimeError(f"mesh corrupted during commit: {exc}") from exc
