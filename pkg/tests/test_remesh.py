import numpy as np
import pytest
from conftest import STEEL_LIKE, audit_split, jittered_box, single_tet_mesh

from fracsim.errors import RemeshAbort
from fracsim.fracture import FractureEvent
from fracsim.grid import box_mesh
from fracsim.mesh import TetMesh, altitudes_batch
from fracsim.remesh import SnapThresholds, cut_edge, split_node


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def event(node, normal):
    return FractureEvent(node, unit(normal), 1.0)


def centre_node(m):
    return int(np.argmin(np.linalg.norm(m - m.mean(axis=0), axis=1)))


def test_cut_edge_midpoint_and_quarter():
    mesh = single_tet_mesh()
    mesh.v[1] = [2.0, 0.0, 0.0]
    hit = cut_edge(mesh, (0, 1), np.array([0.5, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
    assert hit.t == pytest.approx(0.5)
    np.testing.assert_allclose(hit.world_pos, [0.5, 0, 0])
    np.testing.assert_allclose(hit.material_pos, [0.5, 0, 0])
    np.testing.assert_allclose(hit.velocity, [1.0, 0, 0])
    # signed distances +3 and -1 (scaled by 1/4)
    hit = cut_edge(mesh, (0, 1), np.array([0.75, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))
    assert hit.t == pytest.approx(0.75)


def test_cut_edge_parallel_or_same_side():
    mesh = single_tet_mesh()
    assert cut_edge(mesh, (0, 1), np.zeros(3), np.array([0.0, 0.0, 1.0])) is None
    assert cut_edge(mesh, (0, 1), np.array([2.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])) is None


def test_cut_edge_lies_on_plane(rng):
    m, e = box_mesh((1, 1, 1))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    mesh.p[: len(m)] += 0.1 * rng.normal(size=m.shape)
    hits = 0
    for _ in range(200):
        a, b = rng.choice(len(m), 2, replace=False)
        n = unit(rng.normal(size=3))
        point = mesh.p[a] + rng.uniform(0, 1) * (mesh.p[b] - mesh.p[a]) + rng.normal(size=3) * 0.01
        hit = cut_edge(mesh, (a, b), point, n)
        if hit is not None:
            hits += 1
            assert abs((hit.world_pos - point) @ n) < 1e-10
    assert hits > 50


def test_single_tet_three_way_split():
    mesh = single_tet_mesh()
    th = SnapThresholds()
    before = mesh.copy()
    # plane through node 0 separating vertex 1 from vertices 2 and 3
    plan = split_node(mesh, event(0, [1.0, -0.5, -0.5]), th)
    audit_split(before, mesh, plan, th)
    (op,) = plan.element_ops
    assert op.kind == "primary" and len(op.children) == 3
    sides = [int(plan.minus_node in mesh.elems[c]) for c in op.children]
    assert sorted(sides) in ([0, 1, 1], [0, 0, 1])
    # every cut edge is on the boundary, so each gets two nodes
    assert all(len(c.nodes) == 2 for c in plan.edge_cuts)
    assert mesh.fragment_count() == 2


def test_pure_reassignment():
    m, e = box_mesh((2, 2, 2))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    n = centre_node(m)
    count = mesh.element_count
    plan = split_node(mesh, event(n, [0.0, 0.0, 1.0]))
    assert {op.kind for op in plan.element_ops} == {"reassign"}
    assert plan.edge_cuts == []
    assert mesh.element_count == count
    assert mesh.node_count == len(m) + 1
    up = [e for e in mesh.node_elements[n]]
    down = [e for e in mesh.node_elements[plan.minus_node]]
    assert up and down
    assert all(mesh.m[mesh.elems[x]][:, 2].mean() > 0.5 for x in up)
    assert all(mesh.m[mesh.elems[x]][:, 2].mean() < 0.5 for x in down)


def test_near_node_snapped():
    m, e = box_mesh((2, 2, 2))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    n = centre_node(m)
    th = SnapThresholds(distance=0.005, angle=0.0)
    # a tilt leaving the in-plane nodes within 3 mm of the plane
    tilt = 0.003 / 0.5
    nodes_before = mesh.node_count
    plan = split_node(mesh, event(n, [tilt, 0.0, 1.0]), th)
    assert plan.edge_cuts == []
    assert len(plan.snapped) > 0
    assert mesh.node_count == nodes_before + 1


def test_neighbour_splits_follow_shared_cuts(rng):
    th = SnapThresholds()
    m, e = box_mesh((3, 3, 3))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    n = int(np.argmin(np.linalg.norm(m - [1 / 3, 1 / 3, 1 / 3], axis=1)))
    before = mesh.copy()
    plan = split_node(mesh, event(n, [0.31, 0.52, 0.8]), th)
    audit_split(before, mesh, plan, th)
    secondary = [op for op in plan.element_ops if op.kind == "secondary"]
    assert secondary
    cut_edges = {c.edge for c in plan.edge_cuts}
    cut_nodes = {x for c in plan.edge_cuts for x in c.nodes}
    star = set(before.node_elements[n])
    for op in secondary:
        assert op.element not in star
        verts = set(before.elems[op.element].tolist())
        k = sum(1 for a, b in cut_edges if a in verts and b in verts)
        # one shared edge -> 2 pieces, two edges of a shared face -> 3 pieces
        assert len(op.children) == {1: 2, 2: 3}[k]
        for c in op.children:
            used = set(mesh.elems[c].tolist())
            assert plan.minus_node not in used
            assert used <= verts | cut_nodes
    assert any(len(op.children) == 2 for op in secondary)
    assert any(len(op.children) == 3 for op in secondary)


def test_interior_cut_has_single_node():
    m, e = box_mesh((3, 3, 3))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    n = int(np.argmin(np.linalg.norm(m - [1 / 3, 1 / 3, 1 / 3], axis=1)))
    plan = split_node(mesh, event(n, [0.31, 0.52, 0.8]))
    interior = [c for c in plan.edge_cuts if not c.boundary]
    assert interior and all(len(c.nodes) == 1 for c in interior)


def test_one_side_aborts_and_leaves_mesh():
    m, e = box_mesh((1, 1, 1))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    corner = int(np.argmin(np.linalg.norm(m, axis=1)))
    snap = mesh.copy()
    with pytest.raises(RemeshAbort) as info:
        split_node(mesh, event(corner, [1.0, 1.0, 1.0]))
    assert info.value.reason == "one_side"
    assert mesh.element_count == snap.element_count and mesh.node_count == snap.node_count
    mesh.check_adjacency()


def test_sliver_guard_rejects_thin_pieces():
    # a flat parent: any cut leaves pieces thinner than 4 cm
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, 0.03]])
    normal = unit([1.0, -0.8, 0.0])
    mesh = TetMesh.from_arrays(x, [[0, 1, 2, 3]], STEEL_LIKE)
    with pytest.raises(RemeshAbort) as info:
        split_node(mesh, event(0, normal), SnapThresholds(distance=0.04, angle=0.1))
    assert info.value.reason == "degenerate"
    assert "altitude" in str(info.value)
    assert mesh.element_count == 1 and mesh.node_count == 4
    # the same cut is accepted when the floor is below the piece thickness
    plan = split_node(mesh, event(0, normal), SnapThresholds(distance=0.005, angle=0.1))
    assert len(plan.element_ops[0].children) == 3


def test_produced_pieces_clear_snap_distance(rng):
    th = SnapThresholds()
    done = 0
    for _ in range(60):
        m, e = jittered_box(rng, (2, 2, 2))
        mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
        try:
            split_node(mesh, event(int(rng.integers(len(m))), rng.normal(size=3)), th)
        except RemeshAbort:
            continue
        done += 1
        live = mesh.live_elements()
        assert altitudes_batch(mesh.m[mesh.elems[live]]).min() >= th.distance
    assert done > 10


def test_repeated_splits_keep_faces_consistent(rng):
    th = SnapThresholds()
    m, e = jittered_box(rng, (3, 3, 3))
    mesh = TetMesh.from_arrays(m, e, STEEL_LIKE)
    applied = 0
    for _ in range(80):
        live = mesh.live_nodes()
        node = int(rng.choice(live))
        before = mesh.copy()
        try:
            plan = split_node(mesh, event(node, rng.normal(size=3)), th)
        except RemeshAbort:
            continue
        applied += 1
        audit_split(before, mesh, plan, th)
    assert applied > 10
    assert mesh.fragment_count() >= 1


def test_fixed_flag_and_velocity_copied():
    mesh = single_tet_mesh()
    mesh.fixed[0] = True
    mesh.v[:4] = [[0, 0, 1], [1, 0, 1], [0, 1, 1], [0, 0, 2]]
    plan = split_node(mesh, event(0, [1.0, -0.5, -0.5]))
    assert mesh.fixed[plan.minus_node]
    np.testing.assert_array_equal(mesh.v[plan.minus_node], mesh.v[0])
    np.testing.assert_array_equal(mesh.p[plan.minus_node], mesh.p[0])
