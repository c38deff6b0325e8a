import numpy as np
import pytest

from fracsim.grid import box_mesh
from fracsim.mesh import Material, TetMesh

STEEL_LIKE = Material(lam=2.0e6, mu=3.0e6, phi=200.0, psi=300.0, rho=1000.0, tau=50.0)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_tet(rng, min_volume=1e-3):
    """Random positively oriented, reasonably shaped tetrahedron."""
    while True:
        x = rng.uniform(-1.0, 1.0, size=(4, 3))
        a, b, c = x[1] - x[0], x[2] - x[0], x[3] - x[0]
        vol = np.dot(np.cross(a, b), c) / 6.0
        if vol < 0:
            x[[2, 3]] = x[[3, 2]]
            vol = -vol
        if vol > min_volume:
            return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def material():
    return STEEL_LIKE


@pytest.fixture
def cube_mesh():
    m, e = box_mesh((2, 2, 2), (1.0, 1.0, 1.0))
    return TetMesh.from_arrays(m, e, STEEL_LIKE)


def single_tet_mesh(material=STEEL_LIKE):
    from fracsim.grid import single_tet

    m, e = single_tet()
    return TetMesh.from_arrays(m, e, material)


def jittered_box(rng, shape=(3, 3, 3), size=1.0, jitter=0.15):
    """Box mesh with interior nodes displaced by up to ``jitter`` cells."""
    m, e = box_mesh(shape, (size, size, size))
    cell = size / np.array(shape)
    interior = np.all((m > 1e-9) & (m < size - 1e-9), axis=1)
    m[interior] += rng.uniform(-jitter, jitter, size=(interior.sum(), 3)) * cell
    return m, e


def momentum(mesh):
    live = mesh.live_nodes()
    return (mesh.mass[live, None] * mesh.v[live]).sum(axis=0)


def audit_split(before, after, plan, thresholds):
    """Check one applied split against conservation and snapping rules.

    ``before`` is a copy of the mesh taken just ahead of the split.
    """
    for op in plan.element_ops:
        if op.kind == "reassign":
            continue
        child = sum(after.vol[c] for c in op.children)
        assert abs(child - before.vol[op.element]) <= 1e-9 * before.vol[op.element]
    m0, m1 = before.total_mass(), after.total_mass()
    assert abs(m1 - m0) <= 1e-9 * m0
    p0, p1 = momentum(before), momentum(after)
    scale = (before.mass[before.live_nodes()] * np.linalg.norm(before.v[before.live_nodes()], axis=1)).sum()
    assert np.linalg.norm(p1 - p0) <= 1e-9 * max(scale, 1e-300)
    after.check_adjacency()
    old = before.p[before.live_nodes()]
    for cut in plan.edge_cuts:
        for node in cut.nodes:
            assert np.linalg.norm(old - after.p[node], axis=1).min() >= thresholds.distance
        for end in cut.edge:
            off = before.p[end] - plan.point
            d = abs(off @ plan.normal)
            assert d >= thresholds.distance
            assert np.arcsin(min(1.0, d / np.linalg.norm(off))) >= thresholds.angle


# one summary line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE: dict[str, str] = {}


def _criterion_order(key):
    digits = "".join(c for c in key if c.isdigit())
    return int(digits), key


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=_criterion_order):
            terminalreporter.write_line(ACCEPTANCE[key])
