import numpy as np
import pytest
from conftest import STEEL_LIKE, random_rotation, random_tet

from fracsim.continuum import (
    DeformationState,
    deformation_partials,
    general_stress,
    green_strain,
    isotropic_stress,
    isotropic_tensor,
    partials_from,
    potential_densities,
    strain_rate,
    stress,
    traction,
)
from fracsim.errors import InvalidInputError
from fracsim.mesh import PRESETS, Material, TetMesh, compute_beta

I3 = np.eye(3)
Z3 = np.zeros((3, 3))


def test_partials_identity_and_stretch(rng):
    x = random_tet(rng)
    beta = compute_beta(*x)
    ds = partials_from(x, np.zeros((4, 3)), beta)
    np.testing.assert_allclose(ds.dx_du, I3, atol=1e-12)
    np.testing.assert_allclose(ds.dv_du, Z3, atol=1e-12)
    stretched = x * [2.0, 1.0, 1.0]
    ds = partials_from(stretched, np.tile([1.0, -2.0, 3.0], (4, 1)), beta)
    np.testing.assert_allclose(ds.dx_du, np.diag([2.0, 1.0, 1.0]), atol=1e-12)
    np.testing.assert_allclose(ds.dv_du, Z3, atol=1e-12)


def test_deformation_partials_from_mesh():
    mesh = TetMesh.from_arrays(np.vstack([np.zeros(3), I3]), [[0, 1, 2, 3]], STEEL_LIKE)
    mesh.p[:4] *= [2.0, 1.0, 1.0]
    ds = deformation_partials(0, mesh)
    np.testing.assert_allclose(ds.dx_du, np.diag([2.0, 1.0, 1.0]), atol=1e-14)


def test_green_strain_examples():
    assert np.array_equal(green_strain(DeformationState(I3, Z3)), Z3)
    assert np.array_equal(green_strain(DeformationState(np.diag([2.0, 1.0, 1.0]), Z3)), np.diag([3.0, 0.0, 0.0]))


def test_green_strain_rigid_invariance(rng):
    for _ in range(1000):
        x = random_tet(rng)
        beta = compute_beta(*x)
        p = x @ random_rotation(rng).T + rng.normal(size=3) * 10.0
        eps = green_strain(partials_from(p, np.zeros((4, 3)), beta))
        assert np.abs(eps).max() < 1e-9


def test_green_strain_frame_invariance_of_deformed(rng):
    x = random_tet(rng)
    beta = compute_beta(*x)
    p = x + 0.1 * rng.normal(size=(4, 3))
    eps = green_strain(partials_from(p, np.zeros((4, 3)), beta))
    q = random_rotation(rng)
    eps2 = green_strain(partials_from(p @ q.T + 3.0, np.zeros((4, 3)), beta))
    np.testing.assert_allclose(eps2, eps, atol=1e-9)


def test_strain_rate_examples():
    assert np.array_equal(strain_rate(DeformationState(np.diag([1.3, 0.9, 1.1]), Z3)), Z3)
    np.testing.assert_array_equal(strain_rate(DeformationState(I3, np.diag([1.0, 0.0, 0.0]))), np.diag([2.0, 0.0, 0.0]))


def test_strain_rate_rigid_rotation_at_rest(rng):
    x = random_tet(rng)
    beta = compute_beta(*x)
    omega = np.array([0.0, 0.0, 2.5])
    v = np.cross(omega, x)
    nu = strain_rate(partials_from(x, v, beta))
    assert np.abs(nu).max() < 1e-9
    sv = isotropic_stress(nu, 10.0, 20.0)
    assert np.abs(sv).max() < 1e-9


def test_strain_rate_matches_finite_difference(rng):
    for _ in range(50):
        x = random_tet(rng)
        beta = compute_beta(*x)
        p = x + 0.2 * rng.normal(size=(4, 3))
        v = rng.normal(size=(4, 3))
        h = 1e-6
        e_plus = green_strain(partials_from(p + h * v, v, beta))
        e_minus = green_strain(partials_from(p - h * v, v, beta))
        fd = (e_plus - e_minus) / (2 * h)
        nu = strain_rate(partials_from(p, v, beta))
        assert np.abs(nu - fd).max() <= 1e-5 * np.abs(nu).max()


def test_stress_examples():
    mat = Material(1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
    for s in stress(Z3, Z3, mat):
        assert np.array_equal(s, Z3)
    se, sv, s = stress(I3, Z3, mat)
    np.testing.assert_array_equal(se, 5.0 * I3)
    np.testing.assert_array_equal(s, 5.0 * I3)


def test_glass_stress():
    se, _, _ = stress(np.diag([1e-3, 0.0, 0.0]), Z3, PRESETS["glass"])
    np.testing.assert_allclose(se, np.diag([3.12e5, 1.04e5, 1.04e5]), rtol=1e-12)


def test_isotropic_matches_general_form(rng):
    lam, mu, phi, psi = 2.65e6, 3.97e6, 264.0, 397.0
    c_e, c_v = isotropic_tensor(lam, mu), isotropic_tensor(phi, psi)
    for _ in range(100):
        a = rng.normal(size=(3, 3))
        t = 0.5 * (a + a.T)
        np.testing.assert_allclose(isotropic_stress(t, lam, mu), general_stress(c_e, t), rtol=0, atol=1e-10 * lam * 3)
        np.testing.assert_allclose(isotropic_stress(t, phi, psi), general_stress(c_v, t), rtol=0, atol=1e-10 * psi * 3)


def test_potential_density_examples(rng):
    eta, kappa = potential_densities(Z3, Z3, Z3, Z3)
    assert (eta, kappa) == (0.0, 0.0)
    mat = Material(0.0, 1.0, 0.0, 0.0, 1.0, 1.0)
    eps = np.diag([1.0, 0.0, 0.0])
    se, sv, _ = stress(eps, Z3, mat)
    assert potential_densities(eps, Z3, se, sv)[0] == pytest.approx(1.0)
    c = isotropic_tensor(STEEL_LIKE.lam, STEEL_LIKE.mu)
    for _ in range(100):
        a = 1e-3 * rng.normal(size=(3, 3))
        eps = 0.5 * (a + a.T)
        se, sv, _ = stress(eps, Z3, STEEL_LIKE)
        eta = potential_densities(eps, Z3, se, sv)[0]
        quad = 0.5 * np.einsum("ij,ijkl,kl->", eps, c, eps)
        assert eta == pytest.approx(quad, rel=1e-10)
        assert eta >= 0.0


def test_traction(rng):
    np.testing.assert_array_equal(traction(np.diag([5.0, 0.0, 0.0]), [1.0, 0.0, 0.0]), [5.0, 0.0, 0.0])
    s = np.diag([4.0, 0.0, -1.0])
    q = random_rotation(rng)
    s = q @ s @ q.T
    np.testing.assert_allclose(traction(s, q[:, 1]), 0.0, atol=1e-12)
    for _ in range(20):
        a = rng.normal(size=(3, 3))
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        np.testing.assert_allclose(traction(a + a.T, n), (a + a.T) @ n, atol=1e-14)
    with pytest.raises(InvalidInputError):
        traction(I3, [1.0, 1.0, 0.0])
