"""Continuum quantities for linear tetrahedra.

Shape functions are linear, so deformation partials, strain, strain rate and
stress are constant per element. Each function accepts single 3x3 inputs or
stacks ``(n, 3, 3)``; the leading axes broadcast.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .mesh import Material, TetMesh

_I3 = np.eye(3)


class DeformationState(NamedTuple):
    """``dx_du[:, i]`` is the partial of world position w.r.t. material axis i;
    ``dv_du`` the same for velocity."""

    dx_du: np.ndarray
    dv_du: np.ndarray


def partials_from(P, V, beta):
    """Deformation partials from node positions/velocities ``(..., 4, 3)``.

    Column ``i`` of the result is ``P beta delta_i``.
    """
    G = beta[..., :, :3]
    dx = np.einsum("...jx,...jk->...xk", P, G)
    dv = np.einsum("...jx,...jk->...xk", V, G)
    return DeformationState(dx, dv)


def deformation_partials(element: int, mesh: TetMesh) -> DeformationState:
    nodes = mesh.elems[element]
    return partials_from(mesh.p[nodes], mesh.v[nodes], mesh.beta[element])


def green_strain(ds: DeformationState) -> np.ndarray:
    """eps_ij = dx/du_i . dx/du_j - delta_ij."""
    F = ds.dx_du
    return np.swapaxes(F, -1, -2) @ F - _I3


def strain_rate(ds: DeformationState) -> np.ndarray:
    """nu_ij = dx/du_i . dxdot/du_j + dxdot/du_i . dx/du_j."""
    F, Fd = ds.dx_du, ds.dv_du
    a = np.swapaxes(F, -1, -2) @ Fd
    return a + np.swapaxes(a, -1, -2)


def _trace(t):
    return t[..., 0, 0] + t[..., 1, 1] + t[..., 2, 2]


def isotropic_stress(t, first, second):
    """``first * tr(t) * I + 2 * second * t`` (broadcasting over coefficients)."""
    first = np.asarray(first, dtype=float)
    second = np.asarray(second, dtype=float)
    return (first * _trace(t))[..., None, None] * _I3 + 2.0 * second[..., None, None] * t


def stress(eps, nu, mat: Material):
    """Elastic, viscous and total stress for one material.

    Returns
    -------
    sigma_e, sigma_v, sigma
    """
    sigma_e = isotropic_stress(eps, mat.lam, mat.mu)
    sigma_v = isotropic_stress(nu, mat.phi, mat.psi)
    return sigma_e, sigma_v, sigma_e + sigma_v


def potential_densities(eps, nu, sigma_e, sigma_v):
    """Elastic potential density eta and damping potential density kappa."""
    eta = 0.5 * np.sum(sigma_e * eps, axis=(-2, -1))
    kappa = 0.5 * np.sum(sigma_v * nu, axis=(-2, -1))
    return eta, kappa


def traction(sigma, n) -> np.ndarray:
    """Force per unit area on a surface with unit normal ``n``."""
    n = np.asarray(n, dtype=float)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        raise InvalidInputError("normal must be a finite 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise InvalidInputError(f"normal must be unit length, |n| = {np.linalg.norm(n)!r}")
    return np.asarray(sigma, dtype=float) @ n


def isotropic_tensor(first: float, second: float) -> np.ndarray:
    """81-coefficient rank-four tensor of an isotropic linear law.

    Used to cross-check the closed-form isotropic stress against the
    general form ``sigma_ij = sum_kl C_ijkl t_kl``.
    """
    d = _I3
    return (
        first * np.einsum("ij,kl->ijkl", d, d)
        + second * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    )


def general_stress(C, t):
    return np.einsum("ijkl,...kl->...ij", C, t)
