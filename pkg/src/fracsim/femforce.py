"""Element nodal forces and global force assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import continuum
from .mesh import TetMesh
from .tensor3 import split_tensor_batch

# With eps = F^T F - I (no 1/2), -d(eta vol)/dp_i = -2 vol F sigma beta_i^T.
FORCE_SCALE = 2.0

SPLIT_MODES = ("total", "elastic")


@dataclass
class ElementForces:
    total: np.ndarray
    tensile: np.ndarray
    compressive: np.ndarray


@dataclass
class ForceField:
    """Forces of every live element on its four nodes for one mesh state."""

    elements: np.ndarray
    row_of: np.ndarray
    total: np.ndarray
    tensile: np.ndarray
    compressive: np.ndarray
    eta: np.ndarray
    kappa: np.ndarray
    version: int
    split: str

    def element(self, e: int) -> ElementForces:
        r = self.row_of[e]
        return ElementForces(self.total[r].copy(), self.tensile[r].copy(), self.compressive[r].copy())


def nodal_forces(F, sigma, beta, vol):
    """Force each element exerts on its nodes for a given stress, ``(n, 4, 3)``.

    f_i = -2 vol sum_kl beta_ik sigma_kl dx/du_l
    """
    G = beta[..., :, :3]
    return -FORCE_SCALE * vol[..., None, None] * np.einsum("...xl,...kl,...ik->...ix", F, sigma, G)


def _material_columns(mesh: TetMesh, idx):
    table = np.array([[m.lam, m.mu, m.phi, m.psi] for m in mesh.materials]).reshape(-1, 4)
    cols = table[mesh.mat[idx]]
    return cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3]


def evaluate(mesh: TetMesh, idx, split="total"):
    """Evaluate forces and potential densities for element handles ``idx``."""
    if split not in SPLIT_MODES:
        raise ValueError(f"split must be one of {SPLIT_MODES}, got {split!r}")
    idx = np.asarray(idx, dtype=np.int64)
    nodes = mesh.elems[idx]
    beta = mesh.beta[idx]
    vol = mesh.vol[idx]
    ds = continuum.partials_from(mesh.p[nodes], mesh.v[nodes], beta)
    eps = continuum.green_strain(ds)
    nu = continuum.strain_rate(ds)
    lam, mu, phi, psi = _material_columns(mesh, idx)
    sigma_e = continuum.isotropic_stress(eps, lam, mu)
    sigma_v = continuum.isotropic_stress(nu, phi, psi)
    sigma = sigma_e + sigma_v
    total = nodal_forces(ds.dx_du, sigma, beta, vol)
    plus, _ = split_tensor_batch(sigma if split == "total" else sigma_e)
    tensile = nodal_forces(ds.dx_du, plus, beta, vol)
    compressive = total - tensile
    eta, kappa = continuum.potential_densities(eps, nu, sigma_e, sigma_v)
    return total, tensile, compressive, eta, kappa


def element_forces(element: int, mesh: TetMesh, split="total") -> ElementForces:
    """Total, tensile and compressive forces of one element on its nodes."""
    total, tensile, compressive, _, _ = evaluate(mesh, [element], split)
    return ElementForces(total[0], tensile[0], compressive[0])


def force_field(mesh: TetMesh, split="total") -> ForceField:
    """Forces for all live elements, cached on the mesh until its state changes."""
    cached = mesh.scratch
    if cached is not None and cached.version == mesh.version and cached.split == split:
        return cached
    idx = mesh.live_elements()
    total, tensile, compressive, eta, kappa = evaluate(mesh, idx, split)
    row_of = np.full(mesh.n_elem_slots, -1, dtype=np.int64)
    row_of[idx] = np.arange(len(idx))
    ff = ForceField(idx, row_of, total, tensile, compressive, eta, kappa, mesh.version, split)
    mesh.scratch = ff
    return ff


def scatter_nodes(mesh: TetMesh, ff_nodes, values, n=None):
    """Sum per-element-node values ``(E, 4, ...)`` into per-node arrays."""
    n = mesh.n_node_slots if n is None else n
    flat_idx = ff_nodes.ravel()
    vals = values.reshape(len(flat_idx), -1)
    out = np.empty((n, vals.shape[1]))
    for c in range(vals.shape[1]):
        out[:, c] = np.bincount(flat_idx, weights=vals[:, c], minlength=n)[:n]
    return out.reshape((n,) + values.shape[2:])


def assemble(mesh: TetMesh, gravity=None, external=None, split="total") -> ForceField:
    """Accumulate internal, gravity and external forces into ``mesh.force``.

    ``external`` is an optional ``(n_node_slots, 3)`` array (collision or
    constraint forces) added as-is.
    """
    ff = force_field(mesh, split)
    n = mesh.n_node_slots
    force = scatter_nodes(mesh, mesh.elems[ff.elements], ff.total)
    if gravity is not None:
        force += mesh.mass[:n, None] * np.asarray(gravity, dtype=float)
    if external is not None:
        force += external[:n]
    force[~mesh.node_alive[:n]] = 0.0
    mesh.force[:n] = force
    return ff
