"""Explicit time stepping, fracture scheduling and energy diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import femforce
from .collision import CollisionSettings, CollisionWorld
from .errors import ConfigurationError, SimulationDiverged
from .fracture import FractureLimits, fracture_pass
from .mesh import TetMesh, altitudes_batch
from .remesh import SnapThresholds

log = logging.getLogger(__name__)

INTEGRATORS = ("euler", "taylor2")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    duration: float = 0.0
    integrator: str = "euler"
    gravity: tuple = (0.0, 0.0, -9.81)
    fracture_enabled: bool = True
    fracture_stride: int = 1
    split: str = "total"
    limits: FractureLimits = field(default_factory=FractureLimits)
    snap: SnapThresholds = field(default_factory=SnapThresholds)
    collision: CollisionSettings = field(default_factory=CollisionSettings)

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be > 0, got {self.dt!r}")
        if not (np.isfinite(self.duration) and self.duration >= 0):
            raise ConfigurationError(f"duration must be >= 0, got {self.duration!r}")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.fracture_stride < 1:
            raise ConfigurationError("fracture_stride must be >= 1")
        if self.split not in femforce.SPLIT_MODES:
            raise ConfigurationError(f"split must be one of {femforce.SPLIT_MODES}")
        if len(self.gravity) != 3:
            raise ConfigurationError("gravity must have 3 components")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


class EnergyReport(NamedTuple):
    time: float
    kinetic: float
    elastic: float
    node_count: int
    element_count: int
    fragment_count: int


def energies(mesh: TetMesh, time=0.0) -> EnergyReport:
    """Kinetic and elastic energy plus mesh counters."""
    live = mesh.live_nodes()
    kinetic = 0.5 * float(np.sum(mesh.mass[live] * np.einsum("ij,ij->i", mesh.v[live], mesh.v[live])))
    ff = femforce.force_field(mesh, mesh.scratch.split if mesh.scratch is not None else "total")
    elastic = float(np.sum(ff.eta * mesh.vol[ff.elements]))
    return EnergyReport(float(time), kinetic, elastic, mesh.node_count, mesh.element_count, mesh.fragment_count())


def fragment_count(mesh: TetMesh) -> int:
    return mesh.fragment_count()


def _accelerations(mesh: TetMesh):
    live = mesh.live_nodes()
    mass = mesh.mass[live]
    bad = live[~(mass > 0)]
    if len(bad):
        raise ConfigurationError(f"node {int(bad[0])} has zero mass")
    a = mesh.force[live] / mass[:, None]
    fixed = mesh.fixed[live]
    a[fixed] = 0.0
    mesh.v[live[fixed]] = 0.0
    return live, a


def integrate_euler(mesh: TetMesh, dt: float):
    """v += a dt, then p += v_old dt."""
    live, a = _accelerations(mesh)
    v_old = mesh.v[live].copy()
    mesh.v[live] = v_old + a * dt
    mesh.p[live] += v_old * dt
    mesh.touch()


def integrate_taylor2(mesh: TetMesh, dt: float):
    """p += v dt + a dt^2 / 2, then v += a dt."""
    live, a = _accelerations(mesh)
    mesh.p[live] += mesh.v[live] * dt + 0.5 * a * dt * dt
    mesh.v[live] += a * dt
    mesh.touch()


def _check_finite(mesh: TetMesh, step_index: int):
    live = mesh.live_nodes()
    state = np.concatenate([mesh.p[live], mesh.v[live]], axis=1)
    if np.all(np.isfinite(state)):
        return
    bad = ~np.all(np.isfinite(state), axis=1)
    mags = np.where(bad, np.inf, np.linalg.norm(state, axis=1))
    node = int(live[np.argmax(mags)])
    raise SimulationDiverged(step_index, node, float(np.max(np.abs(mesh.force[node]))))


def element_heights(mesh: TetMesh, elements=None) -> np.ndarray:
    """Minimum altitude of each element in material space: 3 vol / max face area."""
    idx = mesh.live_elements() if elements is None else np.asarray(elements)
    return altitudes_batch(mesh.m[mesh.elems[idx]])


def heuristic_dt(mesh: TetMesh) -> float:
    """Classical step heuristic: min over elements of h sqrt(rho / (lambda + 2 mu)).

    This ignores the factor 4 that the strain measure (no 1/2) puts on the
    effective small-strain moduli; the critical step of the assembled
    system is typically about 0.45 of this value. Prefer ``stable_dt``.
    """
    idx = mesh.live_elements()
    if len(idx) == 0:
        raise ConfigurationError("mesh has no elements")
    h = element_heights(mesh, idx)
    table = np.array([[m.lam, m.mu, m.rho] for m in mesh.materials])[mesh.mat[idx]]
    lam, mu, rho = table.T
    return float(np.min(h * np.sqrt(rho / (lam + 2.0 * mu))))


def element_rate_bounds(mesh: TetMesh):
    """Largest eigenvalues of M_e^-1 K_e and M_e^-1 D_e over all elements.

    K_e and D_e are the element stiffness and damping matrices linearized
    about the rest state, M_e the element's lumped mass share. By the
    element eigenvalue inequality these bound omega_max^2 and the largest
    damping rate of the assembled system.
    """
    idx = mesh.live_elements()
    g = mesh.beta[idx][:, :, :3]
    table = np.array([[m.lam, m.mu, m.phi, m.psi, m.rho] for m in mesh.materials])[mesh.mat[idx]]
    lam, mu, phi, psi, rho = table.T
    # K[i a, j b] = 4 vol (lam g_ia g_jb + mu (g_ib g_ja + delta_ab g_i . g_j));
    # the lumped mass is rho vol / 4, so vol cancels
    dil = np.einsum("eia,ejb->eiajb", g, g).reshape(-1, 12, 12)
    shear = np.einsum("eib,eja->eiajb", g, g) + np.einsum("eic,ejc,ab->eiajb", g, g, np.eye(3))
    shear = shear.reshape(-1, 12, 12)
    scale = 16.0 / rho

    def block(first, second):
        return (scale * first)[:, None, None] * dil + (scale * second)[:, None, None] * shear

    w2 = np.linalg.eigvalsh(block(lam, mu))[:, -1]
    c = np.linalg.eigvalsh(block(phi, psi))[:, -1]
    return float(w2.max()), float(c.max())


def damping_ratio(mesh: TetMesh) -> float:
    """Smallest ratio of damping to stiffness coefficients over all elements.

    For a mode whose damping rate is ``c`` and squared frequency ``w2`` this
    bounds ``c / w2`` from below (shear modes give psi / mu, dilatational
    ones (phi + 2 psi) / (lambda + 2 mu)).
    """
    idx = mesh.live_elements()
    table = np.array([[m.lam, m.mu, m.phi, m.psi] for m in mesh.materials])[mesh.mat[idx]]
    lam, mu, phi, psi = table.T
    return float(np.min(np.minimum(psi / mu, (phi + 2.0 * psi) / (lam + 2.0 * mu))))


def stable_dt(mesh: TetMesh, integrator="taylor2", safety=0.9) -> float:
    """Step size from the linearized element eigenvalue bounds.

    The result respects ``2 / omega_max`` (undamped wave limit) and, with
    damping, ``2 / c_max`` (viscous limit) plus the limit for underdamped
    modes, ``alpha`` for euler and ``2 alpha`` for taylor2, with ``alpha`` from
    ``damping_ratio``. Undamped modes are amplified slowly by both
    integrators at any step size, so this keeps a damped simulation stable
    but cannot make an undamped one conservative.
    """
    if integrator not in INTEGRATORS:
        raise ConfigurationError(f"integrator must be one of {INTEGRATORS}, got {integrator!r}")
    if mesh.element_count == 0:
        raise ConfigurationError("mesh has no elements")
    w2, c = element_rate_bounds(mesh)
    dt = 2.0 / np.sqrt(w2)
    if c > 0:
        dt = min(dt, 2.0 / c)
    alpha = damping_ratio(mesh)
    if alpha > 0:
        dt = min(dt, alpha if integrator == "euler" else 2.0 * alpha)
    return safety * float(dt)


def potential_energy(mesh: TetMesh, gravity=(0.0, 0.0, -9.81)) -> float:
    """Elastic energy plus gravitational potential of the current configuration."""
    live = mesh.live_nodes()
    ff = femforce.force_field(mesh)
    g = np.asarray(gravity, dtype=float)
    return float(np.sum(ff.eta * mesh.vol[ff.elements]) - np.sum(mesh.mass[live] * (mesh.p[live] @ g)))


def relax_static(mesh: TetMesh, gravity=(0.0, 0.0, -9.81), gtol=1e-10, max_iter=10000):
    """Move free nodes to static equilibrium by minimizing the potential energy.

    Uses L-BFGS with the exact gradient (the negated nodal forces). Fixed
    nodes stay put and velocities are zeroed. Returns the scipy result.
    """
    from scipy.optimize import minimize

    free = mesh.live_nodes()[~mesh.fixed[mesh.live_nodes()]]
    g = np.asarray(gravity, dtype=float)
    x0 = mesh.p[free].ravel().copy()
    mesh.v[: mesh.n_node_slots] = 0.0

    def fun(x):
        mesh.p[free] = x.reshape(-1, 3)
        mesh.touch()
        femforce.assemble(mesh, g)
        return potential_energy(mesh, g), -mesh.force[free].ravel()

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", options={"gtol": gtol, "ftol": 1e-16, "maxiter": max_iter, "maxcor": 30})
    mesh.p[free] = res.x.reshape(-1, 3)
    mesh.touch()
    return res


class Simulation:
    """A mesh plus the state carried between steps (time, contact cache)."""

    def __init__(self, mesh: TetMesh, config: SimConfig):
        self.mesh = mesh
        self.config = config
        self.time = 0.0
        self.step_index = 0
        self.collision = CollisionWorld(config.collision)
        self.fractures = 0
        self._warned: set[int] = set()

    def step(self) -> EnergyReport:
        mesh, cfg = self.mesh, self.config
        external = None
        s = cfg.collision
        # an exploding state overflows on its way to inf/nan; _check_finite
        # reports it as divergence, so the floating point warnings are noise
        with np.errstate(over="ignore", invalid="ignore"):
            if s.ground or s.method != "none":
                labels = mesh.fragment_labels() if s.method != "none" else None
                external = self.collision.forces(mesh, labels)
            femforce.assemble(mesh, np.asarray(cfg.gravity, dtype=float), external, cfg.split)
            if cfg.integrator == "euler":
                integrate_euler(mesh, cfg.dt)
            else:
                integrate_taylor2(mesh, cfg.dt)
            self.step_index += 1
            self.time = self.step_index * cfg.dt
            _check_finite(mesh, self.step_index)
            if cfg.fracture_enabled and self.step_index % cfg.fracture_stride == 0:
                events = fracture_pass(mesh, cfg.limits, cfg.snap, cfg.split, self._warned)
                self.fractures += len(events)
            return energies(mesh, self.time)

    def run(self, steps=None, callback=None):
        """Advance ``steps`` steps (default: the configured duration)."""
        steps = self.config.steps if steps is None else steps
        report = None
        for _ in range(steps):
            report = self.step()
            if callback is not None:
                callback(self, report)
        return report


def step(mesh: TetMesh, config: SimConfig, sim: Simulation | None = None) -> EnergyReport:
    """Advance one step. Pass a persistent ``sim`` to keep contact caches and time."""
    if sim is None:
        sim = Simulation(mesh, config)
    elif sim.mesh is not mesh:
        raise ValueError("sim belongs to a different mesh")
    return sim.step()
