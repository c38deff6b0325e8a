"""Node failure test: separation tensor versus toughness."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import femforce
from .errors import RemeshAbort
from .mesh import TetMesh
from .tensor3 import m_of_batch, sym_eigen, sym_eigvals_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FractureEvent:
    node: int
    plane_normal: np.ndarray
    magnitude: float


@dataclass(frozen=True)
class FractureLimits:
    max_splits_per_step: int = 32

    def __post_init__(self):
        if self.max_splits_per_step < 0:
            raise ValueError("max_splits_per_step must be >= 0")


def separation_tensor(tensile_set, compressive_set) -> np.ndarray:
    """Separation tensor of one node from its per-element force sets.

    Unbalanced loads (the set sums) are removed, so a lone force, which
    would only translate the node, contributes nothing.
    """
    fp = np.asarray(tensile_set, dtype=float).reshape(-1, 3)
    fm = np.asarray(compressive_set, dtype=float).reshape(-1, 3)
    sum_p = fp.sum(axis=0) if len(fp) else np.zeros(3)
    sum_m = fm.sum(axis=0) if len(fm) else np.zeros(3)
    acc = m_of_batch(fp).sum(axis=0) - m_of_batch(fm).sum(axis=0)
    return 0.5 * (acc - m_of_batch(sum_p) + m_of_batch(sum_m))


def separation_tensors(mesh: TetMesh, ff: femforce.ForceField) -> np.ndarray:
    """Separation tensors for every node slot, ``(n_node_slots, 3, 3)``."""
    nodes = mesh.elems[ff.elements]
    n = mesh.n_node_slots
    acc = femforce.scatter_nodes(mesh, nodes, m_of_batch(ff.tensile) - m_of_batch(ff.compressive), n)
    sum_p = femforce.scatter_nodes(mesh, nodes, ff.tensile, n)
    sum_m = femforce.scatter_nodes(mesh, nodes, ff.compressive, n)
    return 0.5 * (acc - m_of_batch(sum_p) + m_of_batch(sum_m))


def node_toughness(mesh: TetMesh, ff: femforce.ForceField) -> np.ndarray:
    """Toughness governing each node: that of the element pulling on it hardest."""
    n = mesh.n_node_slots
    out = np.full(n, np.inf)
    if len(ff.elements) == 0:
        return out
    taus = np.array([m.tau for m in mesh.materials])[mesh.mat[ff.elements]]
    nodes = mesh.elems[ff.elements].ravel()
    mags = np.linalg.norm(ff.tensile, axis=2).ravel()
    tau_flat = np.repeat(taus, 4)
    order = np.lexsort((mags, nodes))
    sorted_nodes = nodes[order]
    last = np.r_[sorted_nodes[1:] != sorted_nodes[:-1], True]
    out[sorted_nodes[last]] = tau_flat[order][last]
    return out


def evaluate_node(separation, node: int, tau: float) -> FractureEvent | None:
    """Fracture event for ``node`` if its largest eigenvalue exceeds ``tau``.

    Only the largest eigenvalue is reported; further planes at the same node
    are found by re-evaluating after the mesh has been split.
    """
    eig = sym_eigen(separation)
    v_plus = float(eig.values[0])
    if v_plus <= 0.0 or not v_plus > tau:
        return None
    return FractureEvent(int(node), eig.vectors[:, 0].copy(), v_plus)


def max_eigenvalues(mesh: TetMesh, ff: femforce.ForceField):
    sep = separation_tensors(mesh, ff)
    vmax = np.full(mesh.n_node_slots, -np.inf)
    live = mesh.live_nodes()
    if len(live):
        vmax[live] = sym_eigvals_batch(sep[live])[:, 0]
    return sep, vmax


def fracture_pass(mesh: TetMesh, limits: FractureLimits | None = None, thresholds=None, split="total", warned=None):
    """Split every node whose separation exceeds toughness, largest first.

    After each applied split the forces and separation tensors are
    re-evaluated, so a split node can be split again along a second plane
    and neighbours see the new topology. Each body gets at most
    ``limits.max_splits_per_step`` splits per call. Failed splits are logged
    and skipped. Pass a persistent set as ``warned`` to warn only once per
    node across calls; repeats are logged at debug level.

    Returns the list of applied events in order.
    """
    from .remesh import SnapThresholds, split_node

    limits = limits or FractureLimits()
    thresholds = thresholds or SnapThresholds()
    applied: list[FractureEvent] = []
    skipped: set[int] = set()
    per_body: dict[int, int] = {}
    while True:
        ff = femforce.force_field(mesh, split)
        sep, vmax = max_eigenvalues(mesh, ff)
        tau = node_toughness(mesh, ff)
        over = vmax > tau
        over[list(skipped)] = False
        if limits.max_splits_per_step <= 0:
            break
        for body, count in per_body.items():
            if count >= limits.max_splits_per_step:
                over &= mesh.node_body[: mesh.n_node_slots] != body
        cand = np.flatnonzero(over)
        if len(cand) == 0:
            break
        # largest v+ first; argmax keeps the lowest handle on ties
        node = int(cand[np.argmax(vmax[cand])])
        event = evaluate_node(sep[node], node, tau[node])
        if event is None:
            skipped.add(node)
            continue
        try:
            split_node(mesh, event, thresholds)
        except RemeshAbort as exc:
            level = logging.DEBUG if exc.reason == "one_side" else logging.WARNING
            if warned is not None and level == logging.WARNING:
                if node in warned:
                    level = logging.DEBUG
                warned.add(node)
            log.log(level, "fracture at node %d skipped: %s", node, exc)
            skipped.add(node)
            continue
        applied.append(event)
        body = int(mesh.node_body[node])
        per_body[body] = per_body.get(body, 0) + 1
    return applied
