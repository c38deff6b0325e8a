"""Structured tetrahedral meshes of boxes, for tests and sample scenes."""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .mesh import volumes_batch


def box_mesh(shape=(1, 1, 1), size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Kuhn (6 tets per cell) triangulation of an axis-aligned box.

    Every cell is split along its main diagonal, so neighbouring cells
    agree on shared face diagonals and the result is conforming.

    Returns
    -------
    nodes : (N, 3) float array
    elems : (6 * nx * ny * nz, 4) int array, positively oriented
    """
    nx, ny, nz = (int(s) for s in shape)
    if min(nx, ny, nz) < 1:
        raise ValueError("shape entries must be >= 1")
    axes = [np.linspace(0.0, float(L), n + 1) + float(o) for L, n, o in zip(size, (nx, ny, nz), origin)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def index(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    unit = np.eye(3, dtype=int)
    paths = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for ax in perm:
            corner = corner + unit[ax]
            path.append(corner.copy())
        paths.append(path)

    elems = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                base = np.array([i, j, k])
                for path in paths:
                    elems.append([index(*(base + c)) for c in path])
    elems = np.array(elems, dtype=np.int64)
    vols = volumes_batch(nodes[elems])
    flip = vols < 0
    elems[flip, 2], elems[flip, 3] = elems[flip, 3].copy(), elems[flip, 2].copy()
    return nodes, elems


def single_tet():
    nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return nodes, np.array([[0, 1, 2, 3]], dtype=np.int64)


def _split_prism(v):
    """Three tets filling prism ``v`` (bottom v0 v1 v2, top v3 v4 v5 above them).

    Quad diagonals go through each quad's lowest global index, so adjacent
    prisms split with the same rule always agree on shared faces.
    """
    # prism symmetries: rotate the triangle, optionally swap top and bottom
    k = int(np.argmin(v))
    rot = [(0, 1, 2), (1, 2, 0), (2, 0, 1)][k % 3]
    bottom = [v[i] for i in rot]
    top = [v[i + 3] for i in rot]
    if k >= 3:
        bottom, top = top, bottom
    a, b, c = bottom
    a2, b2, c2 = top
    tets = [(a, a2, b2, c2)]
    if min(b, c2) < min(c, b2):
        tets += [(a, b, c, c2), (a, b, c2, b2)]
    else:
        tets += [(a, b, c, b2), (a, b2, c, c2)]
    return tets


def axis_bar(layers=8, width=0.1, length=1.6, origin=(0.0, 0.0, 0.0)):
    """Square bar along z built from four triangular prisms per layer around
    a central axis line, 12 tets per layer.

    The cross-section is symmetric under quarter turns about the axis (up
    to the split diagonals), which keeps stress states in a bar under axial
    load close to uniaxial at every node.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    h = width / 2.0
    ring = np.array([[0.0, 0.0], [-h, -h], [h, -h], [h, h], [-h, h]])
    nodes = []
    for k in range(layers + 1):
        z = length * k / layers
        for x, y in ring:
            nodes.append([x + h, y + h, z])
    nodes = np.array(nodes) + np.asarray(origin, dtype=float)
    elems = []
    for k in range(layers):
        lo, hi = 5 * k, 5 * (k + 1)
        for i in range(4):
            c0, c1 = 1 + i, 1 + (i + 1) % 4
            prism = [lo, lo + c0, lo + c1, hi, hi + c0, hi + c1]
            elems.extend(_split_prism(prism))
    elems = np.array(elems, dtype=np.int64)
    vols = volumes_batch(nodes[elems])
    flip = vols < 0
    elems[flip, 2], elems[flip, 3] = elems[flip, 3].copy(), elems[flip, 2].copy()
    return nodes, elems
