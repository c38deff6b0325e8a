"""Symmetric 3x3 tensor kernel.

Tensors travel through the simulator as ``(..., 3, 3)`` float64 arrays that
are symmetric by construction; :class:`SymTensor3` is the packed
six-component value type used at API and file boundaries.

The eigensolver is analytic (trigonometric root of the characteristic
cubic) with a cyclic Jacobi fallback when two eigenvalues come within a
relative gap of ``DEGENERATE_GAP`` of each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

DEGENERATE_GAP = 1e-6
_JACOBI_SWEEPS = 16
_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class SymTensor3:
    xx: float = 0.0
    yy: float = 0.0
    zz: float = 0.0
    xy: float = 0.0
    xz: float = 0.0
    yz: float = 0.0

    @classmethod
    def from_matrix(cls, a) -> "SymTensor3":
        a = as_matrix(a)
        return cls(a[0, 0], a[1, 1], a[2, 2], a[0, 1], a[0, 2], a[1, 2])

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.xx, self.xy, self.xz],
                [self.xy, self.yy, self.yz],
                [self.xz, self.yz, self.zz],
            ],
            dtype=float,
        )

    def __array__(self, dtype=None, copy=None):
        m = self.matrix()
        return m if dtype is None else m.astype(dtype)

    def components(self) -> tuple:
        return (self.xx, self.yy, self.zz, self.xy, self.xz, self.yz)


class EigenSystem3(NamedTuple):
    """Eigenvalues sorted descending; ``vectors[:, i]`` pairs with ``values[i]``."""

    values: np.ndarray
    vectors: np.ndarray


def as_matrix(t) -> np.ndarray:
    """Return a symmetric float64 3x3 array for a tensor-like input."""
    if isinstance(t, SymTensor3):
        return t.matrix()
    a = np.asarray(t, dtype=float)
    if a.shape != (3, 3):
        raise InvalidInputError(f"expected a 3x3 tensor, got shape {a.shape}")
    return 0.5 * (a + a.T)


def _check_finite(a):
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("tensor has non-finite components")


def _closed_form_eigvals(a: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of a batch ``(n, 3, 3)`` of symmetric matrices."""
    a00, a11, a22 = a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]
    a01, a02, a12 = a[:, 0, 1], a[:, 0, 2], a[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    off = a01 * a01 + a02 * a02 + a12 * a12
    d0, d1, d2 = a00 - q, a11 - q, a22 - q
    p = np.sqrt((d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * off) / 6.0)
    safe = np.where(p > 0.0, p, 1.0)
    b00, b11, b22 = d0 / safe, d1 / safe, d2 / safe
    b01, b02, b12 = a01 / safe, a02 / safe, a12 / safe
    det = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = np.clip(0.5 * det, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    out = np.stack([l1, l2, l3], axis=-1)
    return np.sort(out, axis=-1)[:, ::-1]


def _null_vector(a: np.ndarray, lam: np.ndarray):
    """Unit vector spanning the null space of ``a - lam I`` via row cross products."""
    m = a - lam[:, None, None] * np.eye(3)
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.einsum("nki,nki->nk", cands, cands)
    pick = np.argmax(norms, axis=1)
    idx = np.arange(len(a))
    v = cands[idx, pick]
    n = np.sqrt(norms[idx, pick])
    ok = n > 0.0
    v = v / np.where(ok, n, 1.0)[:, None]
    return v, ok


def _complement_basis(v: np.ndarray):
    # helper axis: the coordinate axis least aligned with v
    axis = np.argmin(np.abs(v), axis=1)
    e = np.zeros_like(v)
    e[np.arange(len(v)), axis] = 1.0
    u = np.cross(v, e)
    u /= np.linalg.norm(u, axis=1)[:, None]
    w = np.cross(v, u)
    return u, w


def _analytic(a: np.ndarray):
    vals = _closed_form_eigvals(a)
    scale = np.maximum(np.abs(vals[:, 0]), np.abs(vals[:, 2]))
    gap_hi = vals[:, 0] - vals[:, 1]
    gap_lo = vals[:, 1] - vals[:, 2]
    degenerate = np.minimum(gap_hi, gap_lo) <= DEGENERATE_GAP * scale

    # Resolve the best-isolated eigenvector directly, then diagonalise the
    # 2x2 restriction to its orthogonal complement.
    top_isolated = gap_hi >= gap_lo
    lam_iso = np.where(top_isolated, vals[:, 0], vals[:, 2])
    v_iso, ok = _null_vector(a, lam_iso)
    degenerate |= ~ok
    v_iso[~ok] = (1.0, 0.0, 0.0)
    u, w = _complement_basis(v_iso)
    au = np.einsum("nij,nj->ni", a, u)
    aw = np.einsum("nij,nj->ni", a, w)
    m00 = np.einsum("ni,ni->n", u, au)
    m11 = np.einsum("ni,ni->n", w, aw)
    m01 = np.einsum("ni,ni->n", u, aw)
    c, s = _jacobi_rotation(m00, m11, m01)
    e1 = c[:, None] * u - s[:, None] * w
    e2 = s[:, None] * u + c[:, None] * w
    mu1 = c * c * m00 - 2.0 * s * c * m01 + s * s * m11
    mu2 = s * s * m00 + 2.0 * s * c * m01 + c * c * m11
    iso_val = np.einsum("ni,nij,nj->n", v_iso, a, v_iso)

    values = np.stack([iso_val, mu1, mu2], axis=1)
    vectors = np.stack([v_iso, e1, e2], axis=2)
    order = np.argsort(-values, axis=1, kind="stable")
    values = np.take_along_axis(values, order, axis=1)
    vectors = np.take_along_axis(vectors, order[:, None, :], axis=2)
    return values, vectors, degenerate


def _jacobi_rotation(app, aqq, apq):
    """Rotation (c, s) zeroing the off-diagonal entry of [[app, apq], [apq, aqq]]."""
    nz = apq != 0.0
    safe = np.where(nz, apq, 1.0)
    # a tiny apq overflows theta to inf, which correctly gives t = 0
    with np.errstate(over="ignore"):
        theta = (aqq - app) / (2.0 * safe)
        t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
    t = np.where(theta == 0.0, 1.0, t)
    t = np.where(nz, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


def _jacobi(a: np.ndarray):
    """Cyclic Jacobi for a batch of symmetric 3x3 matrices."""
    a = a.copy()
    n = len(a)
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    for _ in range(_JACOBI_SWEEPS):
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        diag = a[:, 0, 0] ** 2 + a[:, 1, 1] ** 2 + a[:, 2, 2] ** 2
        if np.all(off <= 1e-36 * diag):
            break
        for p, q in _PAIRS:
            c, s = _jacobi_rotation(a[:, p, p], a[:, q, q], a[:, p, q])
            j = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            j[:, p, p] = c
            j[:, q, q] = c
            j[:, p, q] = s
            j[:, q, p] = -s
            a = np.matmul(np.matmul(np.swapaxes(j, 1, 2), a), j)
            v = np.matmul(v, j)
    vals = np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return vals, v


def sym_eigen_batch(a: np.ndarray):
    """Eigen-decompose a stack of symmetric matrices.

    Parameters
    ----------
    a : (n, 3, 3) float array
        Symmetric matrices. Only finite input is supported.

    Returns
    -------
    values : (n, 3) array, each row sorted descending
    vectors : (n, 3, 3) array, ``vectors[k, :, i]`` is the unit eigenvector
        for ``values[k, i]``
    """
    a = np.asarray(a, dtype=float)
    if len(a) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3, 3))
    values, vectors, degenerate = _analytic(a)
    if np.any(degenerate):
        jv, jvec = _jacobi(a[degenerate])
        values[degenerate] = jv
        vectors[degenerate] = jvec
    return values, vectors


def sym_eigvals_batch(a: np.ndarray) -> np.ndarray:
    """Descending eigenvalues only (closed form, no vectors)."""
    a = np.asarray(a, dtype=float)
    if len(a) == 0:
        return np.zeros((0, 3))
    return _closed_form_eigvals(a)


def sym_eigen(t) -> EigenSystem3:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric tensor.

    For repeated eigenvalues any orthonormal basis of the eigenspace is
    returned.

    >>> sym_eigen(np.diag([5.0, -3.0, 0.0])).values
    array([ 5.,  0., -3.])
    """
    a = as_matrix(t)
    _check_finite(a)
    values, vectors = sym_eigen_batch(a[None])
    return EigenSystem3(values[0], vectors[0])


def m_of_batch(a: np.ndarray) -> np.ndarray:
    """``a a^T / |a|`` for a stack of vectors ``(..., 3)``; zero where ``a == 0``."""
    a = np.asarray(a, dtype=float)
    n2 = a[..., 0] * a[..., 0] + a[..., 1] * a[..., 1] + a[..., 2] * a[..., 2]
    norm = np.sqrt(n2)
    inv = np.divide(1.0, norm, out=np.zeros_like(norm), where=norm > 0.0)
    return a[..., :, None] * a[..., None, :] * inv[..., None, None]


def m_of(a) -> np.ndarray:
    """Rank-one tensor with eigenvalue ``|a|`` along ``a`` and zero elsewhere."""
    a = np.asarray(a, dtype=float)
    if a.shape != (3,):
        raise InvalidInputError(f"expected a 3-vector, got shape {a.shape}")
    return m_of_batch(a)


def split_tensor_batch(a: np.ndarray):
    """Tensile and compressive parts of a stack of symmetric tensors."""
    values, vectors = sym_eigen_batch(a)
    pos = np.maximum(values, 0.0)
    neg = np.minimum(values, 0.0)
    # m(n) of a unit vector is n n^T
    plus = np.einsum("nik,nk,njk->nij", vectors, pos, vectors)
    minus = np.einsum("nik,nk,njk->nij", vectors, neg, vectors)
    return plus, minus


def split_tensor(t):
    """Return ``(positive, negative)`` parts with ``positive + negative == t``.

    The positive part keeps the tensile eigen-components, the negative part
    the compressive ones.
    """
    a = as_matrix(t)
    _check_finite(a)
    plus, minus = split_tensor_batch(a[None])
    return plus[0], minus[0]
