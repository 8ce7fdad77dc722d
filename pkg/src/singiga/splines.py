"""Uniform tensor-product B-splines of maximal smoothness on a background grid.

Knots are the integers of the grid coordinates, extended ``p`` elements past
the grid on every side, so each element carries a full set of ``(p+1)^2``
functions.  Univariate function ``k`` (``0 <= k < n + p``) is supported on
``[k - p, k + 1]`` and element ``e`` carries functions ``e .. e + p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .mesh import BackgroundGrid

#: how far (grid units) a point may stray outside its element before rejection
SPAN_TOL = 1e-9


def local_basis(s, p: int, nder: int = 0) -> np.ndarray:
    """Nonzero uniform B-splines and their derivatives on one element.

    Parameters
    ----------
    s : array_like
        Local coordinates in ``[0, 1]``.
    p : int
        Degree.
    nder : int
        Highest derivative order (with respect to the grid coordinate).

    Returns
    -------
    ndarray, shape (nder + 1, len(s), p + 1)
        ``out[k, q, r]`` is the ``k``-th derivative of the ``r``-th active
        function at ``s[q]``.  Derivatives above ``p`` are zero.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    m = s.shape[0]
    # knot differences for integer knots: left[j] = s + j - 1, right[j] = j - s
    left = [None] + [s + j - 1.0 for j in range(1, p + 1)]
    right = [None] + [j - s for j in range(1, p + 1)]
    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    out = np.zeros((nder + 1, m, p + 1))
    out[0] = ndu[:, p].T
    nd = min(nder, p)
    for r in range(p + 1):
        a = np.zeros((2, p + 1, m))
        a[0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, nd + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            out[k, :, r] = d
            s1, s2 = s2, s1
    # (p! / (p - k)!) factors of the derivative recursion
    fac = 1.0
    for k in range(1, nd + 1):
        fac *= p - k + 1
        out[k] *= fac
    return out


@dataclass(frozen=True)
class BasisEval:
    """Active functions at one point.

    ``gradients`` are taken with respect to the reference coordinates ``xhat``.
    """

    dofs: np.ndarray
    values: np.ndarray
    gradients: np.ndarray


@dataclass(frozen=True)
class SplineSpace:
    grid: BackgroundGrid
    p: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("spline degree must be at least 1")

    @property
    def shape(self) -> Tuple[int, int]:
        """Number of univariate functions per direction."""
        return self.grid.nx + self.p, self.grid.ny + self.p

    @property
    def ndofs(self) -> int:
        nx, ny = self.shape
        return nx * ny

    def knots(self, axis: int) -> np.ndarray:
        n = self.grid.nx if axis == 0 else self.grid.ny
        return np.arange(-self.p, n + self.p + 1, dtype=float)

    def dof(self, kx, ky):
        return np.asarray(kx) * self.shape[1] + np.asarray(ky)

    def element_dofs(self, i: int, j: int) -> np.ndarray:
        """Dofs active on element ``(i, j)``; ``x`` index varies slowest."""
        r = np.arange(self.p + 1)
        return self.dof((i + r)[:, None], (j + r)[None, :]).ravel()

    def support_box(self, dof: int) -> Tuple[float, float, float, float]:
        """Support ``(xi0, xi1, eta0, eta1)`` of a function in grid coordinates."""
        if not 0 <= dof < self.ndofs:
            raise IndexError(f"dof {dof} out of range")
        kx, ky = divmod(int(dof), self.shape[1])
        return float(kx - self.p), float(kx + 1), float(ky - self.p), float(ky + 1)

    def local_grid_coords(self, i: int, j: int, xhat) -> np.ndarray:
        """Element-local coordinates ``(s, t)`` of reference points."""
        st = self.grid.to_grid(xhat) - np.array([i, j], dtype=float)
        if st.size and (st.min() < -SPAN_TOL or st.max() > 1 + SPAN_TOL):
            raise ValueError(f"points are not inside element {(i, j)}")
        return np.clip(st, 0.0, 1.0)

    def element_basis(self, i: int, j: int, xhat, nder: int = 1):
        """Values and reference gradients of the active functions of an element.

        Returns
        -------
        values : ndarray (npts, (p+1)^2)
        grads : ndarray (npts, (p+1)^2, 2), only if ``nder >= 1``
        """
        st = self.local_grid_coords(i, j, np.atleast_2d(xhat))
        bx = local_basis(st[:, 0], self.p, min(nder, 1))
        by = local_basis(st[:, 1], self.p, min(nder, 1))
        values = (bx[0][:, :, None] * by[0][:, None, :]).reshape(len(st), -1)
        if nder == 0:
            return values
        dxi = (bx[1][:, :, None] * by[0][:, None, :]).reshape(len(st), -1)
        deta = (bx[0][:, :, None] * by[1][:, None, :]).reshape(len(st), -1)
        grad_grid = np.stack([dxi, deta], axis=-1)
        grads = grad_grid @ self.grid.frame.T / self.grid.h
        return values, grads

    def locate(self, xhat) -> Tuple[int, int]:
        """Element of a reference point (right-continuous, closed at the top end)."""
        g = self.grid.to_grid(np.asarray(xhat, dtype=float))
        idx = []
        for c, n in zip(g, (self.grid.nx, self.grid.ny)):
            if c < -SPAN_TOL or c > n + SPAN_TOL:
                raise ValueError("point outside the spline span")
            idx.append(min(max(int(math.floor(c)), 0), n - 1))
        return idx[0], idx[1]


def eval_basis(space: SplineSpace, xhat) -> BasisEval:
    """All ``(p+1)^2`` functions that are active at a single point."""
    i, j = space.locate(xhat)
    values, grads = space.element_basis(i, j, np.asarray(xhat, dtype=float)[None, :])
    return BasisEval(space.element_dofs(i, j), values[0], grads[0])


def dof_support(space: SplineSpace, dof: int) -> Tuple[float, float, float, float]:
    """Exact support box of a tensor-product function, in grid coordinates."""
    return space.support_box(dof)
