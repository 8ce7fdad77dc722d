"""Gauss rules and assembly-ready quadrature point streams.

Streams group points by element: ``offsets[e]:offsets[e+1]`` are the points
of element ``elements[e]``.  Local grid coordinates ``(s, t)`` in ``[0,1]^2``
are stored next to the reference points so basis evaluation never has to
invert the grid map again.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .geometry import InterfaceCurve, Patch
from .mesh import (CUT, INSIDE, OUTSIDE, BackgroundGrid, ElementClassification,
                   edge_breakpoints, locate_element, segment_boundary)

#: tolerance on |F_i(x_i) - F_j(x_j)| at interface points
MATCH_TOL = 1e-10


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))


def gauss_1d(n: int) -> QuadRule:
    """``n``-point Gauss-Legendre rule on [0, 1]."""
    if not 1 <= n <= 40:
        raise ValueError("number of Gauss points must be in 1..40")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadRule(0.5 * (x + 1.0), 0.5 * w, 2 * n - 1)


def gauss_quad(n: int) -> QuadRule:
    """Tensor Gauss rule on [0, 1]^2 (``x`` varies slowest)."""
    g = gauss_1d(n)
    X, Y = np.meshgrid(g.points, g.points, indexing="ij")
    W = np.outer(g.weights, g.weights)
    return QuadRule(np.stack([X.ravel(), Y.ravel()], axis=-1), W.ravel(), g.degree)


def gauss_triangle(order: int) -> QuadRule:
    """Collapsed (Duffy) Gauss rule on the triangle (0,0), (1,0), (0,1).

    Exact for polynomials of total degree ``order``.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    n = math.ceil(order / 2) + 1
    g = gauss_1d(n)
    U, V = np.meshgrid(g.points, g.points, indexing="ij")
    W = np.outer(g.weights, g.weights) * (1.0 - U)
    pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=-1)
    return QuadRule(pts, W.ravel(), order)


def map_triangle(rule: QuadRule, tri: np.ndarray):
    """Points and weights of ``rule`` pushed onto triangle ``tri`` (3 x 2)."""
    a, b, c = np.asarray(tri, dtype=float)
    pts = a + rule.points[:, :1] * (b - a) + rule.points[:, 1:] * (c - a)
    jac = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return pts, rule.weights * jac


# --------------------------------------------------------------------------
# streams


@dataclass(frozen=True)
class ElementQuadrature:
    """Quadrature points grouped by element."""

    elements: np.ndarray   # (ne, 2) element indices
    offsets: np.ndarray    # (ne + 1,)
    points: np.ndarray     # (npts, 2) reference coordinates
    local: np.ndarray      # (npts, 2) element-local grid coordinates
    weights: np.ndarray    # (npts,) reference measure

    @property
    def npoints(self) -> int:
        return len(self.weights)

    def element_of_point(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.elements)), np.diff(self.offsets))

    @staticmethod
    def concat(grid: BackgroundGrid, elems: List, pts: List, weights: List) -> "ElementQuadrature":
        if not elems:
            z = np.zeros((0, 2))
            return ElementQuadrature(np.zeros((0, 2), dtype=int), np.zeros(1, dtype=int), z, z, np.zeros(0))
        counts = [len(w) for w in weights]
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        P = np.concatenate(pts)
        E = np.asarray(elems, dtype=int)
        local = grid.to_grid(P) - np.repeat(E, counts, axis=0)
        return ElementQuadrature(E, offsets, P, np.clip(local, 0.0, 1.0), np.concatenate(weights))


def bulk_quadrature(classification: ElementClassification, n: int) -> ElementQuadrature:
    """Tensor Gauss on inside elements, triangle rules on cut elements."""
    grid = classification.grid
    sq = gauss_quad(n)
    tri_rule = gauss_triangle(2 * n - 1)
    h2 = grid.h ** 2
    elems, pts, wts = [], [], []
    for i in range(grid.nx):
        for j in range(grid.ny):
            k = classification.kind[i, j]
            if k == INSIDE:
                elems.append((i, j))
                pts.append(grid.to_ref(sq.points + np.array([i, j], dtype=float)))
                wts.append(sq.weights * h2)
            elif k == CUT:
                tp, tw = [], []
                for tri in classification.triangles[(i, j)]:
                    p_, w_ = map_triangle(tri_rule, tri)
                    tp.append(p_)
                    tw.append(w_)
                if tp:
                    elems.append((i, j))
                    pts.append(np.concatenate(tp))
                    wts.append(np.concatenate(tw))
    return ElementQuadrature.concat(grid, elems, pts, wts)


@dataclass(frozen=True)
class SideQuadrature:
    """Points on one patch side, grouped by the element owning them.

    ``weights`` are reference arc-length weights; ``t`` is the edge
    parameter in [0, 1] and ``normal`` the outward reference normal.
    """

    side: int
    quad: ElementQuadrature
    t: np.ndarray
    normal: np.ndarray
    dropped: int = 0


def boundary_quadrature(patch: Patch, side: int, classification: ElementClassification, n: int) -> SideQuadrature:
    grid = classification.grid
    g = gauss_1d(n)
    seg = segment_boundary(patch, grid, classification)
    a, b = patch.edge(side)
    L = float(np.hypot(*(b - a)))
    elems, pts, wts, ts = [], [], [], []
    for s in seg.for_side(side):
        t = s.t0 + (s.t1 - s.t0) * g.points
        elems.append(s.element)
        pts.append(a + t[:, None] * (b - a))
        wts.append(g.weights * (s.t1 - s.t0) * L)
        ts.append(t)
    quad = ElementQuadrature.concat(grid, elems, pts, wts)
    t_all = np.concatenate(ts) if ts else np.zeros(0)
    return SideQuadrature(side, quad, t_all, patch.outward_normal(side), seg.dropped)


@dataclass(frozen=True)
class InterfaceQuadrature:
    """Matched points on an interface seen from patch ``i``.

    ``quad_i`` groups the patch-``i`` points by their element; ``local_j``
    and ``elem_j`` give the matched partner points in the same order.  The
    weights refer to the patch-``i`` reference arc length.
    """

    interface: InterfaceCurve
    quad_i: ElementQuadrature
    t: np.ndarray
    points_j: np.ndarray
    local_j: np.ndarray
    elem_j: np.ndarray
    normal_i: np.ndarray
    dropped: int = 0

    @property
    def weights(self) -> np.ndarray:
        return self.quad_i.weights


def interface_breakpoints(itf: InterfaceCurve, grid_i: BackgroundGrid, grid_j: BackgroundGrid) -> np.ndarray:
    ti = edge_breakpoints(grid_i, *np.asarray(itf.edge_i))
    tj = edge_breakpoints(grid_j, *np.asarray(itf.edge_j))
    if itf.reversed:
        tj = 1.0 - tj
    ts = np.unique(np.concatenate([ti, tj]))
    keep = np.concatenate([[True], np.diff(ts) > 1e-14])
    return ts[keep]


def _owner(grid, classification, x, inward):
    e = locate_element(grid, x, inward)
    if classification.kind[e] == OUTSIDE:
        e = locate_element(grid, x, inward, tie=math.inf)
    return e


def interface_quadrature(itf: InterfaceCurve, patch_i: Patch, patch_j: Patch,
                         class_i: ElementClassification, class_j: ElementClassification,
                         n: int, check_map: bool = True) -> InterfaceQuadrature:
    """Piecewise Gauss rule on an interface, split at both meshes' grid lines."""
    gi, gj = class_i.grid, class_j.grid
    g = gauss_1d(n)
    ts = interface_breakpoints(itf, gi, gj)
    nu_i = patch_i.outward_normal(itf.side_i)
    nu_j = patch_j.outward_normal(itf.side_j)
    speed = itf.speed_i()
    elems, pts, wts, tt, pj, ej = [], [], [], [], [], []
    dropped = 0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        tm = 0.5 * (t0 + t1)
        e_i = _owner(gi, class_i, itf.sigma_i(tm), -nu_i)
        e_j = _owner(gj, class_j, itf.sigma_j(tm), -nu_j)
        if class_i.kind[e_i] == OUTSIDE or class_j.kind[e_j] == OUTSIDE:
            dropped += 1
            continue
        t = t0 + (t1 - t0) * g.points
        elems.append(e_i)
        pts.append(itf.sigma_i(t))
        wts.append(g.weights * (t1 - t0) * speed)
        tt.append(t)
        pj.append(itf.sigma_j(t))
        ej.append(np.repeat(np.asarray(e_j)[None, :], len(t), axis=0))
    quad = ElementQuadrature.concat(gi, elems, pts, wts)
    if elems:
        Pj = np.concatenate(pj)
        Ej = np.concatenate(ej)
        T = np.concatenate(tt)
    else:
        Pj, Ej, T = np.zeros((0, 2)), np.zeros((0, 2), dtype=int), np.zeros(0)
    local_j = np.clip(gj.to_grid(Pj) - Ej, 0.0, 1.0) if len(Pj) else np.zeros((0, 2))
    if check_map and len(Pj):
        xi = patch_i.map.eval(quad.points)
        xj = patch_j.map.eval(Pj)
        gap = float(np.abs(xi - xj).max())
        if gap > MATCH_TOL * max(1.0, float(np.abs(xi).max())):
            raise ValueError(f"interface {itf.patch_i}/{itf.side_i} - {itf.patch_j}/{itf.side_j}: "
                             f"matched points differ by {gap:.3e}")
    return InterfaceQuadrature(itf, quad, T, Pj, local_j, Ej, nu_i, dropped)
