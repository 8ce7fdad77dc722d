"""Structured background grids cut by a convex reference polygon.

Grid coordinates ``(xi, eta)`` measure position in units of elements:
element ``(i, j)`` is the square ``[i, i+1] x [j, j+1]`` and

    xhat = origin + h * Q(rotation) @ (xi, eta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import Patch, polygon_area

INSIDE, CUT, OUTSIDE = 0, 1, 2
KIND_NAMES = ("inside", "cut", "outside")

#: geometric tolerance in grid units (i.e. relative to h)
GRID_TOL = 1e-12
#: clip areas below this fraction of h^2 are discarded
SLIVER_TOL = 1e-14
#: inward offset (grid units) used to find the element owning a boundary piece
OWNER_NUDGE = 1e-6
#: distance (grid units) below which a point counts as lying on a grid line
OWNER_TIE = 1e-9


@dataclass(frozen=True)
class BackgroundGrid:
    origin: Tuple[float, float]
    rotation: float
    h: float
    nx: int
    ny: int

    @property
    def frame(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def to_grid(self, xhat) -> np.ndarray:
        x = np.asarray(xhat, dtype=float) - np.asarray(self.origin)
        return (x @ self.frame) / self.h

    def to_ref(self, xi) -> np.ndarray:
        return np.asarray(self.origin) + self.h * (np.asarray(xi, dtype=float) @ self.frame.T)

    def element_corners(self, i: int, j: int) -> np.ndarray:
        sq = np.array([[i, j], [i + 1, j], [i + 1, j + 1], [i, j + 1]], dtype=float)
        return self.to_ref(sq)

    def hull(self) -> np.ndarray:
        return self.to_ref(np.array([[0, 0], [self.nx, 0], [self.nx, self.ny], [0, self.ny]], dtype=float))


def build_grid(polygon, h: float, rotation: float = 0.0, anchor=(0.0, 0.0)) -> BackgroundGrid:
    """Smallest grid (plus one element of margin) covering ``polygon``.

    Grid lines pass through ``anchor``; with ``rotation = 0`` and the default
    anchor a unit square with integer ``1/h`` is matched exactly.
    """
    if h <= 0:
        raise ValueError("element size must be positive")
    c, s = math.cos(rotation), math.sin(rotation)
    Q = np.array([[c, -s], [s, c]])
    xi = ((np.asarray(polygon, dtype=float) - np.asarray(anchor)) @ Q) / h
    xi = _snap(xi)
    lo = np.floor(xi.min(axis=0)).astype(int) - 1
    hi = np.ceil(xi.max(axis=0)).astype(int) + 1
    origin = np.asarray(anchor, dtype=float) + h * (Q @ lo.astype(float))
    return BackgroundGrid(tuple(origin), float(rotation), float(h), int(hi[0] - lo[0]), int(hi[1] - lo[1]))


def _snap(xi: np.ndarray) -> np.ndarray:
    r = np.round(xi)
    return np.where(np.abs(xi - r) < GRID_TOL * np.maximum(1.0, np.abs(xi)), r, xi)


# --------------------------------------------------------------------------
# clipping


def clip_convex(poly: np.ndarray, x0: float, x1: float, y0: float, y1: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned box."""
    out = np.asarray(poly, dtype=float)
    for axis, bound, keep_above in ((0, x0, True), (0, x1, False), (1, y0, True), (1, y1, False)):
        if len(out) == 0:
            break
        src = out
        pts = []
        for k in range(len(src)):
            cur, nxt = src[k], src[(k + 1) % len(src)]
            dc = cur[axis] - bound if keep_above else bound - cur[axis]
            dn = nxt[axis] - bound if keep_above else bound - nxt[axis]
            if dc >= 0:
                pts.append(cur)
            if (dc >= 0) != (dn >= 0):
                t = dc / (dc - dn)
                p = cur + t * (nxt - cur)
                p[axis] = bound
                pts.append(p)
        out = np.array(pts) if pts else np.zeros((0, 2))
    return out


def fan_triangles(poly: np.ndarray, min_area: float = 0.0) -> List[np.ndarray]:
    """Triangles fanned from the vertex mean of a convex polygon."""
    c = poly.mean(axis=0)
    tris = []
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        area = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]))
        if area > min_area:
            tris.append(np.array([c, a, b]))
    return tris


@dataclass(frozen=True)
class ElementClass:
    index: Tuple[int, int]
    kind: int
    clip: Optional[np.ndarray] = None
    triangles: Tuple[np.ndarray, ...] = ()


@dataclass
class ElementClassification:
    """Classification of every element of a grid.

    ``kind[i, j]`` is one of :data:`INSIDE`, :data:`CUT`, :data:`OUTSIDE`.
    Cut elements have their clip polygon and triangles (reference
    coordinates) stored in ``clips`` and ``triangles``.
    """

    grid: BackgroundGrid
    kind: np.ndarray
    clips: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    triangles: Dict[Tuple[int, int], List[np.ndarray]] = field(default_factory=dict)
    slivers: int = 0

    @property
    def active(self) -> np.ndarray:
        return self.kind != OUTSIDE

    @property
    def has_cuts(self) -> bool:
        return bool(np.any(self.kind == CUT))

    def elements(self):
        for i in range(self.grid.nx):
            for j in range(self.grid.ny):
                k = int(self.kind[i, j])
                yield ElementClass((i, j), k, self.clips.get((i, j)), tuple(self.triangles.get((i, j), ())))

    def covered_area(self) -> float:
        h2 = self.grid.h ** 2
        inside = float(np.count_nonzero(self.kind == INSIDE)) * h2
        return inside + sum(polygon_area(c) for c in self.clips.values())


def _inside_convex(poly: np.ndarray, pts: np.ndarray, tol: float) -> np.ndarray:
    ok = np.ones(pts.shape[:-1], dtype=bool)
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        e = b - a
        cross = e[0] * (pts[..., 1] - a[1]) - e[1] * (pts[..., 0] - a[0])
        ok &= cross >= -tol * np.hypot(*e)
    return ok


def classify_elements(grid: BackgroundGrid, polygon) -> ElementClassification:
    """Split the grid into inside, cut and outside elements."""
    poly_g = _snap(grid.to_grid(polygon))
    nx, ny = grid.nx, grid.ny
    I, J = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    corners_in = _inside_convex(poly_g, np.stack([I, J], -1).astype(float), GRID_TOL)
    all_in = corners_in[:-1, :-1] & corners_in[1:, :-1] & corners_in[1:, 1:] & corners_in[:-1, 1:]

    lo = poly_g.min(axis=0)
    hi = poly_g.max(axis=0)
    ii = np.arange(nx)[:, None]
    jj = np.arange(ny)[None, :]
    overlap = (ii + 1 > lo[0]) & (ii < hi[0]) & (jj + 1 > lo[1]) & (jj < hi[1])

    kind = np.full((nx, ny), OUTSIDE, dtype=np.int8)
    kind[all_in] = INSIDE
    result = ElementClassification(grid=grid, kind=kind)
    h2 = grid.h ** 2
    for i, j in zip(*np.nonzero(overlap & ~all_in)):
        clip = clip_convex(poly_g, i, i + 1, j, j + 1)
        area = polygon_area(clip) if len(clip) >= 3 else 0.0
        if area >= 1.0 - GRID_TOL:
            kind[i, j] = INSIDE
        elif area < SLIVER_TOL:
            if area > 0.0:
                result.slivers += 1
        else:
            kind[i, j] = CUT
            clip_ref = grid.to_ref(clip)
            result.clips[(int(i), int(j))] = clip_ref
            result.triangles[(int(i), int(j))] = fan_triangles(clip_ref, min_area=1e-16 * h2)
    return result


# --------------------------------------------------------------------------
# faces and boundary pieces


@dataclass(frozen=True)
class GhostFaceSet:
    """Interior grid faces next to at least one cut element.

    ``lower[k]`` and ``upper[k]`` are the element indices on both sides of
    face ``k``; ``axis[k]`` is the grid direction normal to the face (the
    upper element is shifted by one along that axis).
    """

    lower: np.ndarray
    upper: np.ndarray
    axis: np.ndarray

    def __len__(self) -> int:
        return len(self.axis)


def ghost_faces(classification: ElementClassification) -> GhostFaceSet:
    kind = classification.kind
    act = kind != OUTSIDE
    cut = kind == CUT
    lower, upper, axis = [], [], []
    for ax in (0, 1):
        if ax == 0:
            a_act, b_act = act[:-1, :], act[1:, :]
            a_cut, b_cut = cut[:-1, :], cut[1:, :]
        else:
            a_act, b_act = act[:, :-1], act[:, 1:]
            a_cut, b_cut = cut[:, :-1], cut[:, 1:]
        sel = a_act & b_act & (a_cut | b_cut)
        idx = np.argwhere(sel)
        shift = np.array([1, 0]) if ax == 0 else np.array([0, 1])
        lower.append(idx)
        upper.append(idx + shift)
        axis.append(np.full(len(idx), ax, dtype=int))
    return GhostFaceSet(np.concatenate(lower).reshape(-1, 2), np.concatenate(upper).reshape(-1, 2),
                        np.concatenate(axis))


@dataclass(frozen=True)
class BoundarySegment:
    side: int
    t0: float
    t1: float
    element: Tuple[int, int]
    normal: Tuple[float, float]
    length: float


@dataclass
class BoundarySegmentation:
    segments: List[BoundarySegment]
    dropped: int = 0

    def for_side(self, side: int) -> List[BoundarySegment]:
        return [s for s in self.segments if s.side == side]

    def side_length(self, side: int) -> float:
        return sum(s.length for s in self.segments if s.side == side)


def edge_breakpoints(grid: BackgroundGrid, a, b) -> np.ndarray:
    """Parameters ``t`` in [0, 1] where ``a + t (b - a)`` crosses grid lines."""
    ga, gb = _snap(grid.to_grid(np.array([a, b])))
    ts = [0.0, 1.0]
    for ax in (0, 1):
        lo, hi = sorted((ga[ax], gb[ax]))
        d = gb[ax] - ga[ax]
        if abs(d) < GRID_TOL:
            continue
        for k in range(int(math.floor(lo)) + 1, int(math.ceil(hi))):
            t = (k - ga[ax]) / d
            if 0.0 < t < 1.0:
                ts.append(t)
    ts = np.unique(np.array(ts))
    keep = np.concatenate([[True], np.diff(ts) > 1e-15])
    return ts[keep]


def locate_element(grid: BackgroundGrid, xhat, inward, tie: float = OWNER_TIE) -> Tuple[int, int]:
    """Element containing ``xhat``.

    A point within ``tie`` grid units of a grid line is shifted along
    ``inward`` first so that pieces lying on a grid line go to the inner
    element; ``tie=inf`` always shifts.
    """
    g = grid.to_grid(np.asarray(xhat))
    if np.any(np.abs(g - np.round(g)) < tie):
        g = grid.to_grid(np.asarray(xhat) + OWNER_NUDGE * grid.h * np.asarray(inward))
    i = min(max(int(math.floor(g[0])), 0), grid.nx - 1)
    j = min(max(int(math.floor(g[1])), 0), grid.ny - 1)
    return i, j


def segment_boundary(patch: Patch, grid: BackgroundGrid,
                     classification: ElementClassification) -> BoundarySegmentation:
    """Split every polygon edge at grid lines and attach each piece to an element."""
    segs: List[BoundarySegment] = []
    dropped = 0
    for side in patch.sides:
        a, b = patch.edge(side.side)
        nu = patch.outward_normal(side.side)
        L = float(np.hypot(*(b - a)))
        ts = edge_breakpoints(grid, a, b)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            length = (t1 - t0) * L
            mid = a + 0.5 * (t0 + t1) * (b - a)
            elem = locate_element(grid, mid, -nu)
            if classification.kind[elem] == OUTSIDE:
                # the exact owner was dropped as a sliver; take the inner neighbour
                elem = locate_element(grid, mid, -nu, tie=math.inf)
            if length < 1e-14 or classification.kind[elem] == OUTSIDE:
                dropped += 1
                continue
            segs.append(BoundarySegment(side.side, float(t0), float(t1), elem, (float(nu[0]), float(nu[1])), length))
    return BoundarySegmentation(segs, dropped)
