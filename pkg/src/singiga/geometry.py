"""Parametric maps, patches and multipatch domains.

Maps are evaluated on stacks of reference points with shape ``(..., 2)`` and
return images ``(..., d)`` and Jacobians ``(..., d, 2)``.  Every map has a
closed-form Jacobian; finite differences only show up in the tests.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .metric_reg import EigenDecomp, sym_eig

#: tolerance for reference points sitting slightly outside [0, 1]^2
POINT_TOL = 1e-12

BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3
SIDE_NAMES = ("bottom", "right", "top", "left")

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class OutsideReferenceDomain(ValueError):
    """A map was evaluated at a point outside the unit square."""


def _as_points(xhat) -> np.ndarray:
    x = np.asarray(xhat, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"reference points must have trailing dimension 2, got {x.shape}")
    if x.size and (x.min() < -POINT_TOL or x.max() > 1.0 + POINT_TOL):
        raise OutsideReferenceDomain(
            f"reference point outside [0,1]^2 (range {x.min():.3e} .. {x.max():.3e})")
    return x


def _one_minus_pow(x, gamma):
    # 1 - x**gamma without cancellation near x = 1
    with np.errstate(divide="ignore"):
        return -np.expm1(gamma * np.log(x))


class ParametricMap:
    """Base class; subclasses implement ``_eval`` and ``_jac``."""

    ref_dim = 2
    phys_dim = 2

    def __call__(self, xhat):
        return self.eval(xhat)

    def eval(self, xhat) -> np.ndarray:
        return self._eval(_as_points(xhat))

    def jacobian(self, xhat) -> np.ndarray:
        return self._jac(_as_points(xhat))

    def _eval(self, x):
        raise NotImplementedError

    def _jac(self, x):
        raise NotImplementedError


def _stack2(a, b):
    return np.stack([a, b], axis=-1)


def _mat2(a11, a12, a21, a22):
    return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)


@dataclass(frozen=True)
class AffineMap(ParametricMap):
    """``x -> A x + b``; the identity by default."""

    A: Tuple[Tuple[float, float], Tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    b: Tuple[float, float] = (0.0, 0.0)
    kind: str = field(default="affine", init=False)

    def _eval(self, x):
        return x @ np.asarray(self.A).T + np.asarray(self.b)

    def _jac(self, x):
        return np.broadcast_to(np.asarray(self.A, dtype=float), x.shape[:-1] + (2, 2)).copy()


@dataclass(frozen=True)
class CuspMap(ParametricMap):
    """Square-to-cusp map ``(x, y) -> (x, x**gamma * y)``."""

    gamma: float = 2.0
    kind: str = field(default="cusp", init=False)

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("cusp exponent gamma must be >= 1")

    def _eval(self, x):
        X, Y = x[..., 0], x[..., 1]
        return _stack2(X, X ** self.gamma * Y)

    def _jac(self, x):
        X, Y = x[..., 0], x[..., 1]
        g = self.gamma
        return _mat2(np.ones_like(X), np.zeros_like(X), g * X ** (g - 1) * Y, X ** g)


@dataclass(frozen=True)
class CollapsedBilinearMap(ParametricMap):
    """Bilinear map sending the corner (0, 1) to the midpoint of the diagonal."""

    kind: str = field(default="collapsed-bilinear", init=False)

    def _eval(self, x):
        X, Y = x[..., 0], x[..., 1]
        return _stack2(X + 0.5 * (1 - X) * Y, X * Y + 0.5 * (1 - X) * Y)

    def _jac(self, x):
        X, Y = x[..., 0], x[..., 1]
        return _mat2(1 - 0.5 * Y, 0.5 * (1 - X), 0.5 * Y, 0.5 * (1 + X))


@dataclass(frozen=True)
class ModelPatchMap(ParametricMap):
    """One of the eight maps partitioning ``[-1, 1]^2`` around a cusp at the origin.

    Patch 5 is ``(x, (y - 1) x**gamma)``, i.e. the mirror image of patch 1
    below the x-axis, so that the eight images tile the square.
    """

    index: int = 1
    gamma: float = 2.0
    kind: str = field(default="model-patch", init=False)

    def __post_init__(self):
        if self.index not in range(1, 9):
            raise ValueError("model patch index must be in 1..8")
        if self.gamma < 1:
            raise ValueError("cusp exponent gamma must be >= 1")

    def _eval(self, x):
        X, Y = x[..., 0], x[..., 1]
        g = self.gamma
        k = self.index
        if k == 1:
            return _stack2(X, X ** g * Y)
        if k == 2:
            return _stack2(X, (1 - Y) * X ** g + Y)
        if k == 3:
            return _stack2(X - 1, Y * (1 - X) ** g)
        if k == 4:
            return _stack2(-X, 1 - Y * _one_minus_pow(X, g))
        if k == 5:
            return _stack2(X, (Y - 1) * X ** g)
        if k == 6:
            return _stack2(X, Y * _one_minus_pow(X, g) - 1)
        if k == 7:
            return _stack2(-X, -Y * X ** g)
        return _stack2(-X, (1 - Y) * _one_minus_pow(X, g) - 1)

    def _jac(self, x):
        X, Y = x[..., 0], x[..., 1]
        g = self.gamma
        k = self.index
        one, zero = np.ones_like(X), np.zeros_like(X)
        dpow = g * X ** (g - 1)
        if k == 1:
            return _mat2(one, zero, dpow * Y, X ** g)
        if k == 2:
            return _mat2(one, zero, dpow * (1 - Y), _one_minus_pow(X, g))
        if k == 3:
            return _mat2(one, zero, -g * Y * (1 - X) ** (g - 1), (1 - X) ** g)
        if k == 4:
            return _mat2(-one, zero, Y * dpow, -_one_minus_pow(X, g))
        if k == 5:
            return _mat2(one, zero, dpow * (Y - 1), X ** g)
        if k == 6:
            return _mat2(one, zero, -Y * dpow, _one_minus_pow(X, g))
        if k == 7:
            return _mat2(-one, zero, -Y * dpow, -X ** g)
        return _mat2(-one, zero, -(1 - Y) * dpow, -_one_minus_pow(X, g))


@dataclass(frozen=True)
class EllipsoidQuarterMap(ParametricMap):
    """Quarter-longitude chart of the ellipsoid with semi-axes ``axes``.

    ``(x, y) -> (a sin(pi y) cos(phi), b sin(pi y) sin(phi), c cos(pi y))``
    with ``phi = pi/2 (index + x)``.  The sides ``y = 0`` and ``y = 1``
    collapse onto the poles.
    """

    index: int = 0
    axes: Tuple[float, float, float] = (3.0, 2.0, 1.0)
    kind: str = field(default="ellipsoid-quarter", init=False)
    phys_dim = 3

    def __post_init__(self):
        if self.index not in range(4):
            raise ValueError("ellipsoid quarter index must be in 0..3")

    def _angles(self, x):
        return 0.5 * np.pi * (self.index + x[..., 0]), np.pi * x[..., 1]

    def _eval(self, x):
        a, b, c = self.axes
        phi, th = self._angles(x)
        st = np.sin(th)
        return np.stack([a * st * np.cos(phi), b * st * np.sin(phi), c * np.cos(th)], axis=-1)

    def _jac(self, x):
        a, b, c = self.axes
        phi, th = self._angles(x)
        st, ct = np.sin(th), np.cos(th)
        cp, sp = np.cos(phi), np.sin(phi)
        dx = 0.5 * np.pi * np.stack([-a * st * sp, b * st * cp, np.zeros_like(st)], axis=-1)
        dy = np.pi * np.stack([a * ct * cp, b * ct * sp, -c * st], axis=-1)
        return np.stack([dx, dy], axis=-1)


@dataclass(frozen=True)
class MetricPointData:
    """Metric quantities at a stack of reference points."""

    DF: np.ndarray
    G: np.ndarray
    eig: EigenDecomp

    @property
    def sqrt_det(self) -> np.ndarray:
        return self.eig.sqrt_det()


def metric_at(map_: ParametricMap, xhat) -> MetricPointData:
    """Jacobian, metric ``G = DF^T DF`` and its eigenpairs at ``xhat``.

    ``|G|^{1/2}`` is taken from the eigenvalues of ``G`` so the measure and the
    flux tensor share one decomposition.
    """
    DF = map_.jacobian(xhat)
    G = np.einsum("...ki,...kj->...ij", DF, DF)
    return MetricPointData(DF=DF, G=G, eig=sym_eig(G))


# --------------------------------------------------------------------------
# patches and domains


class SideKind(enum.Enum):
    INTERFACE = "interface"
    DIRICHLET = "dirichlet"
    COLLAPSED = "collapsed"


@dataclass(frozen=True)
class Partner:
    patch: int
    side: int
    reversed: bool


@dataclass(frozen=True)
class SideClassification:
    side: int
    kind: SideKind
    partner: Optional[Partner] = None

    def __post_init__(self):
        if (self.kind is SideKind.INTERFACE) != (self.partner is not None):
            raise ValueError("exactly the interface sides carry a partner")


@dataclass(frozen=True)
class Patch:
    """A mapped patch whose reference domain is a convex polygon in [0,1]^2.

    Edge ``k`` of the polygon runs from vertex ``k`` to vertex ``k+1``
    (counterclockwise); ``sides[k]`` classifies it.
    """

    map: ParametricMap
    sides: Tuple[SideClassification, ...]
    polygon: np.ndarray = field(default_factory=lambda: UNIT_SQUARE.copy())

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=float)
        if len(self.sides) != len(poly):
            raise ValueError("one side classification per polygon edge is required")
        if sorted(s.side for s in self.sides) != list(range(len(poly))):
            raise ValueError("side classifications must cover every edge exactly once")
        if poly.min() < -POINT_TOL or poly.max() > 1 + POINT_TOL:
            raise ValueError("reference polygon must lie in [0,1]^2")
        if polygon_area(poly) <= 0:
            raise ValueError("reference polygon must be counterclockwise")

    def side(self, k: int) -> SideClassification:
        return next(s for s in self.sides if s.side == k)

    def edge(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        poly = np.asarray(self.polygon, dtype=float)
        return poly[k], poly[(k + 1) % len(poly)]

    def outward_normal(self, k: int) -> np.ndarray:
        a, b = self.edge(k)
        t = b - a
        return np.array([t[1], -t[0]]) / np.hypot(*t)


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class InterfaceCurve:
    """Two patch edges glued along a common curve.

    ``sigma_i(t)`` runs along edge ``side_i`` of patch ``i`` in polygon order;
    ``sigma_j`` runs along edge ``side_j`` of patch ``j``, reversed if
    ``reversed`` is set, so that ``F_i(sigma_i(t)) == F_j(sigma_j(t))``.
    """

    patch_i: int
    side_i: int
    patch_j: int
    side_j: int
    reversed: bool
    edge_i: Tuple[Tuple[float, float], Tuple[float, float]]
    edge_j: Tuple[Tuple[float, float], Tuple[float, float]]

    def sigma_i(self, t) -> np.ndarray:
        a, b = np.asarray(self.edge_i)
        t = np.asarray(t, dtype=float)[..., None]
        return a + t * (b - a)

    def sigma_j(self, t) -> np.ndarray:
        a, b = np.asarray(self.edge_j)
        t = np.asarray(t, dtype=float)
        if self.reversed:
            t = 1.0 - t
        return a + t[..., None] * (b - a)

    def speed_i(self) -> float:
        a, b = np.asarray(self.edge_i)
        return float(np.hypot(*(b - a)))

    def swapped(self) -> "InterfaceCurve":
        return InterfaceCurve(self.patch_j, self.side_j, self.patch_i, self.side_i,
                              self.reversed, self.edge_j, self.edge_i)


@dataclass(frozen=True)
class MultipatchDomain:
    name: str
    patches: Tuple[Patch, ...]
    interfaces: Tuple[InterfaceCurve, ...]

    def __post_init__(self):
        seen = set()
        for itf in self.interfaces:
            for key in ((itf.patch_i, itf.side_i), (itf.patch_j, itf.side_j)):
                if key in seen:
                    raise ValueError(f"side {key} appears in two interfaces")
                seen.add(key)
        for i, patch in enumerate(self.patches):
            for s in patch.sides:
                if (s.kind is SideKind.INTERFACE) != ((i, s.side) in seen):
                    raise ValueError(f"patch {i} side {s.side}: classification disagrees with interfaces")

    @property
    def phys_dim(self) -> int:
        return self.patches[0].map.phys_dim

    def has_dirichlet(self) -> bool:
        return any(s.kind is SideKind.DIRICHLET for p in self.patches for s in p.sides)

    def matching_error(self, n: int = 100, seed: int = 0) -> float:
        """Largest ``|F_i(sigma_i(t)) - F_j(sigma_j(t))|`` over random samples."""
        rng = np.random.default_rng(seed)
        t = rng.random(n)
        worst = 0.0
        for itf in self.interfaces:
            xi = self.patches[itf.patch_i].map.eval(itf.sigma_i(t))
            xj = self.patches[itf.patch_j].map.eval(itf.sigma_j(t))
            worst = max(worst, float(np.abs(xi - xj).max()))
        return worst


# --------------------------------------------------------------------------
# domain builders


def _assemble_domain(name: str, maps: Sequence[ParametricMap], kinds: Sequence[Sequence[SideKind]],
                     glue: Sequence[Tuple[int, int, int, int, bool]]) -> MultipatchDomain:
    partners = {}
    for (pi, si, pj, sj, rev) in glue:
        partners[(pi, si)] = Partner(pj, sj, rev)
        partners[(pj, sj)] = Partner(pi, si, rev)
    patches = []
    for i, (m, ks) in enumerate(zip(maps, kinds)):
        sides = tuple(SideClassification(k, kind, partners.get((i, k))) for k, kind in enumerate(ks))
        patches.append(Patch(map=m, sides=sides))
    interfaces = []
    for (pi, si, pj, sj, rev) in glue:
        ei = patches[pi].edge(si)
        ej = patches[pj].edge(sj)
        interfaces.append(InterfaceCurve(pi, si, pj, sj, rev,
                                         tuple(map(tuple, ei)), tuple(map(tuple, ej))))
    return MultipatchDomain(name, tuple(patches), tuple(interfaces))


I, D, C = SideKind.INTERFACE, SideKind.DIRICHLET, SideKind.COLLAPSED

# (patch, side, partner patch, partner side, reversed) with 0-based patch ids;
# edges follow the counterclockwise order bottom, right, top, left.
MODEL8_GLUE = (
    (0, BOTTOM, 4, TOP, True),      # y = 0, x in [0, 1]
    (0, TOP, 1, BOTTOM, True),      # y = x^gamma
    (1, LEFT, 3, LEFT, True),       # x = 0, y in [0, 1]
    (2, BOTTOM, 6, BOTTOM, True),   # y = 0, x in [-1, 0]
    (2, TOP, 3, TOP, True),         # y = |x|^gamma
    (4, BOTTOM, 5, TOP, True),      # y = -x^gamma
    (5, LEFT, 7, LEFT, True),       # x = 0, y in [-1, 0]
    (6, TOP, 7, BOTTOM, True),      # y = -|x|^gamma
)

MODEL8_KINDS = (
    (I, D, I, C),   # F1: left side is the cusp tip
    (I, C, D, I),   # F2: right side collapses to (1, 1)
    (I, C, I, D),   # F3
    (D, C, I, I),   # F4
    (I, D, I, C),   # F5
    (D, C, I, I),   # F6
    (I, D, I, C),   # F7
    (I, C, D, I),   # F8
)


def build_model_multipatch(gamma: float) -> MultipatchDomain:
    """Eight patches tiling ``[-1, 1]^2`` with cusps of exponent ``gamma``."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    maps = [ModelPatchMap(k, gamma) for k in range(1, 9)]
    return _assemble_domain("model8", maps, MODEL8_KINDS, MODEL8_GLUE)


def build_ellipsoid_multipatch(axes: Tuple[float, float, float] = (3.0, 2.0, 1.0)) -> MultipatchDomain:
    """Four quarter charts of the ellipsoid; the poles are collapsed sides."""
    maps = [EllipsoidQuarterMap(k, tuple(axes)) for k in range(4)]
    kinds = [(C, I, C, I)] * 4
    glue = [(k, LEFT, (k - 1) % 4, RIGHT, True) for k in range(4)]
    return _assemble_domain("ellipsoid", maps, kinds, glue)


def build_square_domain() -> MultipatchDomain:
    """The unit square as a single identity-mapped patch with Dirichlet sides."""
    return _assemble_domain("square", [AffineMap()], [(D, D, D, D)], [])


def build_two_square_domain() -> MultipatchDomain:
    """``[0, 2] x [0, 1]`` as two identity-like patches glued at ``x = 1``."""
    maps = [AffineMap(), AffineMap(b=(1.0, 0.0))]
    kinds = [(D, I, D, D), (D, D, D, I)]
    glue = [(0, RIGHT, 1, LEFT, True)]
    return _assemble_domain("square2", maps, kinds, glue)


def build_domain(name: str, gamma: float = 2.0) -> MultipatchDomain:
    if name == "model8":
        return build_model_multipatch(gamma)
    if name == "ellipsoid":
        return build_ellipsoid_multipatch()
    if name == "square":
        return build_square_domain()
    if name == "square2":
        return build_two_square_domain()
    raise ValueError(f"unknown domain {name!r}")
