"""Assembly of the regularized, Nitsche-coupled multipatch system.

Every integral lives on a patch reference domain.  Local contributions are
computed point by point, summed per element (or per boundary segment, or per
face) and scattered into a COO list in a fixed order, so repeated runs give
bit-identical matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .geometry import MultipatchDomain, Patch, SideKind, metric_at
from .mesh import (CUT, OUTSIDE, ElementClassification, GhostFaceSet, build_grid,
                   classify_elements, ghost_faces)
from .metric_reg import DeltaRule, delta_for_mesh, naive_flux_tensor, reg_flux_tensor
from .quadrature import (ElementQuadrature, InterfaceQuadrature, SideQuadrature, boundary_quadrature,
                         bulk_quadrature, gauss_1d, interface_quadrature)
from .splines import SplineSpace, local_basis

VARIANTS = ("regularized", "robust-delta0", "naive")


@dataclass(frozen=True)
class AssemblyParams:
    """Method parameters.

    ``beta`` defaults to ``25 p^2`` and ``quad_n`` to ``p + 2``.  ``ghost``
    set to None switches the ghost penalty on exactly for meshes with cut
    elements.  ``kappa`` is the weight of the first patch of every interface.
    """

    delta_rule: DeltaRule = field(default_factory=DeltaRule)
    variant: str = "regularized"
    beta: Optional[float] = None
    eta: float = 0.01
    kappa: float = 0.5
    ghost: Optional[bool] = None
    quad_n: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown method variant {self.variant!r}")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("Nitsche parameter beta must be positive")
        if self.eta < 0:
            raise ValueError("ghost penalty parameter eta must be non-negative")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("average weight kappa must lie in (0, 1)")

    def beta_for(self, p: int) -> float:
        return float(self.beta) if self.beta is not None else 25.0 * p * p

    def quad_for(self, p: int) -> int:
        return int(self.quad_n) if self.quad_n is not None else p + 2

    def delta_for(self, h: float) -> float:
        if self.variant != "regularized":
            return 0.0
        return delta_for_mesh(self.delta_rule, h)


# --------------------------------------------------------------------------
# pointwise metric pipeline (shared with the error computation)


@dataclass(frozen=True)
class FluxData:
    R: np.ndarray
    sqrt_det: np.ndarray
    regularized: np.ndarray
    collapsed: np.ndarray
    DF: np.ndarray


def flux_at(map_, xhat, delta: float, variant: str = "regularized") -> FluxData:
    """Flux tensor and measure ``|G|^{1/2}`` at reference points.

    ``naive`` forms ``sqrt(det G) * inv(G)`` directly; the other variants run
    the eigenpair-wise construction with the given ``delta``.
    """
    md = metric_at(map_, xhat)
    if variant == "naive":
        G = md.G
        with np.errstate(invalid="ignore"):
            det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
            sq = np.sqrt(det)
        shape = det.shape
        return FluxData(naive_flux_tensor(G), sq, np.zeros(shape, bool), np.zeros(shape, bool), md.DF)
    reg = reg_flux_tensor(md.G, delta, eig=md.eig)
    return FluxData(reg.R, md.sqrt_det, reg.regularized, reg.collapsed, md.DF)


# --------------------------------------------------------------------------
# discretization


@dataclass
class PatchDiscretization:
    patch: Patch
    space: SplineSpace
    classification: ElementClassification
    bulk: ElementQuadrature
    active: np.ndarray          # bool per local dof
    delta: float

    @property
    def grid(self):
        return self.space.grid

    @property
    def h(self) -> float:
        return self.space.grid.h

    @property
    def p(self) -> int:
        return self.space.p


def element_dofs(space: SplineSpace, elements: np.ndarray) -> np.ndarray:
    """Dofs of many elements, shape ``(ne, (p+1)^2)``."""
    r = np.arange(space.p + 1)
    E = np.asarray(elements, dtype=int).reshape(-1, 2)
    kx = E[:, 0, None, None] + r[None, :, None]
    ky = E[:, 1, None, None] + r[None, None, :]
    return space.dof(kx, ky).reshape(len(E), -1)


def _as_list(v, n):
    if isinstance(v, (list, tuple, np.ndarray)):
        if len(v) != n:
            raise ValueError(f"expected {n} per-patch values, got {len(v)}")
        return list(v)
    return [v] * n


def discretize(domain: MultipatchDomain, h: float, p: int, params: AssemblyParams,
               rotation: Union[float, Sequence[float]] = 0.0,
               anchor: Union[Tuple[float, float], Sequence[Tuple[float, float]]] = (0.0, 0.0)
               ) -> List[PatchDiscretization]:
    """Background grid, classification, spline space and bulk quadrature per patch."""
    rots = _as_list(rotation, len(domain.patches))
    anchors = anchor if (len(anchor) == len(domain.patches) and np.ndim(anchor) == 2) else [anchor] * len(domain.patches)
    out = []
    n = params.quad_for(p)
    for patch, rot, anc in zip(domain.patches, rots, anchors):
        grid = build_grid(patch.polygon, h, float(rot), tuple(anc))
        cls = classify_elements(grid, patch.polygon)
        space = SplineSpace(grid, p)
        active = np.zeros(space.ndofs, dtype=bool)
        act_el = np.argwhere(cls.kind != OUTSIDE)
        active[element_dofs(space, act_el).ravel()] = True
        out.append(PatchDiscretization(patch, space, cls, bulk_quadrature(cls, n), active,
                                       params.delta_for(h)))
    return out


@dataclass(frozen=True)
class DofMap:
    """Local-to-global numbering of the active dofs of all patches."""

    local_to_global: Tuple[np.ndarray, ...]
    offsets: np.ndarray

    @property
    def ndofs(self) -> int:
        return int(self.offsets[-1])

    @staticmethod
    def build(discs: Sequence[PatchDiscretization]) -> "DofMap":
        maps, offsets = [], [0]
        for d in discs:
            m = np.full(d.space.ndofs, -1, dtype=int)
            idx = np.nonzero(d.active)[0]
            m[idx] = offsets[-1] + np.arange(len(idx))
            maps.append(m)
            offsets.append(offsets[-1] + len(idx))
        return DofMap(tuple(maps), np.asarray(offsets))

    def patch_slice(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def global_dofs(self, k: int, local) -> np.ndarray:
        g = self.local_to_global[k][local]
        if np.any(g < 0):
            raise ValueError(f"patch {k}: quadrature touches an inactive dof")
        return g


# --------------------------------------------------------------------------
# basis on streams


def basis_on_local(space: SplineSpace, local: np.ndarray, nder: int = 1):
    """Values ``(n, nloc)`` and reference gradients ``(n, nloc, 2)``."""
    p = space.p
    bx = local_basis(local[:, 0], p, nder)
    by = local_basis(local[:, 1], p, nder)
    n = len(local)
    vals = (bx[0][:, :, None] * by[0][:, None, :]).reshape(n, -1)
    if nder == 0:
        return vals, None
    dxi = (bx[1][:, :, None] * by[0][:, None, :]).reshape(n, -1)
    deta = (bx[0][:, :, None] * by[1][:, None, :]).reshape(n, -1)
    grads = np.stack([dxi, deta], axis=-1) @ space.grid.frame.T / space.grid.h
    return vals, grads


def _segment_sum(arr: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    if len(offsets) <= 1:
        return np.zeros((0,) + arr.shape[1:])
    return np.add.reduceat(arr, offsets[:-1], axis=0)


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add_blocks(self, dofs: np.ndarray, blocks: np.ndarray):
        # dofs (ne, m), blocks (ne, m, m)
        m = dofs.shape[1]
        self.rows.append(np.repeat(dofs, m, axis=1).ravel())
        self.cols.append(np.tile(dofs, (1, m)).ravel())
        self.vals.append(blocks.ravel())

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((n, n))
        A = sp.coo_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(n, n)).tocsr()
        A.sum_duplicates()
        return A


@dataclass
class Diagnostics:
    regularized_points: int = 0
    collapsed_points: int = 0
    slivers: int = 0
    dropped_segments: int = 0
    ghost_faces: int = 0
    cut_elements: int = 0

    def as_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


# --------------------------------------------------------------------------
# local forms


def assemble_bulk(disc: PatchDiscretization, variant: str, f: Optional[Callable] = None,
                  chunk: int = 4096):
    """Element stiffness blocks and load vectors of one patch.

    Returns ``(elements, K, F, diag)`` with ``K`` of shape ``(ne, m, m)``
    and ``F`` of shape ``(ne, m)`` (zero when ``f`` is None).
    """
    Q = disc.bulk
    m = (disc.p + 1) ** 2
    ne = len(Q.elements)
    K = np.zeros((ne, m, m))
    F = np.zeros((ne, m))
    diag = Diagnostics()
    eop = Q.element_of_point()
    for start in range(0, Q.npoints, chunk):
        stop = min(start + chunk, Q.npoints)
        sl = slice(start, stop)
        vals, grads = basis_on_local(disc.space, Q.local[sl])
        fd = flux_at(disc.patch.map, Q.points[sl], disc.delta, variant)
        w = Q.weights[sl]
        RG = np.einsum("qij,qbj->qbi", fd.R, grads)
        Kq = np.einsum("q,qai,qbi->qab", w, grads, RG)
        _accumulate(K, eop[sl], Kq)
        if f is not None:
            x = disc.patch.map.eval(Q.points[sl])
            Fq = (w * f(x) * fd.sqrt_det)[:, None] * vals
            _accumulate(F, eop[sl], Fq)
        diag.regularized_points += int(np.count_nonzero(fd.regularized))
        diag.collapsed_points += int(np.count_nonzero(fd.collapsed))
    return Q.elements, K, F, diag


def _accumulate(target: np.ndarray, index: np.ndarray, values: np.ndarray):
    # index is sorted; sum runs of equal index deterministically
    if len(index) == 0:
        return
    starts = np.concatenate([[0], np.nonzero(np.diff(index))[0] + 1])
    target[index[starts]] += np.add.reduceat(values, starts, axis=0)


def nitsche_dirichlet(disc: PatchDiscretization, sq: SideQuadrature, variant: str, beta: float,
                      g: Optional[Callable] = None):
    """Blocks of the symmetric Nitsche terms on one Dirichlet side."""
    Q = sq.quad
    vals, grads = basis_on_local(disc.space, Q.local)
    fd = flux_at(disc.patch.map, Q.points, disc.delta, variant)
    nu = np.asarray(sq.normal)
    Rnu = fd.R @ nu
    Fl = np.einsum("qai,qi->qa", grads, Rnu)
    pen = beta / disc.h * (Rnu @ nu)
    w = Q.weights
    Kq = w[:, None, None] * (-vals[:, :, None] * Fl[:, None, :] - Fl[:, :, None] * vals[:, None, :]
                             + pen[:, None, None] * vals[:, :, None] * vals[:, None, :])
    K = _segment_sum(Kq, Q.offsets)
    if g is not None:
        gv = g(disc.patch.map.eval(Q.points)) if len(Q.points) else np.zeros(0)
        Fq = (w * gv)[:, None] * (-Fl + pen[:, None] * vals)
        F = _segment_sum(Fq, Q.offsets)
    else:
        F = np.zeros(K.shape[:2])
    return Q.elements, K, F


def nitsche_interface(disc_i: PatchDiscretization, disc_j: PatchDiscretization, iq: InterfaceQuadrature,
                      variant: str, beta: float, kappa_ji: float):
    """Patch ``i``'s share of the interface terms.

    Returns ``(elem_i, elem_j, K)`` with ``K`` of shape ``(nseg, 2m, 2m)``
    acting on ``[dofs_i(elem_i), dofs_j(elem_j)]``.
    """
    Q = iq.quad_i
    vi, gi = basis_on_local(disc_i.space, Q.local)
    vj, _ = basis_on_local(disc_j.space, iq.local_j, nder=0)
    fd = flux_at(disc_i.patch.map, Q.points, disc_i.delta, variant)
    nu = np.asarray(iq.normal_i)
    Rnu = fd.R @ nu
    fl_i = np.einsum("qai,qi->qa", gi, Rnu)
    J = kappa_ji * np.concatenate([vi, -vj], axis=1)
    Fl = np.concatenate([fl_i, np.zeros_like(vj)], axis=1)
    pen = beta / disc_i.h * (Rnu @ nu)
    w = Q.weights
    Kq = w[:, None, None] * (-J[:, :, None] * Fl[:, None, :] - Fl[:, :, None] * J[:, None, :]
                             + pen[:, None, None] * J[:, :, None] * J[:, None, :])
    K = _segment_sum(Kq, Q.offsets)
    elem_j = iq.elem_j[Q.offsets[:-1]] if len(Q.offsets) > 1 else np.zeros((0, 2), dtype=int)
    return Q.elements, elem_j, K


def ghost_penalty(disc: PatchDiscretization, faces: GhostFaceSet, eta: float, n: Optional[int] = None):
    """Face blocks ``eta * sum_l int_F [d_n^l v][d_n^l w]``.

    Faces are grid lines, so normal derivatives are derivatives along one grid
    direction.  In grid coordinates the ``h^{2l-1}`` weights cancel against
    the chain rule and the face length, leaving ``eta * sum_l int_0^1 [d^l]^2``.
    Returns ``(lower, upper, K)`` with ``K`` acting on
    ``[dofs(lower), dofs(upper)]``.
    """
    p = disc.p
    g = gauss_1d(n if n is not None else p + 1)
    m = (p + 1) ** 2
    nf = len(faces)
    K = np.zeros((nf, 2 * m, 2 * m))
    if nf == 0:
        return faces.lower, faces.upper, K
    bt = local_basis(g.points, p, 0)[0]                       # tangential values (nq, p+1)
    b_end = local_basis(np.array([0.0, 1.0]), p, p)          # (p+1, 2, p+1)
    for ax in (0, 1):
        sel = faces.axis == ax
        if not np.any(sel):
            continue
        Kax = np.zeros((2 * m, 2 * m))
        for ell in range(1, p + 1):
            dl = b_end[ell, 1]     # lower element, s = 1
            du = b_end[ell, 0]     # upper element, s = 0
            if ax == 0:
                jl = (dl[None, :, None] * bt[:, None, :]).reshape(len(bt), -1)
                ju = (du[None, :, None] * bt[:, None, :]).reshape(len(bt), -1)
            else:
                jl = (bt[:, :, None] * dl[None, None, :]).reshape(len(bt), -1)
                ju = (bt[:, :, None] * du[None, None, :]).reshape(len(bt), -1)
            J = np.concatenate([-jl, ju], axis=1)
            Kax += np.einsum("q,qa,qb->ab", g.weights, J, J)
        K[sel] = eta * Kax
    return faces.lower, faces.upper, K


# --------------------------------------------------------------------------
# global system


@dataclass
class AssembledSystem:
    A: sp.csr_matrix
    b: np.ndarray
    dofmap: DofMap
    diagnostics: Diagnostics

    @property
    def ndofs(self) -> int:
        return self.dofmap.ndofs


def assemble_system(domain: MultipatchDomain, discs: Sequence[PatchDiscretization], params: AssemblyParams,
                    f: Optional[Callable] = None, g: Optional[Callable] = None) -> AssembledSystem:
    """Global matrix and load vector over the active dofs of all patches.

    ``f`` and ``g`` take physical points ``(n, d)``; ``g`` is the Dirichlet data.
    """
    dm = DofMap.build(discs)
    N = dm.ndofs
    T = _Triplets()
    b = np.zeros(N)
    diag = Diagnostics()

    for k, disc in enumerate(discs):
        p = disc.p
        beta = params.beta_for(p)
        elems, K, F, d = assemble_bulk(disc, params.variant, f)
        dofs = dm.global_dofs(k, element_dofs(disc.space, elems))
        T.add_blocks(dofs, K)
        np.add.at(b, dofs.ravel(), F.ravel())
        diag.regularized_points += d.regularized_points
        diag.collapsed_points += d.collapsed_points
        diag.slivers += disc.classification.slivers
        diag.cut_elements += int(np.count_nonzero(disc.classification.kind == CUT))

        for side in disc.patch.sides:
            if side.kind is not SideKind.DIRICHLET:
                continue
            sq = boundary_quadrature(disc.patch, side.side, disc.classification, params.quad_for(p))
            diag.dropped_segments += sq.dropped
            elems, K, F = nitsche_dirichlet(disc, sq, params.variant, beta, g)
            dofs = dm.global_dofs(k, element_dofs(disc.space, elems))
            T.add_blocks(dofs, K)
            np.add.at(b, dofs.ravel(), F.ravel())

        use_ghost = params.ghost if params.ghost is not None else disc.classification.has_cuts
        if use_ghost and params.eta > 0:
            faces = ghost_faces(disc.classification)
            diag.ghost_faces += len(faces)
            lo, up, K = ghost_penalty(disc, faces, params.eta)
            dofs = np.concatenate([dm.global_dofs(k, element_dofs(disc.space, lo)),
                                   dm.global_dofs(k, element_dofs(disc.space, up))], axis=1)
            T.add_blocks(dofs, K)

    for itf in domain.interfaces:
        for cur, kappa_ji in ((itf, 1.0 - params.kappa), (itf.swapped(), params.kappa)):
            di, dj = discs[cur.patch_i], discs[cur.patch_j]
            iq = interface_quadrature(cur, di.patch, dj.patch, di.classification, dj.classification,
                                      params.quad_for(di.p))
            diag.dropped_segments += iq.dropped
            ei, ej, K = nitsche_interface(di, dj, iq, params.variant, params.beta_for(di.p), kappa_ji)
            dofs = np.concatenate([dm.global_dofs(cur.patch_i, element_dofs(di.space, ei)),
                                   dm.global_dofs(cur.patch_j, element_dofs(dj.space, ej))], axis=1)
            T.add_blocks(dofs, K)

    return AssembledSystem(T.matrix(N), b, dm, diag)
