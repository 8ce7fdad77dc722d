"""Eigen-based regularization of the Riemannian metric tensor.

Everything in here works on stacks of small symmetric matrices with shape
``(..., d, d)`` so that a whole batch of quadrature points is processed in
one call.  The central routine is :func:`reg_flux_tensor`, which returns

    R_delta = |G|^{1/2} G_delta^{-1}

accumulated eigenpair by eigenpair, so the cancellation between the measure
and the inverse metric happens analytically and the result stays finite when
``G`` is singular.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

#: relative tolerance for symmetry and eigenvalue clamping checks
SYM_TOL = 1e-12


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenpairs of a stack of symmetric matrices.

    ``values[..., k]`` is ascending in ``k`` and ``vectors[..., :, k]`` is the
    unit eigenvector belonging to it.
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return np.einsum("...ik,...k,...jk->...ij", self.vectors, self.values, self.vectors)

    def sqrt_det(self) -> np.ndarray:
        """``|G|^{1/2}`` as the product of the square-rooted eigenvalues."""
        return np.prod(np.sqrt(self.values), axis=-1)


@dataclass(frozen=True)
class RegFluxTensor:
    """Result of :func:`reg_flux_tensor`.

    Attributes
    ----------
    R : ndarray (..., d, d)
        The regularized flux tensor.
    delta : float
        Regularization parameter used.
    regularized : ndarray of bool (...)
        Points where ``min_k lambda_k < delta``, i.e. where the cap was active.
    collapsed : ndarray of bool (...)
        Points where a term had a zero denominator and a zero numerator
        (all directions degenerate with ``delta == 0``).  Those terms are 0.
    """

    R: np.ndarray
    delta: float
    regularized: np.ndarray
    collapsed: np.ndarray


def _check_symmetric(G: np.ndarray) -> None:
    if G.shape[-1] != G.shape[-2] or G.shape[-1] not in (2, 3):
        raise ValueError(f"expected a stack of 2x2 or 3x3 matrices, got shape {G.shape}")
    asym = np.abs(G - np.swapaxes(G, -1, -2)).max(initial=0.0)
    scale = max(1.0, float(np.abs(G).max(initial=0.0)))
    if asym > SYM_TOL * scale:
        raise ValueError(f"metric tensor is not symmetric (max asymmetry {asym:.3e})")


def _eig_2x2(G: np.ndarray) -> EigenDecomp:
    a = G[..., 0, 0]
    d = G[..., 1, 1]
    b = 0.5 * (G[..., 0, 1] + G[..., 1, 0])
    trace = a + d
    half_gap = np.hypot(0.5 * (a - d), b)
    lam_max = 0.5 * trace + half_gap
    det = a * d - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        # det / lam_max avoids the cancellation in trace/2 - half_gap
        lam_min = np.where(lam_max > 0.0, det / lam_max, 0.0)
    floor = -SYM_TOL * np.maximum(np.abs(trace), np.finfo(float).tiny)
    if np.any(lam_min < floor):
        raise ValueError("metric tensor has a clearly negative eigenvalue")
    # rounding can push det / lam_max just above lam_max for a near-double eigenvalue
    lam_min = np.clip(lam_min, 0.0, lam_max)

    # eigenvector of lam_max: the better conditioned of two null-space candidates
    v1 = np.stack([b, lam_max - a], axis=-1)
    v2 = np.stack([lam_max - d, b], axis=-1)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    use1 = (n1 >= n2)[..., None]
    v = np.where(use1, v1, v2)
    nv = np.maximum(n1, n2)
    # the candidate vectors stay backward stable for tiny gaps; only a true double root needs a fallback
    degenerate = (half_gap <= 4 * np.finfo(float).eps * np.abs(trace)) | (nv == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = v / nv[..., None]
    e_y = np.zeros_like(v)
    e_y[..., 1] = 1.0
    v = np.where(degenerate[..., None], e_y, v)
    w = np.stack([v[..., 1], -v[..., 0]], axis=-1)

    values = np.stack([lam_min, lam_max], axis=-1)
    vectors = np.stack([w, v], axis=-1)
    return EigenDecomp(values, vectors)


def sym_eig(G: np.ndarray) -> EigenDecomp:
    """Eigendecomposition of symmetric positive semi-definite matrices.

    2x2 stacks use a closed form (largest eigenvalue from the trace and a
    ``hypot`` discriminant, smallest from ``det / lambda_max``).  3x3 stacks go
    through LAPACK.  Negative eigenvalues caused by rounding are clamped to 0.

    Raises
    ------
    ValueError
        If ``G`` is not symmetric to ``1e-12`` relative, or has an eigenvalue
        below ``-1e-12 * trace(G)``.
    """
    G = np.asarray(G, dtype=float)
    _check_symmetric(G)
    if G.shape[-1] == 2:
        return _eig_2x2(G)
    values, vectors = np.linalg.eigh(0.5 * (G + np.swapaxes(G, -1, -2)))
    trace = np.trace(G, axis1=-2, axis2=-1)
    if np.any(values[..., 0] < -SYM_TOL * np.abs(trace)):
        raise ValueError("metric tensor has a clearly negative eigenvalue")
    return EigenDecomp(np.maximum(values, 0.0), vectors)


def regularize_eigenvalue(lam, delta):
    """``lambda^{1/2} * max(lambda^{1/2}, delta^{1/2})``."""
    s = np.sqrt(lam)
    return s * np.maximum(s, np.sqrt(delta))


def reg_flux_tensor(G: np.ndarray, delta: float, eig: Optional[EigenDecomp] = None) -> RegFluxTensor:
    """Robust ``|G|^{1/2} G_delta^{-1}`` for a stack of metric tensors.

    For every eigenpair the term

        prod_{j != k} lambda_j^{1/2} / ((a_k . a_k) max(delta^{1/2}, lambda_k^{1/2})) a_k (x) a_k

    is accumulated.  Neither ``|G|^{1/2}`` nor ``G^{-1}`` is ever formed.
    Pass ``eig`` to reuse a decomposition computed elsewhere.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if eig is None:
        eig = sym_eig(G)
    lam = eig.values
    vec = eig.vectors
    dim = lam.shape[-1]
    root = np.sqrt(lam)
    root_delta = np.sqrt(delta)
    R = np.zeros(lam.shape[:-1] + (dim, dim))
    collapsed = np.zeros(lam.shape[:-1], dtype=bool)
    for k in range(dim):
        numer = np.ones(lam.shape[:-1])
        for j in range(dim):
            if j != k:
                numer = numer * root[..., j]
        a_k = vec[..., :, k]
        denom = np.einsum("...i,...i->...", a_k, a_k) * np.maximum(root_delta, root[..., k])
        zero = denom == 0.0
        collapsed |= zero & (numer == 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(zero & (numer == 0.0), 0.0, numer / denom)
        outer = np.einsum("...i,...j->...ij", a_k, a_k)
        # an infinite coefficient only spreads into nonzero outer-product entries
        with np.errstate(invalid="ignore"):
            R = R + np.where(outer == 0.0, 0.0, coef[..., None, None] * outer)
    regularized = lam[..., 0] < delta
    return RegFluxTensor(R=R, delta=float(delta), regularized=regularized, collapsed=collapsed)


def naive_flux_tensor(G: np.ndarray) -> np.ndarray:
    """``sqrt(det G) * inv(G)`` evaluated as two separately rounded factors.

    This is the failure baseline; it is never used by the regularized method.
    No attempt is made to guard against overflow or division by zero.
    """
    G = np.asarray(G, dtype=float)
    with np.errstate(all="ignore"):
        if G.shape[-1] == 2:
            a, b = G[..., 0, 0], G[..., 0, 1]
            c, d = G[..., 1, 0], G[..., 1, 1]
            det = a * d - b * c
            inv = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[..., None, None]
        else:
            det = np.linalg.det(G)
            inv = np.linalg.inv(G)
        return np.sqrt(det)[..., None, None] * inv


@dataclass(frozen=True)
class DeltaRule:
    """How the regularization parameter follows the mesh size.

    ``mode`` is one of

    * ``"cusp"``: ``h ** (4 gamma p / (gamma + 1))``
    * ``"colinear"``: ``h ** (4 p / 3)``
    * ``"power"``: ``h ** exponent``
    * ``"fixed"``: ``value`` regardless of ``h``
    """

    mode: str = "fixed"
    p: int = 1
    gamma: float = 1.0
    value: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.mode not in ("cusp", "colinear", "power", "fixed"):
            raise ValueError(f"unknown delta rule mode {self.mode!r}")
        if self.mode == "fixed" and self.value < 0:
            raise ValueError("fixed delta must be non-negative")

    @property
    def scaling_exponent(self) -> Optional[float]:
        if self.mode == "cusp":
            return 4.0 * self.gamma * self.p / (self.gamma + 1.0)
        if self.mode == "colinear":
            return 4.0 * self.p / 3.0
        if self.mode == "power":
            return float(self.exponent)
        return None


def delta_for_mesh(rule: DeltaRule, h: float) -> float:
    if h <= 0:
        raise ValueError("mesh size must be positive")
    alpha = rule.scaling_exponent
    if alpha is None:
        return float(rule.value)
    return float(h ** alpha)


def regularization_region(map_, delta: float, resolution: int = 256) -> np.ndarray:
    """Indicator of ``min_k lambda_k < delta`` sampled at cell centres.

    Returns a boolean ``(resolution, resolution)`` array indexed
    ``[j, i]`` with cell centre ``((i + 0.5) / n, (j + 0.5) / n)``.
    """
    n = int(resolution)
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c)
    pts = np.stack([X, Y], axis=-1)
    DF = map_.jacobian(pts)
    G = np.einsum("...ki,...kj->...ij", DF, DF)
    lam = sym_eig(G).values
    return lam[..., 0] < delta
