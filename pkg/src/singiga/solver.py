"""Sparse solves and condition number estimates.

Failures are reported in the returned records rather than raised, since
several experiments deliberately produce singular or indefinite systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

#: largest system solved by a direct factorization
DIRECT_LIMIT = 200_000
#: largest system whose spectrum is computed densely
DENSE_LIMIT = 2_000
#: relative residual required for a solve to count as successful
RESIDUAL_TOL = 1e-10


@dataclass
class SolveReport:
    x: Optional[np.ndarray]
    residual: float
    success: bool
    method: str
    message: str = ""
    iterations: int = 0

    @property
    def status(self) -> str:
        return "ok" if self.success else "failed"


def _finite(A: sp.spmatrix) -> bool:
    return bool(np.all(np.isfinite(A.data)))


def solve(A, b, direct_limit: int = DIRECT_LIMIT, scale: bool = True,
          rtol: float = 1e-12, maxiter: Optional[int] = None) -> SolveReport:
    """Solve ``A x = b`` for a sparse symmetric matrix.

    Systems up to ``direct_limit`` unknowns use a sparse LU factorization
    (after symmetric diagonal scaling when ``scale`` is set and the diagonal
    is positive); larger ones use Jacobi-preconditioned conjugate gradients.
    """
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    nb = float(np.linalg.norm(b))
    if not _finite(A) or not np.all(np.isfinite(b)):
        return SolveReport(None, float("inf"), False, "none", "non-finite entries in the system")
    if n == 0:
        return SolveReport(np.zeros(0), 0.0, True, "none")

    d = A.diagonal()
    use_scale = scale and np.all(d > 0)
    s = 1.0 / np.sqrt(d) if use_scale else np.ones(n)
    S = sp.diags(s)
    As = (S @ A @ S).tocsc()
    bs = s * b

    if n <= direct_limit:
        method = "splu"
        try:
            with np.errstate(all="ignore"):
                lu = spla.splu(As, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
                y = lu.solve(bs)
        except RuntimeError as exc:
            return SolveReport(None, float("inf"), False, method, f"factorization failed: {exc}")
        its = 0
    else:
        method = "cg"
        y, info = spla.cg(As, bs, rtol=rtol, maxiter=maxiter or 10 * n)
        if info < 0:
            return SolveReport(None, float("inf"), False, method, f"cg breakdown (info={info})")
        its = int(info) if info > 0 else 0
    x = s * y
    if not np.all(np.isfinite(x)):
        return SolveReport(None, float("inf"), False, method, "solution is not finite")
    res = float(np.linalg.norm(A @ x - b)) / (nb if nb > 0 else 1.0)
    ok = res <= RESIDUAL_TOL
    msg = "" if ok else f"relative residual {res:.3e} above {RESIDUAL_TOL:g}"
    return SolveReport(x, res, ok, method, msg, its)


@dataclass
class ConditionReport:
    cond: float
    lam_min: float
    lam_max: float
    method: str
    indefinite: bool = False
    message: str = ""

    @property
    def ok(self) -> bool:
        return np.isfinite(self.cond) and not self.indefinite


def _shift_invert_min(A: sp.csc_matrix, tol: float) -> float:
    vals = spla.eigsh(A, k=1, sigma=0.0, which="LM", tol=tol, return_eigenvectors=False,
                      v0=np.ones(A.shape[0]))
    return float(vals[0])


def extreme_eigenvalues(A, dense_limit: int = DENSE_LIMIT, tol: float = 1e-8):
    """Smallest and largest eigenvalue plus the method used."""
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    if n <= dense_limit:
        M = A.toarray()
        M = 0.5 * (M + M.T)
        lam_min = float(sla.eigh(M, eigvals_only=True, subset_by_index=[0, 0], driver="evr")[0])
        lam_max = float(sla.eigh(M, eigvals_only=True, subset_by_index=[n - 1, n - 1], driver="evr")[0])
        method = "dense"
        # rounding of a dense solver is about eps * lam_max; resolve small values by shift-invert
        if abs(lam_min) <= 1e3 * np.finfo(float).eps * abs(lam_max):
            try:
                lam_min = _shift_invert_min(A, tol)
                method = "dense+shift-invert"
            except (RuntimeError, spla.ArpackError, spla.ArpackNoConvergence):
                pass
        return lam_min, lam_max, method
    v0 = np.ones(n)
    lam_max = float(spla.eigsh(A, k=1, which="LA", tol=tol, return_eigenvectors=False, v0=v0)[0])
    lam_min = _shift_invert_min(A, tol)
    return lam_min, lam_max, "lanczos"


def condition_number(A, dense_limit: int = DENSE_LIMIT, tol: float = 1e-8) -> ConditionReport:
    """Spectral condition number ``lambda_max / lambda_min`` of a symmetric matrix.

    A non-positive smallest eigenvalue is reported as indefinite with an
    infinite condition number.
    """
    A = sp.csc_matrix(A, dtype=float)
    if not _finite(A):
        return ConditionReport(float("inf"), float("nan"), float("nan"), "none", True, "non-finite entries")
    try:
        lam_min, lam_max, method = extreme_eigenvalues(A, dense_limit, tol)
    except (RuntimeError, spla.ArpackError, spla.ArpackNoConvergence, np.linalg.LinAlgError) as exc:
        return ConditionReport(float("inf"), float("nan"), float("nan"), "failed", True, str(exc))
    if lam_min <= 0.0:
        return ConditionReport(float("inf"), lam_min, lam_max, method, True,
                               f"indefinite: smallest eigenvalue {lam_min:.3e}")
    return ConditionReport(lam_max / lam_min, lam_min, lam_max, method)
