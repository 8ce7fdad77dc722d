"""Manufactured problems, error norms and the study drivers."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .assembly import (AssembledSystem, AssemblyParams, PatchDiscretization, assemble_system, basis_on_local,
                       discretize, element_dofs, flux_at)
from .geometry import MultipatchDomain, build_domain
from .metric_reg import DeltaRule
from .quadrature import bulk_quadrature
from .solver import condition_number, solve

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution, its physical gradient and the matching source term.

    All callables take physical points of shape ``(n, d)``.
    """

    name: str
    u: Field
    grad: Field
    f: Field
    g: Optional[Field] = None
    zero_mean: bool = False

    def shifted(self, c: float) -> "ManufacturedProblem":
        """Same problem with ``u`` replaced by ``u + c``."""
        u = self.u
        g = self.g
        return replace(self, u=lambda x: u(x) + c, g=(lambda x: g(x) + c) if g is not None else None)


def manufactured_2d() -> ManufacturedProblem:
    """``u = sin(2 pi (x - 0.3)) cos(2 pi (y + 0.4))`` with ``f = 8 pi^2 u``."""
    k = 2.0 * np.pi

    def u(x):
        return np.sin(k * (x[:, 0] - 0.3)) * np.cos(k * (x[:, 1] + 0.4))

    def grad(x):
        a, b = k * (x[:, 0] - 0.3), k * (x[:, 1] + 0.4)
        return np.stack([k * np.cos(a) * np.cos(b), -k * np.sin(a) * np.sin(b)], axis=-1)

    return ManufacturedProblem("sinusoid2d", u, grad, lambda x: 2.0 * k * k * u(x), u)


def polynomial_2d(cx: float = 1.0, cy: float = -0.5, c0: float = 0.25) -> ManufacturedProblem:
    """Harmonic linear function, reproduced exactly by every degree."""
    def u(x):
        return c0 + cx * x[:, 0] + cy * x[:, 1]

    def grad(x):
        return np.broadcast_to(np.array([cx, cy]), x.shape).copy()

    return ManufacturedProblem("linear2d", u, grad, lambda x: np.zeros(len(x)), u)


def ellipsoid_laplace_beltrami(axes: Tuple[float, float, float] = (3.0, 2.0, 1.0)) -> ManufacturedProblem:
    """``u = sin(4x) cos(3y)`` restricted to the ellipsoid, ``f = -Delta_Gamma u``.

    The surface Laplacian is evaluated in closed form from the level set
    ``phi = x^2/a^2 + y^2/b^2 + z^2/c^2 - 1``:
    ``Delta_Gamma u = Delta u - n.(D^2 u) n - H (n . grad u)`` with the
    mean curvature ``H = div n``.
    """
    a, b, c = axes
    inv2 = np.array([1 / a ** 2, 1 / b ** 2, 1 / c ** 2])

    def u(x):
        return np.sin(4 * x[:, 0]) * np.cos(3 * x[:, 1])

    def grad3(x):
        s4, c4 = np.sin(4 * x[:, 0]), np.cos(4 * x[:, 0])
        s3, c3 = np.sin(3 * x[:, 1]), np.cos(3 * x[:, 1])
        return np.stack([4 * c4 * c3, -3 * s4 * s3, np.zeros(len(x))], axis=-1)

    def f(x):
        s4, c4 = np.sin(4 * x[:, 0]), np.cos(4 * x[:, 0])
        s3, c3 = np.sin(3 * x[:, 1]), np.cos(3 * x[:, 1])
        uu = s4 * c3
        H = np.zeros((len(x), 3, 3))
        H[:, 0, 0] = -16 * uu
        H[:, 1, 1] = -9 * uu
        H[:, 0, 1] = H[:, 1, 0] = -12 * c4 * s3
        gphi = 2 * x * inv2
        ng = np.linalg.norm(gphi, axis=1)
        n = gphi / ng[:, None]
        lap_phi = 2 * inv2.sum()
        hess_phi_nn = np.einsum("qi,i,qi->q", n, 2 * inv2, n)
        curv = (lap_phi - hess_phi_nn) / ng
        lap_u = -25 * uu
        lb = lap_u - np.einsum("qi,qij,qj->q", n, H, n) - curv * np.einsum("qi,qi->q", n, grad3(x))
        return -lb

    return ManufacturedProblem("ellipsoid", u, grad3, f, None, zero_mean=True)


def problem_by_name(name: str) -> ManufacturedProblem:
    if name == "sinusoid2d":
        return manufactured_2d()
    if name == "linear2d":
        return polynomial_2d()
    if name == "ellipsoid":
        return ellipsoid_laplace_beltrami()
    raise ValueError(f"unknown problem {name!r}")


def laplace_beltrami_reference(map_, uhat: Callable, xhat: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """``|G|^{-1/2} div(|G|^{1/2} G^{-1} grad uhat)`` by Richardson-extrapolated differences.

    Used as an independent check of closed-form source terms; ``uhat``
    maps reference points to values.
    """
    from .geometry import metric_at

    def flux(pts, hstep):
        gu = np.stack([(uhat(pts + hstep * e) - uhat(pts - hstep * e)) / (2 * hstep)
                       for e in np.eye(2)], axis=-1)
        md = metric_at(map_, pts)
        Ginv = np.linalg.inv(md.G)
        return md.sqrt_det[:, None] * np.einsum("qij,qj->qi", Ginv, gu)

    def div(hstep):
        out = np.zeros(len(xhat))
        for k, e in enumerate(np.eye(2)):
            out += (flux(xhat + hstep * e, hstep)[:, k] - flux(xhat - hstep * e, hstep)[:, k]) / (2 * hstep)
        return out

    d1, d2 = div(step), div(step / 2)
    sq = metric_at(map_, xhat).sqrt_det
    return (4 * d2 - d1) / 3 / sq


# --------------------------------------------------------------------------
# error norms


@dataclass
class ErrorReport:
    l2: float
    h1: float
    mean_h: float
    mean_u: float
    area: float


def compute_errors(discs: Sequence[PatchDiscretization], system: AssembledSystem, coeffs: np.ndarray,
                   problem: ManufacturedProblem, variant: str = "regularized",
                   quad_extra: int = 1, mean_free: bool = False) -> ErrorReport:
    """L2 error and regularized H1-seminorm error over all patches.

    The measure and the flux tensor come from the same pointwise routine as
    the assembly.  The naive variant is measured with the eigenpair-wise
    tensor at ``delta = 0`` so that a failing method does not also break the
    ruler.  With ``mean_free`` both ``u`` and ``u_h`` have their mean removed.
    """
    err_variant = "robust-delta0" if variant == "naive" else variant
    parts = []
    for k, disc in enumerate(discs):
        Q = bulk_quadrature(disc.classification, disc.p + 1 + quad_extra)
        eop = Q.element_of_point()
        ldofs = element_dofs(disc.space, Q.elements)
        gd = system.dofmap.global_dofs(k, ldofs)
        c = coeffs[gd][eop]
        vals, grads = basis_on_local(disc.space, Q.local)
        uh = np.einsum("qa,qa->q", vals, c)
        guh = np.einsum("qai,qa->qi", grads, c)
        fd = flux_at(disc.patch.map, Q.points, disc.delta, err_variant)
        x = disc.patch.map.eval(Q.points)
        u = problem.u(x)
        gu = np.einsum("qki,qk->qi", fd.DF, problem.grad(x))
        parts.append((Q.weights, fd.sqrt_det, u, uh, gu - guh, fd.R))
    area = sum(float(np.dot(w, sq)) for w, sq, *_ in parts)
    mean_u = sum(float(np.dot(w * sq, u)) for w, sq, u, *_ in parts) / area
    mean_h = sum(float(np.dot(w * sq, uh)) for w, sq, _, uh, *_ in parts) / area
    su, sh = (mean_u, mean_h) if mean_free else (0.0, 0.0)
    l2 = sum(float(np.dot(w * sq, ((u - su) - (uh - sh)) ** 2)) for w, sq, u, uh, *_ in parts)
    h1 = sum(float(np.einsum("q,qi,qij,qj->", w, e, R, e)) for w, _, _, _, e, R in parts)
    return ErrorReport(math.sqrt(max(l2, 0.0)), math.sqrt(max(h1, 0.0)), mean_h, mean_u, area)


def l2_error(discs, system, coeffs, problem, **kw) -> float:
    return compute_errors(discs, system, coeffs, problem, **kw).l2


def h1_semi_error(discs, system, coeffs, problem, **kw) -> float:
    return compute_errors(discs, system, coeffs, problem, **kw).h1


# --------------------------------------------------------------------------
# studies


def eoc(e1: float, e2: float, h1: float, h2: float) -> float:
    """Estimated order of convergence between two refinements."""
    if not (e1 > 0 and e2 > 0 and np.isfinite(e1) and np.isfinite(e2)):
        return float("nan")
    return math.log(e1 / e2) / math.log(h1 / h2)


@dataclass(frozen=True)
class StudyConfig:
    """Everything needed to reproduce one study."""

    domain: str = "model8"
    gamma: float = 2.0
    degrees: Tuple[int, ...] = (1, 2)
    hs: Tuple[float, ...] = (0.25, 0.125, 0.0625, 0.03125)
    rotation: Tuple[float, ...] = (0.0,)
    anchor: Tuple[float, float] = (0.0, 0.0)
    delta_mode: str = "cusp"
    delta_exponent: float = 1.0
    delta_value: float = 0.0
    variant: str = "regularized"
    ghost: Optional[bool] = None
    eta: float = 0.01
    beta: Optional[float] = None
    kappa: float = 0.5
    problem: str = "sinusoid2d"
    compute_cond: bool = False
    expect_failure: bool = False

    def __post_init__(self):
        if not self.degrees or any(p < 1 for p in self.degrees):
            raise ValueError("degrees must be a non-empty list of integers >= 1")
        if not self.hs or any(h <= 0 for h in self.hs):
            raise ValueError("mesh sizes must be positive")
        AssemblyParams(variant=self.variant, beta=self.beta, eta=self.eta, kappa=self.kappa)
        DeltaRule(self.delta_mode, 1, self.gamma, self.delta_value, self.delta_exponent)

    def params(self, p: int) -> AssemblyParams:
        rule = DeltaRule(self.delta_mode, p, self.gamma, self.delta_value, self.delta_exponent)
        return AssemblyParams(delta_rule=rule, variant=self.variant, beta=self.beta, eta=self.eta,
                              kappa=self.kappa, ghost=self.ghost)

    def build_domain(self) -> MultipatchDomain:
        return build_domain(self.domain, self.gamma)

    def rotations_for(self, domain: MultipatchDomain):
        if len(self.rotation) == 1:
            return float(self.rotation[0])
        if len(self.rotation) != len(domain.patches):
            raise ValueError("rotation needs one value or one per patch")
        return list(self.rotation)


@dataclass
class ConvergenceRow:
    p: int
    h: float
    dofs: int
    err_l2: float
    err_h1: float
    eoc_l2: float = float("nan")
    eoc_h1: float = float("nan")
    cond: float = float("nan")
    status: str = "ok"
    message: str = ""
    mean: float = float("nan")
    diagnostics: Dict[str, int] = field(default_factory=dict)
    seconds: float = 0.0


def fill_eoc(rows: List[ConvergenceRow]) -> List[ConvergenceRow]:
    """EOC columns between consecutive rows of equal degree."""
    for prev, cur in zip(rows[:-1], rows[1:]):
        if prev.p == cur.p:
            cur.eoc_l2 = eoc(prev.err_l2, cur.err_l2, prev.h, cur.h)
            cur.eoc_h1 = eoc(prev.err_h1, cur.err_h1, prev.h, cur.h)
    return rows


def bordered_system(system: AssembledSystem, discs: Sequence[PatchDiscretization]):
    """Append one multiplier row enforcing a zero mean of ``u_h``."""
    c = np.zeros(system.ndofs)
    for k, disc in enumerate(discs):
        Q = disc.bulk
        vals, _ = basis_on_local(disc.space, Q.local, nder=0)
        fd = flux_at(disc.patch.map, Q.points, disc.delta)
        eop = Q.element_of_point()
        gd = system.dofmap.global_dofs(k, element_dofs(disc.space, Q.elements))[eop]
        np.add.at(c, gd.ravel(), ((Q.weights * fd.sqrt_det)[:, None] * vals).ravel())
    col = sp.csr_matrix(c[:, None])
    A = sp.bmat([[system.A, col], [col.T, None]], format="csr")
    b = np.concatenate([system.b, [0.0]])
    return A, b, c


def run_case(domain: MultipatchDomain, problem: ManufacturedProblem, p: int, h: float,
             params: AssemblyParams, rotation=0.0, anchor=(0.0, 0.0), compute_cond: bool = False,
             mean_free: bool = False) -> ConvergenceRow:
    """Discretize, assemble, solve and measure one ``(p, h)`` pair."""
    t0 = time.perf_counter()
    discs = discretize(domain, h, p, params, rotation, anchor)
    system = assemble_system(domain, discs, params, problem.f, problem.g)
    diag = system.diagnostics.as_dict()
    cond = float("nan")
    if compute_cond:
        cond = condition_number(system.A).cond
    if problem.zero_mean:
        A, b, c = bordered_system(system, discs)
        rep = solve(A, b, scale=False)
        x = rep.x[:-1] if rep.x is not None else None
    else:
        rep = solve(system.A, system.b)
        x = rep.x
    row = ConvergenceRow(p, h, system.ndofs, float("nan"), float("nan"), cond=cond,
                         diagnostics=diag)
    if x is None:
        row.status, row.message = "failed", rep.message
    else:
        if not rep.success:
            row.status, row.message = "inaccurate", rep.message
        er = compute_errors(discs, system, x, problem, params.variant, mean_free=mean_free or problem.zero_mean)
        row.err_l2, row.err_h1, row.mean = er.l2, er.h1, er.mean_h
    row.seconds = time.perf_counter() - t0
    return row


def run_convergence(study: StudyConfig, problem: Optional[ManufacturedProblem] = None) -> List[ConvergenceRow]:
    domain = study.build_domain()
    problem = problem or problem_by_name(study.problem)
    rows = []
    for p in study.degrees:
        for h in study.hs:
            rows.append(run_case(domain, problem, p, h, study.params(p), study.rotations_for(domain),
                                 study.anchor, study.compute_cond))
    return fill_eoc(rows)


def run_surface(study: StudyConfig) -> List[ConvergenceRow]:
    """Laplace-Beltrami problem with a zero-mean constraint."""
    if study.domain != "ellipsoid":
        raise ValueError("the surface study runs on the ellipsoid domain")
    return run_convergence(study, problem_by_name("ellipsoid"))


@dataclass
class ConditionRow:
    gamma: float
    p: int
    h: float
    dofs: int
    cond: Dict[str, float]
    status: Dict[str, str]


def run_condition_sweep(gammas: Sequence[float], p: int, h: float, variants: Sequence[str] = ("regularized", "robust-delta0", "naive"),
                        domain_name: str = "model8", delta_mode: str = "cusp") -> List[ConditionRow]:
    rows = []
    for gamma in gammas:
        domain = build_domain(domain_name, gamma)
        conds, status, ndofs = {}, {}, 0
        for v in variants:
            rule = DeltaRule(delta_mode, p, gamma)
            params = AssemblyParams(delta_rule=rule, variant=v)
            discs = discretize(domain, h, p, params)
            system = assemble_system(domain, discs, params)
            ndofs = system.ndofs
            rep = condition_number(system.A)
            conds[v] = rep.cond
            status[v] = "ok" if rep.ok else (rep.message or "failed")
        rows.append(ConditionRow(gamma, p, h, ndofs, conds, status))
    return rows


@dataclass
class DeltaStudyResult:
    gamma: float
    p: int
    hs: Tuple[float, ...]
    exponents: Tuple[float, ...]
    l2: np.ndarray    # (nh, nexp)
    h1: np.ndarray

    def eoc_l2(self) -> np.ndarray:
        return _eoc_table(self.l2, self.hs)

    def eoc_h1(self) -> np.ndarray:
        return _eoc_table(self.h1, self.hs)


def _eoc_table(err: np.ndarray, hs) -> np.ndarray:
    out = np.full(err.shape, np.nan)
    for r in range(1, err.shape[0]):
        for c in range(err.shape[1]):
            out[r, c] = eoc(err[r - 1, c], err[r, c], hs[r - 1], hs[r])
    return out


def run_delta_study(gamma: float, p: int, hs: Sequence[float], exponents: Sequence[float],
                    domain_name: str = "model8") -> DeltaStudyResult:
    """Errors for ``delta = h^alpha`` over a list of exponents ``alpha``."""
    domain = build_domain(domain_name, gamma)
    problem = manufactured_2d()
    l2 = np.full((len(hs), len(exponents)), np.nan)
    h1 = np.full_like(l2, np.nan)
    for c, alpha in enumerate(exponents):
        params = AssemblyParams(delta_rule=DeltaRule("power", p, gamma, exponent=float(alpha)))
        for r, h in enumerate(hs):
            row = run_case(domain, problem, p, h, params)
            l2[r, c], h1[r, c] = row.err_l2, row.err_h1
    return DeltaStudyResult(gamma, p, tuple(hs), tuple(exponents), l2, h1)


def optimal_exponent(gamma: float, p: int) -> float:
    return 4.0 * gamma * p / (gamma + 1.0)
