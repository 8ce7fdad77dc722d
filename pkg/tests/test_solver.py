import numpy as np
import pytest
import scipy.sparse as sp

from singiga.assembly import AssemblyParams, assemble_system, discretize
from singiga.experiments import manufactured_2d
from singiga.geometry import build_domain
from singiga.metric_reg import DeltaRule
from singiga.solver import condition_number, extreme_eigenvalues, solve


def poisson_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_identity_solve():
    rep = solve(sp.identity(5, format="csr"), np.eye(5)[0])
    np.testing.assert_allclose(rep.x, np.eye(5)[0])
    assert rep.success and rep.status == "ok"


def test_tridiagonal_hand_solve():
    rep = solve(poisson_1d(3), np.ones(3))
    np.testing.assert_allclose(rep.x, [1.5, 2.0, 1.5], rtol=1e-14)


def test_model8_residual():
    dom = build_domain("model8", 2.0)
    params = AssemblyParams(DeltaRule("cusp", 2, 2.0))
    prob = manufactured_2d()
    s = assemble_system(dom, discretize(dom, 0.25, 2, params), params, prob.f, prob.u)
    rep = solve(s.A, s.b)
    assert rep.success and rep.residual <= 1e-10


def test_cg_fallback_matches_direct():
    A = poisson_1d(200) + sp.identity(200) * 0.1
    b = np.random.default_rng(0).random(200)
    d = solve(A, b)
    c = solve(A, b, direct_limit=10)
    assert c.method == "cg" and d.method == "splu"
    np.testing.assert_allclose(c.x, d.x, rtol=1e-9)


def test_singular_system_reported():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    rep = solve(A, np.array([1.0, 0.0]))
    assert not rep.success and rep.message


def test_non_finite_reported():
    A = sp.csr_matrix(np.array([[np.inf, 0.0], [0.0, 1.0]]))
    rep = solve(A, np.ones(2))
    assert not rep.success and "non-finite" in rep.message
    assert not condition_number(A).ok


def test_solve_deterministic():
    dom = build_domain("model8", 2.0)
    params = AssemblyParams(DeltaRule("cusp", 1, 2.0))
    prob = manufactured_2d()
    s = assemble_system(dom, discretize(dom, 0.125, 1, params, 0.3), params, prob.f, prob.u)
    x1, x2 = solve(s.A, s.b).x, solve(s.A, s.b).x
    assert x1.tobytes() == x2.tobytes()


def test_condition_trivial():
    assert condition_number(sp.diags([1.0, 10.0])).cond == pytest.approx(10.0)
    assert condition_number(sp.identity(4)).cond == pytest.approx(1.0)


def test_condition_indefinite():
    rep = condition_number(sp.diags([-1.0, 2.0, 3.0]))
    assert rep.indefinite and not rep.ok and rep.lam_min == pytest.approx(-1.0)


def test_dense_and_lanczos_agree():
    dom = build_domain("model8", 2.0)
    params = AssemblyParams(DeltaRule("cusp", 2, 2.0))
    A = assemble_system(dom, discretize(dom, 0.25, 2, params, 0.3), params).A
    dense = condition_number(A, dense_limit=10 ** 6)
    lanczos = condition_number(A, dense_limit=0)
    assert dense.method.startswith("dense") and lanczos.method == "lanczos"
    assert lanczos.cond == pytest.approx(dense.cond, rel=0.05)


def test_q1_laplacian_condition_growth():
    dom = build_domain("square")
    params = AssemblyParams()
    conds = []
    for h in (1 / 4, 1 / 8, 1 / 16):
        A = assemble_system(dom, discretize(dom, h, 1, params), params).A
        conds.append(condition_number(A).cond)
    ratios = np.array(conds[1:]) / np.array(conds[:-1])
    assert np.all((ratios >= 3) & (ratios <= 5))


def test_extreme_eigenvalues_small():
    lo, hi, method = extreme_eigenvalues(poisson_1d(50))
    k = np.arange(1, 51)
    ev = 2 - 2 * np.cos(k * np.pi / 51)
    assert lo == pytest.approx(ev.min(), rel=1e-10) and hi == pytest.approx(ev.max(), rel=1e-10)
