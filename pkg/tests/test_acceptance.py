"""End-to-end acceptance criteria.

Each criterion is split into parts marked ``criterion(n)``; the terminal
summary prints one PASS/FAIL line per criterion.  Parts that this
implementation does not meet are xfails and show up as FAIL in the summary.
The deterministic one is strict; the two whose outcome hinges on rounding in
a near-singular solve are not, and count as PASS if they happen to pass.
"""
from functools import lru_cache

import numpy as np
import pytest

from singiga.assembly import AssemblyParams, assemble_system, discretize
from singiga.cli import main
from singiga.experiments import (StudyConfig, optimal_exponent, run_condition_sweep, run_convergence,
                                 run_delta_study, run_surface)
from singiga.geometry import CuspMap, build_domain, metric_at
from singiga.metric_reg import DeltaRule, reg_flux_tensor, sym_eig
from singiga.solver import condition_number

pytestmark = pytest.mark.acceptance

HS = (1 / 4, 1 / 8, 1 / 16, 1 / 32)
ROTATION = 0.3


def final(rows, p):
    return [r for r in rows if r.p == p][-1]


def short(x):
    return f"{x:.3g}"


# -- 1: regularization kernel ---------------------------------------------------

@pytest.mark.criterion(1)
def test_kernel_matches_dense_oracle(record_property):
    rng = np.random.default_rng(2024)
    n, delta = 100_000, 1e-3
    theta = rng.uniform(0, np.pi, n)
    lam = np.sort(rng.uniform(np.log(2 * delta), np.log(1e3), (n, 2)), axis=1)
    lam = np.exp(lam)
    c, s = np.cos(theta), np.sin(theta)
    V = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    G = np.einsum("nik,nk,njk->nij", V, lam, V)
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    assert sym_eig(G).values[:, 0].min() > delta
    R = reg_flux_tensor(G, delta).R
    ref = np.sqrt(np.linalg.det(G))[:, None, None] * np.linalg.inv(G)
    rel = np.linalg.norm(R - ref, axis=(1, 2)) / np.linalg.norm(ref, axis=(1, 2))
    record_property("max_rel", short(rel.max()))
    assert rel.max() <= 1e-10


@pytest.mark.criterion(1)
def test_kernel_singular_example():
    R = reg_flux_tensor(np.diag([1.0, 0.0]), 0.04).R
    assert np.all(np.isfinite(R))
    np.testing.assert_allclose(R, np.diag([0.0, 5.0]), atol=1e-12)


# -- 2: cusp analytics ----------------------------------------------------------

@pytest.mark.criterion(2)
@pytest.mark.parametrize("gamma", [1.0, 2.0, 5.0])
def test_cusp_determinant_and_eigen_identities(gamma, record_property):
    x = np.random.default_rng(int(gamma)).uniform(0.01, 1.0, (10_000, 2))
    md = metric_at(CuspMap(gamma), x)
    det = md.eig.values.prod(axis=1)
    rel = np.abs(det - x[:, 0] ** (2 * gamma)) / x[:, 0] ** (2 * gamma)
    G = md.G
    trace = G[:, 0, 0] + G[:, 1, 1]
    detG = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    eps = np.finfo(float).eps
    record_property("max_rel_det", short(rel.max()))
    assert rel.max() <= 1e-10
    assert np.all(np.abs(md.eig.values.sum(axis=1) - trace) <= 4 * eps * trace)
    assert np.all(np.abs(det - detG) <= 4 * eps * np.abs(detG))


# -- 3: matching meshes ---------------------------------------------------------

@lru_cache(maxsize=None)
def matching(p):
    hs = HS if p < 3 else HS[:3]
    return run_convergence(StudyConfig(degrees=(p,), hs=hs))


def check_rates(rows, p, record_property):
    r = final(rows, p)
    record_property("eoc_l2", short(r.eoc_l2))
    record_property("eoc_h1", short(r.eoc_h1))
    assert all(x.status == "ok" for x in rows)
    assert r.eoc_l2 >= p + 1 - 0.2
    assert r.eoc_h1 >= p - 0.2


@pytest.mark.criterion(3)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_matching_mesh_rates(p, record_property):
    check_rates(matching(p), p, record_property)


# -- 4: trimmed meshes ----------------------------------------------------------

def trimmed(p):
    return run_convergence(StudyConfig(degrees=(p,), hs=HS, rotation=(ROTATION,)))


@pytest.mark.criterion(4)
@pytest.mark.xfail(strict=True, reason="linear splines lock near collapsed sides that cut the rotated grid")
def test_trimmed_rates_linear(record_property):
    check_rates(trimmed(1), 1, record_property)


@pytest.mark.criterion(4)
def test_trimmed_rates_quadratic(record_property):
    check_rates(trimmed(2), 2, record_property)


@pytest.mark.criterion(4)
def test_ghost_penalty_needed(record_property):
    dom = build_domain("model8", 2.0)
    conds = {}
    for ghost in (True, False):
        params = AssemblyParams(DeltaRule("cusp", 2, 2.0), ghost=ghost)
        A = assemble_system(dom, discretize(dom, 1 / 8, 2, params, 1e-4), params).A
        rep = condition_number(A)
        conds[ghost] = rep.cond if rep.ok else np.inf
    ratio = conds[False] / conds[True]
    record_property("ratio", short(ratio))
    assert np.isfinite(conds[True])
    assert ratio >= 1e3


# -- 5: delta scaling -----------------------------------------------------------

@pytest.mark.criterion(5)
@pytest.mark.parametrize("gamma", [1.0, 2.0, 3.0])
@pytest.mark.parametrize("p", [1, 2])
def test_optimal_delta_exponent(gamma, p, record_property):
    res = run_delta_study(gamma, p, HS, (optimal_exponent(gamma, p),))
    l2, h1 = res.eoc_l2()[-1, 0], res.eoc_h1()[-1, 0]
    record_property("eoc_l2", short(l2))
    record_property("eoc_h1", short(h1))
    assert l2 >= p + 1 - 0.2 and h1 >= p - 0.2


@pytest.mark.criterion(5)
def test_too_large_delta_degrades(record_property):
    res = run_delta_study(2.0, 2, HS, (1.0,))
    l2 = res.eoc_l2()[-1, 0]
    record_property("eoc_l2", short(l2))
    assert l2 < 2 + 1 - 0.5


# -- 6: extreme singularity -----------------------------------------------------

@pytest.mark.criterion(6)
def test_naive_condition_blows_up(record_property):
    rows = run_condition_sweep([1, 2, 3, 4, 5, 6], 2, 0.1, ("regularized", "naive"))
    for r in rows:
        ratio = r.cond["naive"] / r.cond["regularized"]
        record_property(f"g{int(r.gamma)}", short(ratio))
        if r.gamma >= 4:
            assert ratio >= 1e2


@lru_cache(maxsize=None)
def extreme(variant):
    return run_convergence(StudyConfig(gamma=5.0, degrees=(2,), hs=HS, variant=variant))


@pytest.mark.criterion(6)
def test_extreme_regularized_rate(record_property):
    r = final(extreme("regularized"), 2)
    record_property("eoc_l2", short(r.eoc_l2))
    assert r.eoc_l2 >= 2.8


@pytest.mark.criterion(6)
# condition near 1e17 at the finest mesh: the outcome is decided by rounding in the solve
@pytest.mark.xfail(strict=False, reason="without regularization the gamma=5 system is too ill-conditioned to solve")
def test_extreme_delta0_rate(record_property):
    r = final(extreme("robust-delta0"), 2)
    record_property("eoc_l2", short(r.eoc_l2))
    assert r.eoc_l2 >= 2.8


@pytest.mark.criterion(6)
@pytest.mark.xfail(strict=False, reason="the naive error still decreases on every refinement")
def test_extreme_naive_stalls(record_property):
    err = [r.err_l2 for r in extreme("naive")]
    record_property("err_l2", ",".join(short(e) for e in err))
    assert any(not (b < a) for a, b in zip(err[:-1], err[1:]))


# -- 7: surface problem ---------------------------------------------------------

@pytest.mark.criterion(7)
@pytest.mark.parametrize("p", [1, 2])
def test_surface_rates(p, record_property):
    rows = run_surface(StudyConfig(domain="ellipsoid", problem="ellipsoid", degrees=(p,),
                                   hs=(1 / 8, 1 / 16, 1 / 32, 1 / 64)))
    r = final(rows, p)
    worst_mean = max(abs(x.mean) for x in rows)
    record_property("eoc_l2", short(r.eoc_l2))
    record_property("max_mean", short(worst_mean))
    assert all(x.status == "ok" for x in rows)
    assert r.eoc_l2 >= p + 1 - 0.2
    assert worst_mean <= 1e-10


# -- 8: condition scaling -------------------------------------------------------

@pytest.mark.criterion(8)
def test_condition_slope(record_property):
    dom = build_domain("model8", 2.0)
    params = AssemblyParams(DeltaRule("cusp", 2, 2.0))
    conds = [condition_number(assemble_system(dom, discretize(dom, h, 2, params), params).A).cond for h in HS]
    slope = np.polyfit(np.log(HS), np.log(conds), 1)[0]
    record_property("slope", short(slope))
    assert -4.0 <= slope <= -2.0


# -- 9: determinism -------------------------------------------------------------

@pytest.mark.criterion(9)
@pytest.mark.parametrize("command,body", [
    ("convergence", "degrees = 1, 2\nhs = 1/4, 1/8\nrotation = 0.3\ncompute_cond = yes\n"),
    ("surface", "degrees = 2\nhs = 1/4, 1/8\n"),
    ("condition", "gammas = 2, 5\nh = 0.25\n"),
], ids=["convergence", "surface", "condition"])
def test_byte_identical_reruns(tmp_path, command, body):
    cfg = tmp_path / "study.ini"
    cfg.write_text("[study]\nname = run\n" + body)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([command, "--config", str(cfg), "--out", str(out)]) == 0
        outs.append((out / "run.csv").read_bytes())
    assert outs[0] == outs[1]
