import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from singiga.geometry import (AffineMap, CollapsedBilinearMap, CuspMap, EllipsoidQuarterMap, ModelPatchMap,
                              OutsideReferenceDomain, SideKind, build_domain, build_ellipsoid_multipatch,
                              build_model_multipatch, metric_at)
from singiga.quadrature import gauss_quad

ALL_MAPS = ([AffineMap(), CuspMap(1.0), CuspMap(2.0), CuspMap(5.0), CollapsedBilinearMap()]
            + [ModelPatchMap(k, 2.0) for k in range(1, 9)]
            + [EllipsoidQuarterMap(k) for k in range(4)])


def test_cusp_values():
    np.testing.assert_allclose(CuspMap(2.0).eval(np.array([[0.5, 0.5]])), [[0.5, 0.125]], rtol=1e-15)
    for g in (1.0, 2.0, 3.7):
        y = np.linspace(0, 1, 7)
        pts = np.stack([np.ones_like(y), y], -1)
        np.testing.assert_allclose(CuspMap(g).eval(pts), pts, atol=1e-15)


def test_collapsed_bilinear_corner():
    np.testing.assert_allclose(CollapsedBilinearMap().eval(np.array([[0.0, 1.0]])), [[0.5, 0.5]], atol=1e-15)


def test_cusp_jacobians():
    np.testing.assert_allclose(CuspMap(2.0).jacobian(np.array([[0.5, 0.5]]))[0], [[1, 0], [0.5, 0.25]], atol=1e-15)
    y = 0.37
    np.testing.assert_allclose(CuspMap(1.0).jacobian(np.array([[0.0, y]]))[0], [[1, 0], [y, 0]], atol=1e-15)
    rng = np.random.default_rng(0)
    np.testing.assert_allclose(AffineMap().jacobian(rng.random((5, 2))), np.broadcast_to(np.eye(2), (5, 2, 2)))


def test_metric_examples():
    md = metric_at(CuspMap(2.0), np.array([[0.5, 0.5], [0.5, 0.9]]))
    np.testing.assert_allclose(md.sqrt_det, [0.25, 0.25], rtol=1e-14)
    np.testing.assert_allclose(md.G[0], [[1.25, 0.125], [0.125, 0.0625]], rtol=1e-14)
    ident = metric_at(AffineMap(), np.array([[0.2, 0.3]]))
    np.testing.assert_allclose(ident.G[0], np.eye(2))
    assert ident.sqrt_det[0] == pytest.approx(1.0)


def test_rejects_points_outside():
    with pytest.raises(OutsideReferenceDomain):
        CuspMap(2.0).eval(np.array([[1.0 + 1e-9, 0.5]]))
    # tolerance band is accepted
    CuspMap(2.0).eval(np.array([[1.0 + 1e-13, -1e-13]]))


@pytest.mark.parametrize("m", ALL_MAPS, ids=lambda m: type(m).__name__ + str(getattr(m, "index", "")))
def test_jacobian_matches_finite_differences(m):
    rng = np.random.default_rng(42)
    x = 1e-5 + (1 - 2e-5) * rng.random((1000, 2))
    J = m.jacobian(x)
    step = 1e-6
    for c in range(2):
        e = np.zeros(2)
        e[c] = step
        fd = (m.eval(x + e) - m.eval(x - e)) / (2 * step)
        np.testing.assert_allclose(J[..., c], fd, atol=1e-6)


@pytest.mark.parametrize("m", ALL_MAPS, ids=lambda m: type(m).__name__ + str(getattr(m, "index", "")))
def test_metric_consistency(m):
    rng = np.random.default_rng(3)
    md = metric_at(m, rng.random((200, 2)))
    np.testing.assert_allclose(md.G, np.einsum("nki,nkj->nij", md.DF, md.DF), rtol=1e-14, atol=1e-15)
    det = np.linalg.det(md.G)
    np.testing.assert_allclose(md.sqrt_det ** 2, det, rtol=1e-8, atol=1e-14)


@pytest.mark.parametrize("gamma", [1.0, 2.0, 5.0])
def test_cusp_determinant_closed_form(gamma):
    rng = np.random.default_rng(int(gamma))
    x = rng.random((10_000, 2))
    md = metric_at(CuspMap(gamma), x)
    lam = md.eig.values
    np.testing.assert_allclose(lam.prod(-1), x[:, 0] ** (2 * gamma), rtol=1e-10, atol=0)
    np.testing.assert_allclose(lam.sum(-1), np.trace(md.G, axis1=1, axis2=2), rtol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-8, 1e-3), st.floats(0, 1), st.sampled_from([1.5, 2.0, 3.0, 5.0]))
def test_cusp_leading_order_eigenvalues(x, y, gamma):
    # for gamma = 1 the large eigenvalue tends to 1 + y^2, so the bound needs gamma > 1
    lam = metric_at(CuspMap(gamma), np.array([[x, y]])).eig.values[0]
    assert 0.9 <= lam[0] / x ** (2 * gamma) <= 1.1
    assert 0.9 <= lam[1] <= 1.1 * (1 + gamma ** 2 * y ** 2 * x ** (2 * (gamma - 1)))


@pytest.mark.parametrize("gamma", [1.0, 2.0, 3.0, 5.0])
def test_model8_area(gamma):
    dom = build_model_multipatch(gamma)
    assert len(dom.patches) == 8
    q = gauss_quad(30)
    area = sum(float(np.dot(q.weights, metric_at(p.map, q.points).sqrt_det)) for p in dom.patches)
    assert area == pytest.approx(4.0, rel=1e-9)


def test_model8_gamma1_images_straight():
    # for gamma = 1 every patch side is a straight segment
    dom = build_model_multipatch(1.0)
    t = np.linspace(0, 1, 11)
    for p in dom.patches:
        for k in range(4):
            a, b = p.edge(k)
            pts = p.map.eval(a + t[:, None] * (b - a))
            d = pts - pts[0]
            e = pts[-1] - pts[0]
            assert np.abs(d[:, 0] * e[1] - d[:, 1] * e[0]).max() < 1e-12


@pytest.mark.parametrize("name", ["model8", "ellipsoid", "square", "square2"])
def test_interfaces_match(name):
    dom = build_domain(name, 3.0)
    assert dom.matching_error(n=100, seed=7) < 1e-12
    # every interface side appears in exactly one interface curve
    seen = set()
    for itf in dom.interfaces:
        for key in ((itf.patch_i, itf.side_i), (itf.patch_j, itf.side_j)):
            assert key not in seen
            seen.add(key)
    for k, p in enumerate(dom.patches):
        for sc in p.sides:
            assert (sc.kind is SideKind.INTERFACE) == ((k, sc.side) in seen)


def test_model8_boundary_kinds():
    dom = build_model_multipatch(2.0)
    for p in dom.patches:
        for sc in p.sides:
            if sc.kind is SideKind.COLLAPSED:
                a, b = p.edge(sc.side)
                pts = p.map.eval(a + np.linspace(0, 1, 9)[:, None] * (b - a))
                assert np.ptp(pts, axis=0).max() < 1e-14
            if sc.kind is SideKind.DIRICHLET:
                a, b = p.edge(sc.side)
                pts = p.map.eval(a + np.linspace(0, 1, 9)[:, None] * (b - a))
                assert np.all(np.isclose(np.abs(pts).max(axis=1), 1.0, atol=1e-14))


def test_ellipsoid_points_on_surface():
    rng = np.random.default_rng(0)
    for k in range(4):
        x = EllipsoidQuarterMap(k).eval(rng.random((500, 2)))
        np.testing.assert_allclose(x[:, 0] ** 2 / 9 + x[:, 1] ** 2 / 4 + x[:, 2] ** 2, 1.0, atol=1e-12)


def test_ellipsoid_poles_collapse():
    dom = build_ellipsoid_multipatch()
    assert not dom.has_dirichlet()
    for p in dom.patches:
        kinds = {sc.side: sc.kind for sc in p.sides}
        assert kinds[0] is SideKind.COLLAPSED and kinds[2] is SideKind.COLLAPSED
        s = np.linspace(0, 1, 11)
        for y in (0.0, 1.0):
            md = metric_at(p.map, np.stack([s, np.full_like(s, y)], -1))
            assert md.sqrt_det.max() < 1e-12


def test_ellipsoid_area_against_independent_quadrature():
    # surface area of the ellipsoid by adaptive quadrature of the classical parameterization
    a, b, c = 3.0, 2.0, 1.0

    def dA(phi, th):
        st_, ct = np.sin(th), np.cos(th)
        sp_, cp = np.sin(phi), np.cos(phi)
        n = np.array([b * c * st_ * st_ * cp, a * c * st_ * st_ * sp_, a * b * st_ * ct])
        return np.linalg.norm(n)

    ref, _ = integrate.dblquad(dA, 0, np.pi, 0, 2 * np.pi, epsabs=1e-11, epsrel=1e-11)
    assert ref == pytest.approx(48.88, abs=0.01)
    q = gauss_quad(40)
    area = sum(float(np.dot(q.weights, metric_at(p.map, q.points).sqrt_det)) for p in build_ellipsoid_multipatch().patches)
    assert area == pytest.approx(ref, rel=1e-9)


def test_cusp_rejects_small_gamma():
    with pytest.raises(ValueError):
        CuspMap(0.5)
