import numpy as np
import pytest
import sympy as sp

from stiso import analysis as an
from stiso.blending import BlendingConfig, BlendingKind
from stiso.cut import classify, spatial_cut_rules
from stiso.levelset import LinearLevelSet, MovingCircle, build_bundle
from stiso.mapping import IdealMapEvaluator, IdentityMap, build_theta
from stiso.mesh import TimeSlab, build_structured_mesh

SQUARE = [[-1, 1], [-1, 1]]
FE = BlendingConfig(BlendingKind.FE)


def _setup(ls, n=16, dt=0.05, q=2, blending=FE):
    b = build_bundle(ls, build_structured_mesh(SQUARE, n), TimeSlab(0.0, dt), q, q)
    return b, classify(b, blending)


@pytest.fixture(scope="module")
def circle():
    b, cls = _setup(MovingCircle())
    return b, cls, build_theta(b, cls), IdealMapEvaluator(b, cls)


# orders ---------------------------------------------------------------------------
def test_eoc_examples():
    o, f = an.eoc([1, 1 / 4, 1 / 16])
    np.testing.assert_allclose(o, [2, 2], atol=1e-14)
    assert not f.any()
    o, _ = an.eoc([1, 1 / 8, 1 / 64])
    np.testing.assert_allclose(o, [3, 3], atol=1e-14)
    o, f = an.eoc([1e-3, 1e-13, 0.0])
    assert f.tolist() == [True, True]
    assert np.all(np.isfinite(o))


def test_convergence_record_csv():
    rec = an.ConvergenceRecord(an.RefinementMode.SIMULTANEOUS, ["err"])
    rec.add(0.5, 0.2, {"err": 1.0})
    rec.add(0.25, 0.1, {"err": 0.125})
    text = rec.to_csv()
    lines = text.splitlines()
    assert lines[0] == "level,h,dt,err,eoc_err"
    assert lines[1] == "0,0.5,0.20000000000000001,1,"
    assert lines[2].split(",")[-1] == "3"
    assert rec.headline("err") == pytest.approx(3.0)
    assert rec.bound_constant("err", 1, 1) == pytest.approx(1.0 / (0.25 + 0.04))
    with pytest.raises(ValueError):
        rec.add(0.5, 0.05, {"err": 0.1})
    time_only = an.ConvergenceRecord(an.RefinementMode.TIME, ["err"])
    time_only.add(0.1, 0.4, {"err": 1.0})
    time_only.add(0.1, 0.2, {"err": 0.25})
    assert time_only.headline("err") == pytest.approx(2.0)


def test_error_metric_validation():
    with pytest.raises(ValueError):
        an.ErrorMetric("x", -1.0, 1)
    with pytest.raises(ValueError):
        an.ErrorMetric("x", float("nan"), 1)
    with pytest.raises(ValueError):
        an.ErrorMetric("x", 1.0, 0)


# map metrics ----------------------------------------------------------------------
def test_ideal_map_boundary_residual(circle):
    b, cls, _, ideal = circle
    tol = ideal.tol
    assert an.boundary_residual(b, ideal, cls).value < 10 * tol


def test_boundary_residual_of_identity_is_phi(circle):
    b, cls, _, _ = circle
    r = an.boundary_residual(b, IdentityMap(b.mesh), cls)
    # phi_lin differs from phi by O(h^2) on the interface
    assert 1e-5 < r.value < 5 * b.mesh.h_global**2
    far, far_cls = _setup(LinearLevelSet(motion=(5.0,)), n=4)
    with pytest.raises(ValueError):
        an.boundary_residual(far, IdentityMap(far.mesh), far_cls)


def test_self_comparison_is_zero(circle):
    _, cls, theta, _ = circle
    for d in an.Derivative:
        assert an.mapping_discrepancy(theta, theta, d).value == 0.0


def test_discrepancy_is_second_order_small(circle):
    b, cls, theta, ideal = circle
    v = an.mapping_discrepancy(theta, ideal).value
    assert 0 < v < b.mesh.h_global**2


def test_jacobian_equivalence_identity():
    b, cls = _setup(LinearLevelSet(normal=(1.0, 0.0), motion=(0.2, 0.3)), n=8)
    theta = build_theta(b, cls)
    ratio, dev = an.jacobian_equivalence(theta, 0.03)
    assert ratio == pytest.approx(1.0, abs=1e-13) and dev < 1e-13
    m, min_det = an.jacobian_deviation(theta)
    assert m.value < 1e-12 and min_det == pytest.approx(1.0)


def test_jacobian_ratio_matches_deformed_area(circle):
    b, cls, theta, _ = circle
    t = 0.025
    ratio, _ = an.jacobian_equivalence(theta, t)
    rule = spatial_cut_rules(b, cls.neg_elements, t, 6, "NEG")
    lin_area = rule.w.sum()
    assert ratio * lin_area == pytest.approx(an.deformed_area(theta, t), rel=1e-10)
    # the mapped area approaches the exact disc area
    assert an.deformed_area(theta, t) == pytest.approx(np.pi * 0.25, abs=1e-4)


def test_composition_of_ideal_with_itself(circle):
    _, _, theta, ideal = circle
    m, res = an.composition_discrepancy(theta, theta)
    assert m.value < 1e-11 and res < 1e-11
    m, _ = an.composition_discrepancy(theta, ideal)
    assert m.value > 0


def test_normal_error_translating_line():
    b, cls = _setup(LinearLevelSet(normal=(1.0, 0.0), motion=(0.1, 0.5)), n=8)
    theta = build_theta(b, cls)
    ideal = IdealMapEvaluator(b, cls)
    assert an.normal_error(theta, ideal).value < 1e-12


def test_normal_error_circle_small(circle):
    b, _, theta, ideal = circle
    assert an.normal_error(theta, ideal).value < 2 * b.mesh.h_global**2


# interpolation ---------------------------------------------------------------------
def test_analytic_function_derivatives():
    x0, x1, t = sp.symbols("x0 x1 t")
    u = an.AnalyticFunction(x0**2 * x1 + sp.sin(t))
    x = np.array([[1.0, 2.0], [0.5, -1.0]])
    np.testing.assert_allclose(u(x, 0.3), x[:, 0] ** 2 * x[:, 1] + np.sin(0.3))
    np.testing.assert_allclose(u.grad(x, 0.3), np.stack([2 * x[:, 0] * x[:, 1], x[:, 0] ** 2], 1))
    np.testing.assert_allclose(u.dt(x, 0.3), np.cos(0.3))


@pytest.mark.parametrize("norm", list(an.Norm))
def test_interpolation_exact_for_polynomials(norm):
    # the ideal map is the identity for a line, so u_hat = u is reproduced
    b, cls = _setup(LinearLevelSet(normal=(1.0, 0.5), motion=(0.1, 0.3)), n=8)
    x0, x1, t = sp.symbols("x0 x1 t")
    u = an.AnalyticFunction((x0**2 - x0 * x1 + 1) * (1 + t + 2 * t**2))
    m = an.interpolation_error(b, IdealMapEvaluator(b, cls), u, 2, 2, norm)
    assert m.value < 1e-12


def test_interpolation_error_circle_positive(circle):
    b, _, _, ideal = circle
    m = an.interpolation_error(b, ideal, an.radial_test_function(((0.0, 0.0), (0.3, 0.0))), 2, 2)
    assert 0 < m.value < 1e-2
