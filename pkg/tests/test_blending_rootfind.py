import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from stiso.blending import BlendingConfig, BlendingKind, blending_value, smoothstep
from stiso.cut import classify
from stiso.levelset import MovingCircle, build_bundle
from stiso.mesh import TimeSlab, build_structured_mesh
from stiso.rootfind import BracketFailure, DistanceSolveResult, solve_rays


# smoothstep -----------------------------------------------------------------
@pytest.mark.parametrize("s", [1, 2, 3, 4, 6])
def test_smoothstep_derivatives_vanish(s):
    x = sp.Symbol("x")
    poly = sp.expand(x ** (s + 1) * sum(sp.binomial(s + k, k) * (1 - x) ** k for k in range(s + 1)))
    assert poly.subs(x, 0) == 0 and poly.subs(x, 1) == 1
    for r in range(1, s + 1):
        d = sp.diff(poly, x, r)
        assert d.subs(x, 0) == 0 and d.subs(x, 1) == 0
    xs = np.linspace(0, 1, 11)
    np.testing.assert_allclose(smoothstep(xs, s), [float(poly.subs(x, v)) for v in xs], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.lists(st.floats(-3, 3), min_size=2, max_size=30))
def test_smoothstep_monotone_and_clamped(s, xs):
    xs = np.sort(np.array(xs))
    v = smoothstep(xs, s)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(np.diff(v) >= -1e-15)


# blending values --------------------------------------------------------------
@pytest.fixture(scope="module")
def circle_setup():
    b = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], 32), TimeSlab(0.0, 0.05), 2, 2)
    cls = classify(b, BlendingConfig(BlendingKind.SMOOTH, width=0.1))
    return b, cls


def test_fe_blending_is_zero(circle_setup):
    b, _ = circle_setup
    x = np.random.default_rng(0).uniform(-1, 1, (100, 2))
    assert np.all(blending_value(BlendingConfig(BlendingKind.FE), b, x, 0.01) == 0)


def test_resolved_parameters(circle_setup):
    b, cls = circle_setup
    bl = cls.blending
    assert bl.order == 4
    assert bl.delta0 > 0


def test_zero_on_interface_and_one_far_away(circle_setup):
    b, cls = circle_setup
    bl = cls.blending
    t = 0.03
    ang = np.linspace(0, 2 * np.pi, 50)
    ring = b.levelset.c(t) + 0.5 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    assert np.all(bl.value(b.levelset, ring, t) == 0)
    far = b.levelset.c(t) + (0.5 + bl.width + bl.delta0 + 1e-9) * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    assert np.all(bl.value(b.levelset, far, t) == 1)


def test_range_and_zero_on_cut_elements(circle_setup):
    b, cls = circle_setup
    bl = cls.blending
    rng = np.random.default_rng(1)
    v = bl.value(b.levelset, rng.uniform(-1, 1, (10_000, 2)), rng.uniform(0, 0.05, 10_000))
    assert np.all((v >= 0) & (v <= 1))
    e = np.repeat(cls.cut_elements, 20)
    lam = rng.dirichlet(np.ones(3), len(e))
    x = np.einsum("ma,mad->md", lam, b.mesh.vertices[b.mesh.elements[e]])
    assert np.all(bl.value(b.levelset, x, rng.uniform(0, 0.05, len(e))) == 0)


def test_invalid_configs(circle_setup):
    b, cls = circle_setup
    with pytest.raises(ValueError):
        BlendingConfig(BlendingKind.SMOOTH, width=0.0)
    with pytest.raises(ValueError):
        BlendingConfig(BlendingKind.SMOOTH, width=0.1, order=2).resolved(b, cls.cut_elements)
    with pytest.raises(ValueError):
        BlendingConfig(BlendingKind.SMOOTH, width=0.5).resolved(b, cls.cut_elements)
    with pytest.raises(ValueError):
        BlendingConfig(BlendingKind.SMOOTH).value(b.levelset, np.zeros((1, 2)), 0.0)


# root finder ------------------------------------------------------------------
def _poly_rays(coeffs):
    """g_m(alpha) = sum_k coeffs[m, k] alpha^k with derivative."""
    c = np.asarray(coeffs, dtype=float)

    def g(alpha, idx):
        cc = c[idx]
        k = np.arange(c.shape[1])
        val = np.sum(cc * alpha[:, None] ** k, axis=1)
        der = np.sum(cc[:, 1:] * k[1:] * alpha[:, None] ** (k[1:] - 1), axis=1)
        return val, der
    return g


def test_linear_rays_exact():
    c = np.array([[0.3, 1.0], [-0.2, 2.0], [0.0, 1.0]])
    r = solve_rays(_poly_rays(c), 1.0, n_points=3)
    np.testing.assert_allclose(r.d, [-0.3, 0.1, 0.0], atol=1e-15)
    assert r.iterations[2] == 0
    assert np.all(r.residual < 1e-12)


def test_smallest_root_chosen():
    # roots at -0.2 and 0.5: the smaller magnitude one is returned
    c = np.array([[-0.1, -0.3, 1.0]])
    r = solve_rays(_poly_rays(c), np.ones(1))
    assert r.d[0] == pytest.approx(-0.2, abs=1e-13)
    with pytest.raises(ValueError):
        solve_rays(_poly_rays(c), 1.0)


def test_bracket_doubling_and_failure():
    r = solve_rays(_poly_rays([[-1.5, 1.0]]), np.ones(1))
    assert r.d[0] == pytest.approx(1.5) and r.bracket[0] == 2.0
    with pytest.raises(BracketFailure) as exc:
        solve_rays(_poly_rays([[0.0, 1.0, 0.0], [-5.0, 1.0, 0.0], [1.0, 0.0, 1.0]]), np.ones(3))
    assert sorted(exc.value.indices.tolist()) == [1, 2]


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.2, 5), st.floats(-2, 2))
def test_root_residual_and_bracket(root, slope, curv):
    # g(alpha) = slope (alpha - root) + curv (alpha - root)^2, monotone near root
    def g(alpha, idx):
        a = alpha - root
        return slope * a + 0.1 * curv * a**2, slope + 0.2 * curv * a

    r = solve_rays(g, np.ones(1), tol=1e-12)
    assert abs(g(r.d, None)[0][0]) < 1e-12
    assert abs(r.d[0]) <= 2.0


def test_csv_dump(tmp_path):
    r = DistanceSolveResult(np.array([0.1, 0.2]), np.array([1, 2]), np.array([1e-14, 0.0]), np.array([1.0, 1.0]))
    r.to_csv(tmp_path / "d.csv", np.zeros((2, 2)), 0.5)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x0,x1,t,d,iterations,residual" and len(lines) == 3
