import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import half_plane_clip, polygon_moment, random_cut_triangle

from stiso.analysis import eoc
from stiso.blending import BlendingConfig, BlendingKind
from stiso.cut import (Status, bernstein_bounds, classify, decompose_cut_simplex, spacetime_quadrature,
                       spacetime_rules, spatial_cut_quadrature, spatial_cut_rules, time_points)
from stiso.levelset import LinearLevelSet, MovingCircle, build_bundle
from stiso.mesh import Mesh, TimeSlab, build_structured_mesh
from stiso.quadrature import gauss_interval, lattice_points, map_rule_to_simplex, simplex_rule

FE = BlendingConfig(BlendingKind.FE)
UNIT = [[0, 1], [0, 1]]
RIGHT = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _area(S):
    e1, e2 = S[1] - S[0], S[2] - S[0]
    return 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])


def _single_triangle_bundle(P, normal, offset):
    mesh = Mesh(P, [[0, 1, 2]], shape_bound=np.inf)
    return build_bundle(LinearLevelSet(normal=normal, motion=(offset,)), mesh, TimeSlab(0.0, 1.0), 1, 0)


# reference rules ------------------------------------------------------------
@pytest.mark.parametrize("order", range(0, 9))
def test_simplex_rule_exact_and_positive(order):
    xi, w = simplex_rule(2, order)
    assert np.all(w > 0)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            exact = float(sp.factorial(a) * sp.factorial(b) / sp.factorial(a + b + 2))
            assert abs(w @ (xi[:, 0] ** a * xi[:, 1] ** b) - exact) < 1e-15


def test_interval_rules():
    x, w = simplex_rule(1, 5)
    for p in range(6):
        assert w @ x[:, 0] ** p == pytest.approx(1 / (p + 1), abs=1e-15)
    x, w = gauss_interval(3, 1.0, 3.0)
    assert w.sum() == pytest.approx(2.0)


def test_lattice_points():
    assert len(lattice_points(2, 4)) == 15
    assert len(lattice_points(1, 3)) == 4


# decomposition --------------------------------------------------------------
def test_decompose_one_negative():
    neg, pos, iface = decompose_cut_simplex([-1, 1, 1], RIGHT)
    assert sum(_area(S) for S in neg) == pytest.approx(1 / 8, abs=1e-15)
    assert sum(_area(S) for S in pos) == pytest.approx(3 / 8, abs=1e-15)
    np.testing.assert_allclose(sorted(map(tuple, iface)), [(0, 0.5), (0.5, 0)])


def test_decompose_two_negative():
    neg, pos, _ = decompose_cut_simplex([-1, -1, 1], RIGHT)
    assert len(neg) == 2
    assert sum(_area(S) for S in neg) == pytest.approx(3 / 8, abs=1e-15)


def test_decompose_zero_vertex_is_positive():
    neg, pos, _ = decompose_cut_simplex([-1, 1, 0], RIGHT)
    assert len(neg) == 1
    assert any(np.allclose(v, RIGHT[2]) for v in neg[0])
    assert _area(neg[0]) == pytest.approx(0.25)
    # the degenerate quadrilateral piece is pruned
    assert all(_area(S) > 1e-14 * 0.5 for S in pos)


def test_decompose_uncut_raises():
    with pytest.raises(ValueError):
        decompose_cut_simplex([1, 2, 0], RIGHT)


def test_decompose_interval():
    neg, pos, x0 = decompose_cut_simplex([-1, 3], np.array([[0.0], [1.0]]))
    assert x0[0, 0] == pytest.approx(0.25)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decomposition_against_shapely(seed):
    rng = np.random.default_rng(seed)
    P, n, c = random_cut_triangle(rng)
    v = P @ n - c
    neg, pos, _ = decompose_cut_simplex(v, P)
    ref_neg = half_plane_clip(P, n, c, negative=True).area
    assert sum(_area(S) for S in neg) == pytest.approx(ref_neg, abs=1e-13)
    assert sum(_area(S) for S in neg) + sum(_area(S) for S in pos) == pytest.approx(_area(P), abs=1e-13)
    # pieces do not overlap: pairwise intersections have zero area
    from shapely.geometry import Polygon
    polys = [Polygon(S) for S in neg + pos]
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            assert polys[i].intersection(polys[j]).area < 1e-13


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_cut_rule_exactness_against_green(seed, order):
    rng = np.random.default_rng(seed)
    P, n, c = random_cut_triangle(rng)
    b = _single_triangle_bundle(P, n, c)
    for side, negative in (("NEG", True), ("POS", False)):
        r = spatial_cut_quadrature(b, 0, 0.5, order, side)
        assert np.all(r.w > 0)
        poly = half_plane_clip(P, n, c, negative=negative)
        for a in range(order + 1):
            for bb in range(order + 1 - a):
                got = r.w @ (r.x[:, 0] ** a * r.x[:, 1] ** bb)
                assert abs(got - polygon_moment(poly, a, bb)) < 1e-12


# spatial rules on meshes ----------------------------------------------------
def _line_bundle(motion=(0.5,), n=4, slab=TimeSlab(0.0, 0.1), q_t=1, normal=(1.0, 0.0), box=UNIT):
    ls = LinearLevelSet(normal=normal, motion=motion)
    return build_bundle(ls, build_structured_mesh(box, n), slab, 1, q_t)


def test_half_square_area():
    b = _line_bundle()
    r = spatial_cut_rules(b, np.arange(b.mesh.n_elements), 0.0, 2, "NEG")
    assert r.total == pytest.approx(0.5, abs=1e-12)


def test_xy_moment_on_cut_triangle():
    # triangle (0,0),(1,0),(0,1) cut by x + y < 0.7 ... through normal (1, 1)
    b = _single_triangle_bundle(RIGHT, (1.0, 1.0), 0.7)
    x, y = sp.symbols("x y")
    exact = float(sp.integrate(sp.integrate(x * y, (y, 0, sp.Rational(7, 10) - x)), (x, 0, sp.Rational(7, 10))))
    r = spatial_cut_quadrature(b, 0, 0.0, 2)
    assert r.w @ (r.x[:, 0] * r.x[:, 1]) == pytest.approx(exact, abs=1e-12)


def test_interface_rule_length_and_conormal():
    b = _single_triangle_bundle(RIGHT, (1.0, 1.0), 0.7)
    r = spatial_cut_quadrature(b, 0, 0.0, 3, "INTERFACE")
    assert r.total == pytest.approx(0.7 * np.sqrt(2), abs=1e-14)
    np.testing.assert_allclose(r.conormal, np.full_like(r.conormal, 1 / np.sqrt(2)), atol=1e-14)
    np.testing.assert_allclose(r.x.sum(axis=1), 0.7, atol=1e-14)


# classification -------------------------------------------------------------
def test_stationary_line_column_is_cut():
    b = _line_bundle()
    cls = classify(b, FE)
    vals = b.vertex_values[0][b.mesh.elements]
    expected = np.flatnonzero((vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0))
    np.testing.assert_array_equal(cls.cut_elements, expected)
    xs = b.mesh.vertices[b.mesh.elements[cls.cut_elements]][..., 0]
    assert np.all(xs.min(axis=1) == 0.25) and np.all(xs.max(axis=1) == 0.5)
    assert len(cls.cut_elements) == 8


def test_everything_negative():
    b = _line_bundle(motion=(1.0,), normal=(0.0, 0.0))
    cls = classify(b, FE)
    assert len(cls.cut_elements) == 0
    assert np.all(cls.status == Status.NEG)


@pytest.mark.parametrize("q_t", [1, 2])
def test_swept_elements_are_cut(q_t):
    # the line moves by v dt = 0.6 > h during the slab
    slab = TimeSlab(0.0, 0.6)
    b = _line_bundle(motion=(0.2, 1.0), n=8, slab=slab, q_t=q_t)
    cls = classify(b, FE)
    vv = b.mesh.vertices[b.mesh.elements][..., 0]
    swept = set()
    for t in np.linspace(0, 0.6, 100):
        vals = vv - (0.2 + t)
        swept |= set(np.flatnonzero((vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)))
    assert swept == set(cls.cut_elements.tolist())
    ends = set()
    for t in (0.0, 0.6):
        vals = vv - (0.2 + t)
        ends |= set(np.flatnonzero((vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)))
    assert len(swept - ends) > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_bernstein_bounds_enclose(q, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(q + 1, 7))
    lo, hi = bernstein_bounds(vals)
    from stiso.fe import TemporalBasis
    tb = TemporalBasis(TimeSlab(0.0, 1.0), q)
    for half, (a, bnd) in enumerate(((0.0, 0.5), (0.5, 1.0))):
        p = tb(np.linspace(a, bnd, 200)) @ vals
        assert np.all(p >= lo[half] - 1e-12) and np.all(p <= hi[half] + 1e-12)


def test_circle_refinement_monotone():
    slab = TimeSlab(0.0, 0.05)
    coarse = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], 8), slab, 2, 1)
    fine = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], 16), slab, 2, 1)
    cc, cf = classify(coarse, FE), classify(fine, FE)
    # fine elements whose exact vertex values change sign at a temporal node are cut
    ls = fine.levelset
    for t in fine.tbasis.nodes:
        v = ls.phi(fine.mesh.vertices, t)[fine.mesh.elements]
        crossing = np.flatnonzero((v.min(axis=1) < 0) & (v.max(axis=1) >= 0))
        assert set(crossing) <= set(cf.cut_elements)
        # and their coarse parents are cut as well
        parents, _ = coarse.mesh.locate_points(fine.mesh.centroids()[crossing])
        assert set(parents) <= set(cc.cut_elements)


def test_active_sets_nested():
    # at n = 64 the blending band delta0 + w_b fits inside U (admissible regime)
    slab = TimeSlab(0.0, 0.05)
    b = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], 64), slab, 2, 2)
    cls = classify(b, BlendingConfig(BlendingKind.SMOOTH, width=0.1))
    assert set(cls.cut_elements) <= set(cls.active_elements) <= set(cls.neighbourhood_elements)
    assert set(cls.plus_layer).isdisjoint(cls.cut_elements)


def test_status_csv(tmp_path):
    b = _line_bundle()
    cls = classify(b, FE)
    cls.status_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "element,status" and len(lines) == b.mesh.n_elements + 1
    assert "CUT" in (tmp_path / "s.csv").read_text()


# space-time rules -----------------------------------------------------------
def test_time_points():
    ts, w = time_points(TimeSlab(0.0, 0.3), 3)
    assert len(ts) == 3 and w.sum() == pytest.approx(0.3)


def test_stationary_spacetime_separable():
    slab = TimeSlab(0.1, 0.35)
    b = _line_bundle(motion=(0.4,), slab=slab)
    elems = np.arange(b.mesh.n_elements)
    st_rule = spacetime_rules(b, elems, (2, 2), "NEG")
    fixed = spatial_cut_rules(b, elems, 0.2, 2, "NEG")
    assert st_rule.total == pytest.approx(slab.dt * fixed.total, abs=1e-12)
    assert st_rule.total == pytest.approx(slab.dt * 0.4, abs=1e-12)


def test_translating_line_prism_volume():
    # x < 0.3 + 0.2 t on [0, 1]^2, slab [0, 0.5]: the line stays inside one
    # column of cells, so the cut area is linear in t and the rule exact
    slab = TimeSlab(0.0, 0.5)
    b = _line_bundle(motion=(0.3, 0.2), n=4, slab=slab)
    elems = np.arange(b.mesh.n_elements)
    total = spacetime_rules(b, elems, (2, 2), "NEG").total
    assert total == pytest.approx(0.3 * 0.5 + 0.2 * 0.5**2 / 2, abs=1e-12)
    # a single element swept completely during the slab: compare with the
    # time integral of its exact cut area
    b2 = _line_bundle(motion=(0.25, 0.5), n=4, slab=slab)
    e = int(np.flatnonzero(np.all(b2.mesh.vertices[b2.mesh.elements][..., 0] >= 0.25, axis=1)
                           & np.all(b2.mesh.vertices[b2.mesh.elements][..., 0] <= 0.5, axis=1))[0])
    P = b2.mesh.vertices[b2.mesh.elements[e]]
    from scipy.integrate import quad
    exact = quad(lambda t: half_plane_clip(P, (1.0, 0.0), 0.25 + 0.5 * t).area, 0, 0.5,
                 points=[0.0, 0.5], epsabs=1e-14)[0]
    got = [spacetime_quadrature(b2, e, (2, k), "NEG").total for k in (2, 8, 20)]
    assert abs(got[-1] - exact) < abs(got[0] - exact) + 1e-15
    assert abs(got[-1] - exact) < 1e-4


def test_neg_plus_pos_is_prism_measure():
    b = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], 8), TimeSlab(0.0, 0.1), 2, 2)
    cls = classify(b, FE)
    for e in cls.cut_elements[:10]:
        neg = spacetime_quadrature(b, e, (3, 2), "NEG")
        pos = spacetime_quadrature(b, e, (3, 2), "POS")
        assert np.all(neg.w > 0) and np.all(pos.w > 0)
        assert neg.total + pos.total == pytest.approx(b.mesh.measure[e] * 0.1, abs=1e-12)


def test_circle_volume_converges():
    errs = []
    for n in (8, 16, 32, 64):
        dt = 0.4 * 8 / n
        b = build_bundle(MovingCircle(), build_structured_mesh([[-1, 1], [-1, 1]], n), TimeSlab(0.0, dt), 2, 2)
        r = spacetime_rules(b, np.arange(b.mesh.n_elements), (2, 2), "NEG")
        errs.append(abs(r.total - np.pi * 0.25 * dt) / dt)
    assert eoc(errs)[0][-1] >= 1.7


def test_map_rule_to_simplex_volume():
    X, W = map_rule_to_simplex(RIGHT * 2.0, 3)
    assert W.sum() == pytest.approx(2.0)
