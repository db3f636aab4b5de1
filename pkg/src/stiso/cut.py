"""Cut-element classification and quadrature on ``{phi_lin < 0}``.

The linear-in-space level set ``phi_lin`` makes every cut element a simple
polytope at each fixed time. Its negative part is split into simplices which
carry mapped Gauss rules, so all weights stay positive. Space-time rules are
iterated: Gauss points in time outside, the spatial cut rule inside.

Vertex values equal to zero count as positive throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from math import comb

import numpy as np

from .blending import BlendingConfig
from .quadrature import gauss_interval, lattice_points, map_rule_to_simplex, n_points_for_order, simplex_rule


class Status(IntEnum):
    NEG = -1
    CUT = 0
    POS = 1


# --------------------------------------------------------------------------
# Bernstein bounds of the vertex polynomials t -> phi_lin(v, t)
# --------------------------------------------------------------------------
@lru_cache(maxsize=None)
def _bernstein_maps(q: int):
    """Matrices taking nodal values at the Lobatto nodes to Bernstein
    coefficients on [0, 1/2] and [1/2, 1] (local time)."""
    from .fe import lobatto_unit_nodes

    nodes = lobatto_unit_nodes(q)
    to_mono = np.linalg.inv(nodes[:, None] ** np.arange(q + 1))  # a = to_mono @ values
    mono_to_bern = np.zeros((q + 1, q + 1))
    for k in range(q + 1):
        for j in range(k + 1):
            mono_to_bern[k, j] = comb(k, j) / comb(q, j) if q else 1.0
    out = []
    for a, b in ((0.0, 0.5), (0.5, 1.0)):
        # monomial coefficients of p(a + (b - a) u) from those of p(s)
        shift = np.zeros((q + 1, q + 1))
        for j in range(q + 1):
            for m in range(j + 1):
                shift[m, j] = comb(j, m) * a ** (j - m) * (b - a) ** m
        out.append(mono_to_bern @ shift @ to_mono)
    return out


def bernstein_bounds(vertex_values):
    """Lower/upper bounds of each vertex polynomial on the two slab halves.

    ``vertex_values`` has shape ``(q + 1, ...)`` (nodal values in time).
    Returns ``(lo, hi)`` with shape ``(2, ...)``.
    """
    vv = np.asarray(vertex_values, dtype=float)
    q = vv.shape[0] - 1
    los, his = [], []
    for M in _bernstein_maps(q):
        bern = np.tensordot(M, vv, axes=(1, 0))
        los.append(bern.min(axis=0))
        his.append(bern.max(axis=0))
    return np.stack(los), np.stack(his)


@dataclass(frozen=True)
class CutClassification:
    status: np.ndarray  # Status per element
    cut_elements: np.ndarray  # T_hb1
    plus_layer: np.ndarray  # T_hb1+ minus T_hb1
    blending: BlendingConfig
    active_elements: np.ndarray  # T_hb1 (FE) or T_hb2 (SMOOTH)
    neighbourhood_elements: np.ndarray  # sampled T_hU
    neg_elements: np.ndarray = field(repr=False, default=None)  # E(Q_lin)

    @property
    def hb1_plus(self):
        return np.union1d(self.cut_elements, self.plus_layer)

    def status_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("element,status\n")
            for e, s in enumerate(self.status):
                fh.write(f"{e},{Status(s).name}\n")


def classify(bundle, blending: BlendingConfig | None = None) -> CutClassification:
    """Classify the elements of ``bundle.mesh`` over ``bundle.slab``.

    An element is CUT when, on one half of the slab, the smallest Bernstein
    coefficient of its vertex polynomials is negative while the largest is
    non-negative. Otherwise it is NEG or POS.
    """
    mesh = bundle.mesh
    blending = BlendingConfig() if blending is None else blending
    vv = bundle.vertex_values[:, mesh.elements]  # (nt, ne, d+1)
    lo, hi = bernstein_bounds(vv)  # (2, ne, d+1)
    has_neg = lo.min(axis=-1) < 0.0  # (2, ne)
    has_pos = hi.max(axis=-1) >= 0.0
    cut = np.any(has_neg & has_pos, axis=0)
    neg = ~cut & np.any(has_neg, axis=0)
    status = np.where(cut, Status.CUT, np.where(neg, Status.NEG, Status.POS)).astype(np.int8)
    cut_elements = np.flatnonzero(cut)

    touched = np.zeros(mesh.n_vertices, dtype=bool)
    touched[mesh.elements[cut_elements].ravel()] = True
    near = np.any(touched[mesh.elements], axis=1)
    plus_layer = np.flatnonzero(near & ~cut)

    blending = blending.resolved(bundle, cut_elements)
    if blending.is_fe:
        active = cut_elements
    else:
        active = _smooth_active_set(bundle, blending, cut_elements)
    hu = _neighbourhood_set(bundle)
    return CutClassification(status, cut_elements, plus_layer, blending, active, hu,
                             np.flatnonzero(status != Status.POS))


def _sample_extrema(bundle, n_space=4, n_time=5, reduce=np.minimum):
    """Per-element min (or max) of |phi| on a space-time lattice."""
    mesh = bundle.mesh
    xi = lattice_points(mesh.dim, n_space)
    ne = mesh.n_elements
    X = mesh.to_physical(np.repeat(np.arange(ne), len(xi)), np.tile(xi, (ne, 1)))
    ts = np.linspace(bundle.slab.t_begin, bundle.slab.t_end, n_time)
    m = np.full(ne, np.inf if reduce is np.minimum else -np.inf)
    pick = np.min if reduce is np.minimum else np.max
    for t in ts:
        m = reduce(m, pick(np.abs(bundle.levelset.phi(X, t)).reshape(ne, -1), axis=1))
    return m


def _smooth_active_set(bundle, blending, cut_elements):
    """Elements where ``b < 1`` somewhere, detected conservatively."""
    ls = bundle.levelset
    n_space, n_time = 4, 5
    m = _sample_extrema(bundle, n_space, n_time)
    # Lipschitz margin: distance from any point of T x I_n to the nearest sample
    dt = bundle.slab.dt / (n_time - 1)
    vmax = _max_speed(bundle)
    margin = ls.C_grad * bundle.mesh.h_per_element / n_space + vmax * dt
    threshold = blending.delta0 + ls.c_grad * blending.width
    active = (m - margin) < threshold
    active[cut_elements] = True
    return np.flatnonzero(active)


def _max_speed(bundle):
    """Rough bound of |dt phi| from vertex samples (with a safety factor)."""
    X = bundle.mesh.vertices
    ts = np.linspace(bundle.slab.t_begin, bundle.slab.t_end, 5)
    return 2.0 * float(max(np.nanmax(np.abs(bundle.levelset.dt(X, t))) for t in ts))


def _neighbourhood_set(bundle):
    """Elements whose sampled points all lie in ``U`` (``|phi| < c delta_U``)."""
    ls = bundle.levelset
    m = _sample_extrema(bundle, 2, 3, reduce=np.maximum)
    return np.flatnonzero(m < ls.c_grad * ls.delta_U)


# --------------------------------------------------------------------------
# decomposition of a simplex by a linear level set
# --------------------------------------------------------------------------
def _crossing(pa, pb, va, vb):
    s = va / (va - vb)
    return pa + s * (pb - pa)


def decompose_cut_simplex(vertex_values, simplex, min_rel_area: float = 1e-14):
    """Split a simplex by the zero set of its linear interpolant.

    Parameters
    ----------
    vertex_values : (d+1,) values of the linear function at the corners.
    simplex : (d+1, d) corner coordinates.

    Returns
    -------
    neg, pos : lists of ``(d+1, d)`` sub-simplices of ``{f < 0}`` and ``{f >= 0}``.
    interface : ``(d, d)`` array of corners of the zero set piece.
    """
    v = np.asarray(vertex_values, dtype=float)
    P = np.asarray(simplex, dtype=float)
    d = P.shape[1]
    isneg = v < 0.0
    n_neg = int(isneg.sum())
    if n_neg == 0 or n_neg == d + 1:
        raise ValueError("decompose_cut_simplex called on an uncut simplex")
    if d == 1:
        (a,), (b,) = np.flatnonzero(isneg), np.flatnonzero(~isneg)
        x0 = _crossing(P[a], P[b], v[a], v[b])
        neg, pos = [np.array([P[a], x0])], [np.array([x0, P[b]])]
        return _prune(neg, P, min_rel_area), _prune(pos, P, min_rel_area), x0[None, :]
    lone_is_neg = n_neg == 1
    lone = int(np.flatnonzero(isneg if lone_is_neg else ~isneg)[0])
    o1, o2 = [i for i in range(3) if i != lone]
    c1 = _crossing(P[lone], P[o1], v[lone], v[o1])
    c2 = _crossing(P[lone], P[o2], v[lone], v[o2])
    tri = [np.array([P[lone], c1, c2])]
    # quadrilateral o1, o2, c2, c1 split along its shorter diagonal
    if np.linalg.norm(P[o1] - c2) <= np.linalg.norm(P[o2] - c1):
        quad = [np.array([P[o1], P[o2], c2]), np.array([P[o1], c2, c1])]
    else:
        quad = [np.array([P[o1], P[o2], c1]), np.array([P[o2], c2, c1])]
    neg, pos = (tri, quad) if lone_is_neg else (quad, tri)
    return _prune(neg, P, min_rel_area), _prune(pos, P, min_rel_area), np.array([c1, c2])


def _measure(S):
    J = (S[1:] - S[0]).T
    return abs(np.linalg.det(J)) / (1.0 if J.shape[0] == 1 else 2.0)


def _prune(simplices, P, rel):
    ref = _measure(P)
    return [S for S in simplices if _measure(S) > rel * ref]


# --------------------------------------------------------------------------
# quadrature rules
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class CutQuadRule:
    """Quadrature points in space-time with the element they belong to.

    For interface rules ``conormal`` holds the spatial unit normal of the
    linear interface pointing out of ``{phi_lin < 0}``.
    """

    x: np.ndarray
    t: np.ndarray
    w: np.ndarray
    elems: np.ndarray
    side: str = "NEG"
    conormal: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(self.w.sum())

    @staticmethod
    def concat(rules, side):
        rules = [r for r in rules if len(r.w)]
        if not rules:
            return CutQuadRule(np.zeros((0, 1)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), side)
        cn = None if rules[0].conormal is None else np.concatenate([r.conormal for r in rules])
        return CutQuadRule(np.concatenate([r.x for r in rules]), np.concatenate([r.t for r in rules]),
                           np.concatenate([r.w for r in rules]), np.concatenate([r.elems for r in rules]),
                           side, cn)


def _vertex_values_at(bundle, elems, t):
    L = bundle.tbasis(np.asarray(t, dtype=float))
    return np.einsum("i,iea->ea", L, bundle.vertex_values[:, bundle.mesh.elements[np.asarray(elems)]])


def spatial_cut_quadrature(bundle, elem: int, t: float, order: int, side: str = "NEG") -> CutQuadRule:
    """Rule for ``T ∩ {phi_lin(., t) < 0}`` (``side='NEG'``), its complement
    (``'POS'``) or the interface piece (``'INTERFACE'``)."""
    return spatial_cut_rules(bundle, np.array([elem]), t, order, side)


def spatial_cut_rules(bundle, elems, t: float, order: int, side: str = "NEG") -> CutQuadRule:
    """Vectorised over fully NEG/POS elements; cut elements are decomposed."""
    mesh = bundle.mesh
    elems = np.asarray(elems, dtype=np.int64)
    vals = _vertex_values_at(bundle, elems, t)
    nneg = np.sum(vals < 0.0, axis=1)
    full_side = (nneg == mesh.dim + 1) if side == "NEG" else (nneg == 0)
    is_cut = (nneg > 0) & (nneg < mesh.dim + 1)
    rules = []
    if side != "INTERFACE" and np.any(full_side):
        xi, w = simplex_rule(mesh.dim, order)
        fe = elems[full_side]
        X = mesh.to_physical(np.repeat(fe, len(xi)), np.tile(xi, (len(fe), 1)))
        W = (np.abs(mesh.det[fe])[:, None] * w[None, :]).ravel()
        rules.append(CutQuadRule(X, np.full(len(W), float(t)), W, np.repeat(fe, len(xi)), side))
    for e, v in zip(elems[is_cut], vals[is_cut]):
        P = mesh.vertices[mesh.elements[e]]
        neg, pos, iface = decompose_cut_simplex(v, P)
        if side == "INTERFACE":
            rules.append(_interface_rule(bundle, e, v, iface, t, order))
            continue
        for S in (neg if side == "NEG" else pos):
            X, W = map_rule_to_simplex(S, order)
            rules.append(CutQuadRule(X, np.full(len(W), float(t)), W, np.full(len(W), e), side))
    return CutQuadRule.concat(rules, side)


def _interface_rule(bundle, e, v, iface, t, order):
    mesh = bundle.mesh
    lam_grad = np.vstack([-np.ones((1, mesh.dim)), np.eye(mesh.dim)]) @ mesh.jac_inv[e]
    g = v @ lam_grad
    n = g / np.linalg.norm(g)
    if mesh.dim == 1:
        X, W = iface, np.ones(1)
    else:
        s, w = gauss_interval(n_points_for_order(order))
        a, b = iface
        X = a + s[:, None] * (b - a)
        W = w * np.linalg.norm(b - a)
    return CutQuadRule(X, np.full(len(W), float(t)), W, np.full(len(W), e), "INTERFACE",
                       np.broadcast_to(n, X.shape).copy())


def time_points(slab, order_t: int):
    """Outer Gauss rule of the iterated space-time quadrature."""
    n = ceil_half(order_t + 1) + 1
    return gauss_interval(n, slab.t_begin, slab.t_end)


def ceil_half(k: int) -> int:
    return -(-k // 2)


def spacetime_quadrature(bundle, elem, orders, side: str = "NEG") -> CutQuadRule:
    """Iterated rule on ``(T x I_n) ∩ Q_lin``; ``orders = (space, time)``."""
    return spacetime_rules(bundle, np.atleast_1d(elem), orders, side)


def spacetime_rules(bundle, elems, orders, side: str = "NEG") -> CutQuadRule:
    order_s, order_t = orders
    ts, wt = time_points(bundle.slab, order_t)
    rules = []
    for t, w in zip(ts, wt):
        r = spatial_cut_rules(bundle, elems, t, order_s, side)
        rules.append(CutQuadRule(r.x, r.t, r.w * w, r.elems, side, r.conormal))
    return CutQuadRule.concat(rules, side)
