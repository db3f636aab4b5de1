"""Error metrics for deformations and the bookkeeping of convergence orders.

Sup-norms are taken over sample grids (a Lagrange lattice per element times
Gauss points in time), so they slightly under-estimate the true suprema.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import sympy as sp

from .cut import spatial_cut_rules, spacetime_rules
from .mapping import IdentityMap, MapBase, invert_st, st_jacobian
from .quadrature import gauss_interval, lattice_points, simplex_rule

CHUNK = 50_000
FLOOR = 1e-12


class Derivative(str, Enum):
    VALUE = "VALUE"
    GRAD_X = "GRAD_X"
    DT = "DT"


class Norm(str, Enum):
    L2 = "L2"
    DT_L2 = "DT_L2"
    GRAD_L2 = "GRAD_L2"
    FINAL_TIME = "FINAL_TIME"


@dataclass(frozen=True)
class ErrorMetric:
    name: str
    value: float
    samples: int
    units: str = ""

    def __post_init__(self):
        if not self.value >= 0 or self.samples <= 0:
            raise ValueError(f"invalid metric {self.name}: value={self.value}, samples={self.samples}")


# --------------------------------------------------------------------------
# sampling helpers
# --------------------------------------------------------------------------
def sample_points(mesh, elems, order_s: int, n_t: int, slab):
    """Element lattice of order ``order_s`` times ``n_t`` Gauss times."""
    elems = np.asarray(elems, dtype=np.int64)
    xi = lattice_points(mesh.dim, order_s)
    ts, _ = gauss_interval(n_t, slab.t_begin, slab.t_end)
    E = np.repeat(elems, len(xi) * len(ts))
    XI = np.tile(np.repeat(xi, len(ts), axis=0), (len(elems), 1))
    T = np.tile(ts, len(elems) * len(xi))
    return E, mesh.to_physical(E, XI), T


def _chunked_max(fn, E, X, T):
    out = 0.0
    for s in range(0, len(E), CHUNK):
        sl = slice(s, s + CHUNK)
        v = fn(E[sl], X[sl], T[sl])
        if v.size:
            out = max(out, float(np.max(v)))
    return out


def deformation_support(classification):
    """Elements on which a deformation may differ from the identity."""
    if classification.blending.is_fe:
        return np.union1d(classification.cut_elements, classification.plus_layer)
    return classification.active_elements


def _derivative(m: MapBase, d: Derivative, E, X, T):
    if d is Derivative.VALUE:
        return m.value(E, X, T)
    if d is Derivative.GRAD_X:
        return m.jacobian(E, X, T)
    return m.dt(E, X, T)


def _pointwise_norm(a):
    return np.linalg.norm(a.reshape(len(a), -1), axis=1)


def mapping_discrepancy(theta: MapBase, ideal: MapBase, derivative=Derivative.VALUE, elems=None,
                        order_s: int | None = None, n_t: int | None = None) -> ErrorMetric:
    """``sup |D^m (theta - ideal)|`` over the deformation support.

    Vector and matrix differences are measured in the Euclidean/Frobenius norm.
    """
    derivative = Derivative(derivative)
    bundle = theta.bundle
    if elems is None:
        elems = deformation_support(theta.classification)
    order_s = bundle.q_s + 2 if order_s is None else order_s
    n_t = bundle.q_t + 2 if n_t is None else n_t
    E, X, T = sample_points(bundle.mesh, elems, order_s, n_t, bundle.slab)
    if len(E) == 0:
        return ErrorMetric(f"{derivative.value.lower()}_discrepancy", 0.0, 1)

    def err(e, x, t):
        return _pointwise_norm(_derivative(theta, derivative, e, x, t) - _derivative(ideal, derivative, e, x, t))

    return ErrorMetric(f"{derivative.value.lower()}_discrepancy", _chunked_max(err, E, X, T), len(E))


def identity_discrepancy(m: MapBase, classification, derivative=Derivative.VALUE, order_s=None, n_t=None):
    """``sup |D^m (map - id)|`` over the deformation support."""
    derivative = Derivative(derivative)
    ident = IdentityMap(m.mesh)
    bundle = m.bundle
    elems = deformation_support(classification)
    order_s = bundle.q_s + 2 if order_s is None else order_s
    n_t = bundle.q_t + 2 if n_t is None else n_t
    E, X, T = sample_points(bundle.mesh, elems, order_s, n_t, bundle.slab)

    def err(e, x, t):
        return _pointwise_norm(_derivative(m, derivative, e, x, t) - _derivative(ident, derivative, e, x, t))

    return ErrorMetric(f"identity_{derivative.value.lower()}", _chunked_max(err, E, X, T), max(len(E), 1))


def boundary_residual(bundle, theta: MapBase, classification, order: int | None = None) -> ErrorMetric:
    """``max |phi(Theta(x, t), t)| / c`` over interface quadrature points."""
    cut = classification.cut_elements
    if len(cut) == 0:
        raise ValueError("boundary residual needs cut elements")
    order = 2 * bundle.q_s + 2 if order is None else order
    rule = spacetime_rules(bundle, cut, (order, bundle.q_t + 2), side="INTERFACE")
    y = theta.value(rule.elems, rule.x, rule.t)
    v = np.abs(bundle.levelset.phi(y, rule.t)) / bundle.levelset.c_grad
    return ErrorMetric("boundary_residual", float(v.max()), len(v), "length")


def composition_discrepancy(theta: MapBase, ideal: MapBase, order_s=None, n_t=None, tol: float = 1e-12):
    """``sup |Phi_h^st - id|`` with ``Phi_h = Psi o Theta_h^{-1}``.

    Returns the metric and the largest inversion residual.
    """
    bundle = theta.bundle
    elems = deformation_support(theta.classification)
    order_s = bundle.q_s + 2 if order_s is None else order_s
    n_t = bundle.q_t + 2 if n_t is None else n_t
    _, Y, T = sample_points(bundle.mesh, elems, order_s, n_t, bundle.slab)
    worst, worst_res = 0.0, 0.0
    for s in range(0, len(Y), CHUNK):
        y, t = Y[s:s + CHUNK], T[s:s + CHUNK]
        x, ex = invert_st(theta, y, t, tol)
        worst_res = max(worst_res, float(np.max(np.linalg.norm(theta.value(ex, x, t) - y, axis=1))))
        worst = max(worst, float(np.max(np.linalg.norm(ideal.value(ex, x, t) - y, axis=1))))
    return ErrorMetric("composition_discrepancy", worst, max(len(Y), 1), "length"), worst_res


def jacobian_equivalence(theta: MapBase, t: float, v: Callable | None = None, order: int | None = None):
    """Ratio ``int_{Omega_lin} det(D Theta) v^2 / int_{Omega_lin} v^2`` at time ``t``.

    Returns ``(ratio, |ratio - 1|)``.
    """
    bundle = theta.bundle
    cls = theta.classification
    order = 2 * bundle.q_s + 2 if order is None else order
    rule = spatial_cut_rules(bundle, cls.neg_elements, t, order, "NEG")
    det = np.linalg.det(theta.jacobian(rule.elems, rule.x, rule.t))
    vv = np.ones(len(rule.w)) if v is None else np.asarray(v(rule.x), dtype=float) ** 2
    ratio = float(np.sum(rule.w * det * vv) / np.sum(rule.w * vv))
    return ratio, abs(ratio - 1.0)


def jacobian_deviation(theta: MapBase, order_s=None, n_t=None) -> ErrorMetric:
    """``sup |det(D Theta) - 1|`` over the deformation support; also flags
    non-positive determinants through ``min_det``."""
    bundle = theta.bundle
    elems = deformation_support(theta.classification)
    order_s = bundle.q_s + 2 if order_s is None else order_s
    n_t = bundle.q_t + 2 if n_t is None else n_t
    E, X, T = sample_points(bundle.mesh, elems, order_s, n_t, bundle.slab)
    dets = np.concatenate([np.linalg.det(theta.jacobian(E[s:s + CHUNK], X[s:s + CHUNK], T[s:s + CHUNK]))
                           for s in range(0, len(E), CHUNK)]) if len(E) else np.ones(1)
    m = ErrorMetric("jacobian_deviation", float(np.max(np.abs(dets - 1.0))), len(dets))
    return m, float(dets.min())


def deformed_area(theta: MapBase, t: float, order: int = 8) -> float:
    """Area of ``Theta(Omega_lin(t))`` from Green's theorem on the mapped
    boundary (interface pieces plus the mapped outer edges of the NEG region)."""
    bundle = theta.bundle
    mesh = bundle.mesh
    if mesh.dim != 2:
        raise ValueError("deformed_area needs d = 2")
    from .cut import _vertex_values_at, decompose_cut_simplex

    s, w = gauss_interval(max(order, 2))
    cls = theta.classification
    elems = cls.neg_elements
    vals = _vertex_values_at(bundle, elems, t)
    area = 0.0
    for e, v in zip(elems, vals):
        P = mesh.vertices[mesh.elements[e]]
        if np.all(v < 0):
            polys = [P]
        elif np.any(v < 0):
            polys = decompose_cut_simplex(v, P)[0]
        else:
            continue
        for S in polys:
            # oriented boundary of each sub-triangle; interior edges cancel
            e1, e2 = S[1] - S[0], S[2] - S[0]
            sign = np.sign(e1[0] * e2[1] - e1[1] * e2[0])
            for a, b in ((0, 1), (1, 2), (2, 0)):
                pts = S[a] + s[:, None] * (S[b] - S[a])
                ee = np.full(len(pts), e)
                y = theta.value(ee, pts, t)
                J = theta.jacobian(ee, pts, t)
                dy = J @ (S[b] - S[a])
                area += sign * 0.5 * np.sum(w * (y[:, 0] * dy[:, 1] - y[:, 1] * dy[:, 0]))
    return float(area)


# --------------------------------------------------------------------------
# space-time normals
# --------------------------------------------------------------------------
def normal_error(theta: MapBase, ideal: MapBase, inverse_tol: float = 1e-12, order: int | None = None):
    """Largest difference between discrete and exact space-time normals on
    the lateral boundary (d = 2 only).

    At an interface point ``p`` of ``Q_lin`` the tangents ``(tau, 0)`` and
    ``(w, 1)`` with ``w = -dt phi_lin grad phi_lin / |grad phi_lin|^2`` are
    pushed forward by ``D Theta^st``. The exact normal is taken at
    ``Psi^st(p)``, which equals ``Phi_h^st(Theta_h^st(p))``.
    """
    bundle = theta.bundle
    mesh = bundle.mesh
    if mesh.dim != 2:
        raise ValueError("normal_error needs d = 2")
    cls = theta.classification
    order = 2 * bundle.q_s + 2 if order is None else order
    rule = spacetime_rules(bundle, cls.cut_elements, (order, bundle.q_t + 2), side="INTERFACE")
    E, X, T = rule.elems, rule.x, rule.t
    g = bundle.grad_phi_lin_local(E, T)
    gt = bundle.phi_lin_local(E, X, T, deriv=1)
    gn2 = np.einsum("md,md->m", g, g)
    if np.any(gn2 < (1e-14 * mesh.h_global) ** 2):
        raise ValueError("degenerate interface tangents")
    tau = np.stack([-g[:, 1], g[:, 0]], axis=1)
    tau1 = np.concatenate([tau, np.zeros((len(T), 1))], axis=1)
    tau2 = np.concatenate([-(gt / gn2)[:, None] * g, np.ones((len(T), 1))], axis=1)
    J = st_jacobian(theta, X, T, elems=E)
    a = np.einsum("mij,mj->mi", J, tau1)
    b = np.einsum("mij,mj->mi", J, tau2)
    n_h = np.cross(a, b)
    n_ref = np.concatenate([g, gt[:, None]], axis=1)
    # push the reference normal forward with the cofactor to fix the orientation
    orient = np.einsum("mi,mi->m", n_h, np.linalg.solve(np.transpose(J, (0, 2, 1)), n_ref[..., None])[..., 0])
    n_h = n_h * np.sign(orient)[:, None]
    n_h /= np.linalg.norm(n_h, axis=1, keepdims=True)
    y = ideal.value(E, X, T)
    ls = bundle.levelset
    n_ex = np.concatenate([ls.grad(y, T), ls.dt(y, T)[:, None]], axis=1)
    n_ex /= np.linalg.norm(n_ex, axis=1, keepdims=True)
    err = np.linalg.norm(n_h - n_ex, axis=1)
    return ErrorMetric("normal_error", float(err.max()), len(err))


# --------------------------------------------------------------------------
# interpolation on the deformed space-time mesh
# --------------------------------------------------------------------------
class AnalyticFunction:
    """Smooth scalar ``u(x, t)`` from a sympy expression in ``x0, x1, t``."""

    def __init__(self, expr, dim: int = 2):
        xs = sp.symbols(f"x0:{dim}")
        t = sp.Symbol("t")
        args = (*xs, t)
        self.dim = dim
        self.expr = expr
        self._f = sp.lambdify(args, expr, "numpy")
        self._g = [sp.lambdify(args, sp.diff(expr, v), "numpy") for v in xs]
        self._t = sp.lambdify(args, sp.diff(expr, t), "numpy")

    def _call(self, fn, x, t):
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        return np.broadcast_to(np.asarray(fn(*np.moveaxis(x, -1, 0), t), dtype=float), t.shape).copy()

    def __call__(self, x, t):
        return self._call(self._f, x, t)

    def grad(self, x, t):
        return np.stack([self._call(g, x, t) for g in self._g], axis=-1)

    def dt(self, x, t):
        return self._call(self._t, x, t)


def radial_test_function(center=((0.0, 0.0),), r0: float = 0.5) -> AnalyticFunction:
    """``u = cos(pi r / r0) sin(pi t)`` with ``r = |x - c(t)|`` and
    ``c(t) = sum_k center[k] t^k``. Smooth, since ``cos`` is even in ``r``."""
    x0, x1, t = sp.symbols("x0 x1 t")
    center = np.atleast_2d(center)
    cx = sum(sp.Float(c[0]) * t**k for k, c in enumerate(center))
    cy = sum(sp.Float(c[1]) * t**k for k, c in enumerate(center))
    r = sp.sqrt((x0 - cx) ** 2 + (x1 - cy) ** 2)
    return AnalyticFunction(sp.cos(sp.pi * r / r0) * sp.sin(sp.pi * t))


def kite_test_function(r0: float = 1.0) -> AnalyticFunction:
    x0, x1, t = sp.symbols("x0 x1 t")
    r = sp.sqrt((x0 - (1 - x1**2) * t) ** 2 + x1**2)
    return AnalyticFunction(sp.cos(sp.pi * r / r0) * sp.sin(sp.pi * t))


def _u_hat(u, ideal, E, X, T, what):
    """``u o Psi^st`` and, on request, its time derivative or spatial gradient."""
    y = ideal.value(E, X, T)
    if what == "value":
        return u(y, T)
    if what == "dt":
        return np.einsum("md,md->m", u.grad(y, T), ideal.dt(E, X, T)) + u.dt(y, T)
    J = ideal.jacobian(E, X, T)
    return np.einsum("mji,mj->mi", J, u.grad(y, T))


def interpolation_error(bundle, ideal: MapBase, u, k_s: int, k_t: int, norm=Norm.L2,
                        classification=None, order: int | None = None) -> ErrorMetric:
    """Error of the space-time nodal interpolant of ``u_hat = u o Psi^st``
    onto ``V_h^{k_s, k_t}`` over the elements meeting ``Q_lin``."""
    from .fe import SpatialSpace, TemporalBasis

    norm = Norm(norm)
    cls = ideal.classification if classification is None else classification
    mesh = bundle.mesh
    elems = cls.neg_elements
    space = SpatialSpace(mesh, k_s) if k_s != bundle.space.k else bundle.space
    tb = TemporalBasis(bundle.slab, k_t)
    nloc = space.element.n_local
    # element-wise nodal values (Psi is continuous, so shared DOFs agree)
    Ed = np.repeat(elems, nloc)
    Xd = mesh.to_physical(Ed, np.tile(space.element.nodes, (len(elems), 1)))
    vals = np.stack([_u_hat(u, ideal, Ed, Xd, np.full(len(Ed), tn), "value") for tn in tb.nodes])
    vals = vals.reshape(tb.n_nodes, len(elems), nloc)
    pos = np.full(mesh.n_elements, -1)
    pos[elems] = np.arange(len(elems))

    def interp(E, XI, T, what):
        L = tb(T, 1 if what == "dt" else 0)  # (M, nt)
        loc = np.einsum("mt,tmj->mj", L, vals[:, pos[E]])
        if what == "grad":
            return np.einsum("mjd,mj->md", space.phys_grads(E, XI), loc)
        return np.einsum("mj,mj->m", space.element.basis(XI), loc)

    what = {Norm.L2: "value", Norm.FINAL_TIME: "value", Norm.DT_L2: "dt", Norm.GRAD_L2: "grad"}[norm]
    order = 2 * max(k_s, bundle.q_s) + 2 if order is None else order
    if norm is Norm.FINAL_TIME:
        rule = spatial_cut_rules(bundle, elems, bundle.slab.t_end, order, "NEG")
        E, X, T, W = rule.elems, rule.x, rule.t, rule.w
    else:
        xi, w = simplex_rule(mesh.dim, order)
        ts, wt = gauss_interval(k_t + 2, bundle.slab.t_begin, bundle.slab.t_end)
        E = np.repeat(elems, len(xi) * len(ts))
        XIq = np.tile(np.repeat(xi, len(ts), axis=0), (len(elems), 1))
        T = np.tile(ts, len(elems) * len(xi))
        W = (np.abs(mesh.det[elems])[:, None] * np.outer(w, wt).ravel()[None, :]).ravel()
        X = mesh.to_physical(E, XIq)
    total = 0.0
    for s in range(0, len(E), CHUNK):
        sl = slice(s, s + CHUNK)
        xi_q = mesh.to_reference(E[sl], X[sl])
        diff = _u_hat(u, ideal, E[sl], X[sl], T[sl], what) - interp(E[sl], xi_q, T[sl], what)
        diff = diff.reshape(len(diff), -1)
        total += float(np.sum(W[sl] * np.sum(diff**2, axis=1)))
    return ErrorMetric(f"interp_{norm.value.lower()}", math.sqrt(total), max(len(E), 1))


# --------------------------------------------------------------------------
# convergence orders
# --------------------------------------------------------------------------
def eoc(errors, rho: float = 2.0, floor: float = FLOOR):
    """Orders ``log(e_k / e_{k+1}) / log(rho)`` and per-interval floor flags.

    Zero errors are replaced by machine epsilon; an interval is flagged when
    either of its errors sits at or below ``floor``.
    """
    e = np.asarray(errors, dtype=float)
    e = np.where(e > 0, e, np.finfo(float).eps)
    orders = np.log(e[:-1] / e[1:]) / np.log(rho)
    flags = (e[:-1] <= floor) | (e[1:] <= floor)
    return orders, flags


class RefinementMode(str, Enum):
    SPACE = "SPACE"
    TIME = "TIME"
    SIMULTANEOUS = "SIMULTANEOUS"


@dataclass
class ConvergenceRecord:
    mode: RefinementMode
    metric_names: list
    rows: list = field(default_factory=list)  # (h, dt, {name: value})

    def add(self, h: float, dt: float, metrics: dict) -> None:
        mode = RefinementMode(self.mode)
        if self.rows:
            h0, dt0, _ = self.rows[-1]
            if mode in (RefinementMode.SPACE, RefinementMode.SIMULTANEOUS) and not h < h0:
                raise ValueError("h must decrease along the ladder")
            if mode in (RefinementMode.TIME, RefinementMode.SIMULTANEOUS) and not dt < dt0:
                raise ValueError("dt must decrease along the ladder")
        self.rows.append((float(h), float(dt), dict(metrics)))

    def column(self, name):
        return np.array([r[2][name] for r in self.rows], dtype=float)

    def orders(self, name):
        if len(self.rows) < 2:
            return np.zeros(0), np.zeros(0, dtype=bool)
        mode = RefinementMode(self.mode)
        if mode is RefinementMode.TIME:
            rho = self.rows[0][1] / self.rows[1][1]
        else:
            rho = self.rows[0][0] / self.rows[1][0]
        return eoc(self.column(name), rho)

    def headline(self, name) -> float:
        o, _ = self.orders(name)
        return float(o[-1]) if len(o) else float("nan")

    def bound_constant(self, name, q_s, q_t) -> float:
        """Smallest ``C`` with ``e <= C (h^{q_s+1} + dt^{q_t+1})`` on all rows."""
        return float(max(r[2][name] / (r[0] ** (q_s + 1) + r[1] ** (q_t + 1)) for r in self.rows))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.metric_names)
        w.writerow(["level", "h", "dt"] + names + [f"eoc_{n}" for n in names])
        eocs = {n: self.orders(n)[0] for n in names}
        for k, (h, dt, vals) in enumerate(self.rows):
            row = [str(k), _fmt(h), _fmt(dt)] + [_fmt(vals[n]) for n in names]
            row += ["" if k == 0 else _fmt(eocs[n][k - 1]) for n in names]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v: float) -> str:
    return format(float(v), ".17g")
