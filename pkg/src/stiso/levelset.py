"""Analytic space-time level sets and their discrete descriptions.

A level set ``phi(x, t)`` describes the moving domain ``{phi < 0}``. Three
discrete views are derived from it on a mesh and a time slab:

* ``phi_h``   space-time Lagrange interpolant of orders ``(q_s, q_t)``,
* ``phi_lin`` its piecewise linear nodal interpolant in space,
* ``phi_dt``  exact in space, nodal polynomial in time (never stored).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .fe import (SpaceTimeFunction, SpatialSpace, TemporalBasis, interpolate_p1,
                 interpolate_spacetime)
from .mesh import Mesh, TimeSlab


class AnalyticLevelSet:
    """Base class. Subclasses implement vectorised evaluators.

    ``x`` has shape ``(..., d)`` and ``t`` broadcasts against ``x[..., 0]``.
    """

    name = "abstract"
    dim = 2
    c_grad = 1.0  # lower bound of |grad phi| on U
    C_grad = 1.0  # upper bound of |grad phi| on U
    delta_U = 0.25

    def phi(self, x, t):
        raise NotImplementedError

    def grad(self, x, t):
        raise NotImplementedError

    def value_grad(self, x, t):
        """``(phi, grad phi)``; subclasses may share work between the two."""
        return self.phi(x, t), self.grad(x, t)

    def dt(self, x, t):
        raise NotImplementedError

    def hess(self, x, t):
        raise NotImplementedError

    def dt_grad(self, x, t):
        raise NotImplementedError

    def __call__(self, x, t):
        return self.phi(x, t)

    def params(self) -> dict:
        return {}


def _xt(x, t):
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    return x, t


class LinearLevelSet(AnalyticLevelSet):
    """``phi = n . x - p(t)`` with ``p(t) = sum_k motion[k] t^k``.

    The translating line ``x_1 - v t - c`` is ``normal=(1, 0)``, ``motion=(c, v)``.
    """

    name = "linear"

    def __init__(self, normal=(1.0, 0.0), motion=(0.5,), delta_U=1.0):
        self.normal = np.asarray(normal, dtype=float)
        self.dim = len(self.normal)
        self.motion = np.asarray(motion, dtype=float)
        n = float(np.linalg.norm(self.normal))
        self.c_grad = self.C_grad = n
        self.delta_U = delta_U

    def _p(self, t, deriv=0):
        poly = np.polynomial.Polynomial(self.motion)
        return poly.deriv(deriv)(t) if deriv else poly(t)

    def phi(self, x, t):
        x, t = _xt(x, t)
        return x @ self.normal - self._p(t)

    def grad(self, x, t):
        x, _ = _xt(x, t)
        return np.broadcast_to(self.normal, x.shape).copy()

    def dt(self, x, t):
        x, t = _xt(x, t)
        return -self._p(t, 1) * np.ones(x.shape[:-1])

    def hess(self, x, t):
        x, _ = _xt(x, t)
        return np.zeros(x.shape + (self.dim,))

    def dt_grad(self, x, t):
        x, _ = _xt(x, t)
        return np.zeros(x.shape)

    def params(self):
        return {"normal": self.normal.tolist(), "motion": self.motion.tolist()}


class MovingCircle(AnalyticLevelSet):
    """Signed distance to a sphere of radius ``r`` around ``c(t)``.

    ``center`` holds polynomial coefficients: ``c(t) = sum_k center[k] t^k``,
    so ``[[0, 0], [0.3, 0]]`` is a circle translating with speed 0.3 in x.
    """

    name = "circle"

    def __init__(self, center=((0.0, 0.0), (0.3, 0.0)), radius=0.5, delta_U=None):
        self.center = np.atleast_2d(np.asarray(center, dtype=float))
        self.dim = self.center.shape[1]
        self.radius = float(radius)
        self.c_grad = self.C_grad = 1.0
        self.delta_U = 0.5 * self.radius if delta_U is None else delta_U

    def c(self, t, deriv=0):
        t = np.asarray(t, dtype=float)
        coef = self.center
        for _ in range(deriv):
            coef = coef[1:] * np.arange(1, len(coef))[:, None]
        out = np.zeros(t.shape + (self.dim,))
        for ck in coef[::-1]:  # Horner
            out = out * t[..., None] + ck
        return out

    def _rel(self, x, t):
        x, t = _xt(x, t)
        rel = x - self.c(t)
        rho = np.linalg.norm(rel, axis=-1)
        return rel, rho, t

    @staticmethod
    def _unit(rel, rho):
        # the gradient is undefined at the centre; report zero there
        safe = np.where(rho > 0, rho, 1.0)
        return np.where(rho[..., None] > 0, rel / safe[..., None], 0.0), safe

    def phi(self, x, t):
        _, rho, _ = self._rel(x, t)
        return rho - self.radius

    def grad(self, x, t):
        rel, rho, _ = self._rel(x, t)
        return self._unit(rel, rho)[0]

    def value_grad(self, x, t):
        rel, rho, _ = self._rel(x, t)
        return rho - self.radius, self._unit(rel, rho)[0]

    def dt(self, x, t):
        rel, rho, t = self._rel(x, t)
        return -np.einsum("...i,...i->...", self._unit(rel, rho)[0], self.c(t, 1))

    def hess(self, x, t):
        rel, rho, _ = self._rel(x, t)
        n, safe = self._unit(rel, rho)
        eye = np.eye(self.dim)
        return (eye - n[..., :, None] * n[..., None, :]) / safe[..., None, None]

    def dt_grad(self, x, t):
        _, _, tt = self._rel(x, t)
        return -np.einsum("...ij,...j->...i", self.hess(x, t), self.c(tt, 1))

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class SymbolicLevelSet(AnalyticLevelSet):
    """Level set given as a sympy expression in ``x0, x1, t``.

    All derivatives are generated symbolically and lambdified to numpy.
    """

    name = "symbolic"

    def __init__(self, expr, dim=2, c_grad=1.0, C_grad=1.0, delta_U=0.25):
        self.dim = dim
        xs = sp.symbols(f"x0:{dim}")
        t = sp.Symbol("t")
        self.expr = expr
        self.c_grad, self.C_grad, self.delta_U = c_grad, C_grad, delta_U
        args = (*xs, t)
        grad = [sp.diff(expr, v) for v in xs]
        self._phi = sp.lambdify(args, expr, "numpy")
        self._grad = [sp.lambdify(args, g, "numpy") for g in grad]
        self._dt = sp.lambdify(args, sp.diff(expr, t), "numpy")
        self._hess = [[sp.lambdify(args, sp.diff(g, v), "numpy") for v in xs] for g in grad]
        self._dt_grad = [sp.lambdify(args, sp.diff(g, t), "numpy") for g in grad]

    def _call(self, fn, x, t):
        x, t = _xt(x, t)
        out = fn(*np.moveaxis(x, -1, 0), t)
        return np.broadcast_to(np.asarray(out, dtype=float), t.shape).copy()

    def phi(self, x, t):
        return self._call(self._phi, x, t)

    def grad(self, x, t):
        return np.stack([self._call(g, x, t) for g in self._grad], axis=-1)

    def dt(self, x, t):
        return self._call(self._dt, x, t)

    def hess(self, x, t):
        return np.stack([np.stack([self._call(h, x, t) for h in row], axis=-1) for row in self._hess], axis=-2)

    def dt_grad(self, x, t):
        return np.stack([self._call(g, x, t) for g in self._dt_grad], axis=-1)


class KiteLevelSet(SymbolicLevelSet):
    """Circle deforming into a kite: ``rho = (1 - y^2) t``,
    ``phi = sqrt((x - rho)^2 + y^2) - r0``."""

    name = "kite"

    def __init__(self, r0=1.0, delta_U=0.4):
        x0, x1, t = sp.symbols("x0 x1 t")
        rho = (1 - x1**2) * t
        expr = sp.sqrt((x0 - rho) ** 2 + x1**2) - r0
        self.r0 = float(r0)
        # |grad phi| stays within these bounds on the neighbourhood for t <= 0.5
        super().__init__(expr, dim=2, c_grad=0.6, C_grad=1.8, delta_U=delta_U)

    def params(self):
        return {"r0": self.r0}


@dataclass(frozen=True)
class DiscreteLevelSetBundle:
    levelset: AnalyticLevelSet
    mesh: Mesh
    slab: TimeSlab
    q_s: int
    q_t: int
    space: SpatialSpace
    tbasis: TemporalBasis
    phi_h: SpaceTimeFunction
    phi_lin: SpaceTimeFunction
    _vertex_values: np.ndarray = field(repr=False)

    @property
    def vertex_values(self):
        """``phi_lin_i`` at mesh vertices, shape (q_t + 1, n_vertices)."""
        return self._vertex_values

    # semi-discrete view ---------------------------------------------------
    def phi_dt(self, x, t):
        L = self.tbasis(np.broadcast_to(np.asarray(t, float), np.shape(x)[:-1]))
        snaps = np.stack([self.levelset.phi(x, ti) for ti in self.tbasis.nodes], axis=-1)
        return np.sum(L * snaps, axis=-1)

    def grad_phi_dt(self, x, t):
        L = self.tbasis(np.broadcast_to(np.asarray(t, float), np.shape(x)[:-1]))
        snaps = np.stack([self.levelset.grad(x, ti) for ti in self.tbasis.nodes], axis=-1)
        return np.einsum("...i,...di->...d", L, snaps)

    def phi_dt_node(self, i, x):
        return self.levelset.phi(x, self.tbasis.nodes[i])

    # element-wise linear level set (valid also outside the element) --------
    def phi_lin_local(self, elems, x, t, deriv=0):
        lam = self.mesh.barycentric(elems, x)
        L = self.tbasis(np.broadcast_to(np.asarray(t, float), np.shape(elems)), deriv)
        vv = self._vertex_values[:, self.mesh.elements[np.asarray(elems)]]  # (nt, M, d+1)
        return np.einsum("mt,tma,ma->m", L, vv, lam)

    def grad_phi_lin_local(self, elems, t, deriv=0):
        elems = np.asarray(elems)
        L = self.tbasis(np.broadcast_to(np.asarray(t, float), elems.shape), deriv)
        vv = self._vertex_values[:, self.mesh.elements[elems]]
        # d lambda / dx: rows of [-1..-1; I] J^{-1}
        d = self.mesh.dim
        dlam_dxi = np.vstack([-np.ones((1, d)), np.eye(d)])
        dlam = np.einsum("ak,mki->mai", dlam_dxi, self.mesh.jac_inv[elems])
        return np.einsum("mt,tma,mai->mi", L, vv, dlam)

    def phi_lin_node_local(self, i, elems, x):
        lam = self.mesh.barycentric(elems, x)
        vv = self._vertex_values[i, self.mesh.elements[np.asarray(elems)]]
        return np.einsum("ma,ma->m", vv, lam)


def build_bundle(ls: AnalyticLevelSet, mesh: Mesh, slab: TimeSlab, q_s: int, q_t: int):
    if q_s < 1 or q_t < 0:
        raise ValueError(f"invalid orders q_s={q_s}, q_t={q_t}")
    space = SpatialSpace(mesh, q_s)
    tb = TemporalBasis(slab, q_t)
    phi_h = interpolate_spacetime(ls.phi, space, tb)
    phi_lin = interpolate_p1(phi_h)
    return DiscreteLevelSetBundle(ls, mesh, slab, q_s, q_t, space, tb, phi_h, phi_lin,
                                  np.array(phi_lin.coeffs))


CASES = {
    "linear": (LinearLevelSet, {"normal": "list[float], spatial normal n", "motion": "list[float], coefficients of p(t)"}),
    "circle": (MovingCircle, {"center": "list[list[float]], polynomial coefficients of c(t)", "radius": "float"}),
    "kite": (KiteLevelSet, {"r0": "float"}),
}


def make_levelset(name: str, **params) -> AnalyticLevelSet:
    try:
        cls, _ = CASES[name]
    except KeyError:
        raise ValueError(f"unknown level set case {name!r}; known: {sorted(CASES)}") from None
    return cls(**params)


def weak_signed_distance_ratio(ls: AnalyticLevelSet, x, t, eps, eps_tilde):
    """``|phi(x + e G) - phi(x + e~ G)| / |e - e~|`` with ``G = grad phi(x, t)``."""
    G = ls.grad(x, t)
    a = ls.phi(x + eps[..., None] * G, t)
    b = ls.phi(x + eps_tilde[..., None] * G, t)
    return np.abs(a - b) / np.abs(eps - eps_tilde)


def verify_assumptions(bundle: DiscreteLevelSetBundle, sample_density: int = 4, rng=None):
    """Measured sup-norms of the level-set approximation errors.

    Samples a lattice of the given order on every cut element at
    ``sample_density`` Gauss times. Returns a dict of floats.
    """
    from .cut import classify
    from .quadrature import gauss_interval, lattice_points

    cls = classify(bundle)
    elems = cls.cut_elements
    if len(elems) == 0:
        raise ValueError("no cut elements: empty neighbourhood")
    ls = bundle.levelset
    xi = lattice_points(bundle.mesh.dim, sample_density)
    ts, _ = gauss_interval(sample_density, bundle.slab.t_begin, bundle.slab.t_end)
    E = np.repeat(elems, len(xi) * len(ts))
    XI = np.tile(np.repeat(xi, len(ts), axis=0), (len(elems), 1))
    T = np.tile(ts, len(elems) * len(xi))
    X = bundle.mesh.to_physical(E, XI)

    phi = ls.phi(X, T)
    phih = bundle.phi_h.eval_local(E, XI, T)
    plin = bundle.phi_lin.eval_local(E, XI, T)
    pdt = bundle.phi_dt(X, T)
    g = ls.grad(X, T)
    gh = bundle.phi_h.grad_local(E, XI, T)
    glin = bundle.phi_lin.grad_local(E, XI, T)
    gdt = bundle.grad_phi_dt(X, T)
    sup = lambda a: float(np.max(np.abs(a)))
    nrm = lambda a: float(np.max(np.linalg.norm(a, axis=-1)))
    report = {
        "phi-phi_h": sup(phi - phih),
        "grad(phi-phi_h)": nrm(g - gh),
        "dt(phi-phi_h)": sup(ls.dt(X, T) - bundle.phi_h.dt_local(E, XI, T)),
        "phi_h-phi_lin": sup(phih - plin),
        "grad(phi_h-phi_lin)": nrm(gh - glin),
        "phi_dt-phi_lin": sup(pdt - plin),
        "grad(phi_dt-phi_lin)": nrm(gdt - glin),
        "phi_dt-phi": sup(pdt - phi),
        "grad(phi_dt-phi)": nrm(gdt - g),
        "n_samples": int(len(X)),
    }
    gn = np.linalg.norm(g, axis=-1)
    report["grad_min"] = float(gn.min())
    report["grad_max"] = float(gn.max())

    rng = np.random.default_rng(0) if rng is None else rng
    pick = rng.choice(len(X), size=min(len(X), 500), replace=False)
    w = ls.delta_U / 4
    e1 = rng.uniform(-w, w, len(pick))
    e2 = rng.uniform(-w, w, len(pick))
    ratio = weak_signed_distance_ratio(ls, X[pick], T[pick], e1, e2)
    report["wsd_min"] = float(ratio.min())
    report["wsd_max"] = float(ratio.max())
    report["wsd_ok"] = bool(ratio.min() >= 0.5 * ls.c_grad**2 and ratio.max() <= 2 * ls.C_grad**2)
    return report
