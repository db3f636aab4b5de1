"""Mesh deformations that lift the piecewise planar geometry ``{phi_lin < 0}``
onto the exact moving domain ``{phi < 0}``.

At a point ``x`` the deformation moves along a search direction ``G`` by the
step ``d`` solving ::

    phi_*(x + d G) = (1 - b) phi_lin(x) + b phi_*(x)

where ``phi_*`` is the exact level set (ideal map ``Psi``), its snapshot at a
temporal node (semi-discrete map) or the element polynomial of ``phi_h`` at a
temporal node (discrete map). The discrete steps are evaluated at the
Lagrange nodes of each active element and averaged into a continuous finite
element displacement ``Theta_h - id``.

All evaluators take explicit element ids next to the physical points. The
element picks the piece of the (only piecewise smooth) ``phi_lin`` and the
element polynomials, so finite differences can stay on one smooth branch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .blending import BlendingConfig
from .cut import CutClassification
from .fe import SpaceTimeFunction, oswald_average
from .rootfind import BracketFailure, DegenerateGradient, DistanceSolveResult, solve_rays

FD_STEP = 1e-6


class GMode(str, Enum):
    RAW = "RAW"
    AVERAGED = "AVERAGED"


class AdmissibilityWarning(UserWarning):
    """Time step and mesh size outside the regime covered by the theory."""


class InversionFailure(RuntimeError):
    pass


def check_admissibility(blending: BlendingConfig, h: float, dt: float, q_t: int) -> bool:
    """Warn (and return False) for step sizes outside the admissible regime."""
    if blending.is_fe and dt > 2.0 * h:
        warnings.warn(f"FE blending with dt={dt:.3g} > 2h={2 * h:.3g}", AdmissibilityWarning, stacklevel=2)
        return False
    if not blending.is_fe and dt ** (q_t + 1) > h ** 1.1:
        warnings.warn(f"dt^(q_t+1)={dt ** (q_t + 1):.3g} exceeds h^1.1={h ** 1.1:.3g}",
                      AdmissibilityWarning, stacklevel=2)
        return False
    return True


def bracket_half_width(bundle) -> float:
    ls = bundle.levelset
    alpha0 = 2.0 * ls.C_grad / ls.c_grad**2 * 1.5
    return alpha0 * bundle.mesh.h_global


# --------------------------------------------------------------------------
# search directions
# --------------------------------------------------------------------------
def _require_direction(G, c_grad, need):
    norms = np.linalg.norm(G, axis=-1)
    bad = need & ~(norms >= 0.5 * c_grad)
    if np.any(bad):
        raise DegenerateGradient(f"|G| < c/2 at {int(bad.sum())} solve point(s), min |G| = {norms[bad].min():.3g}")


def search_direction_exact(bundle, x, t):
    """``G = grad phi(x, t)``, unnormalised."""
    G = bundle.levelset.grad(x, t)
    _require_direction(G, bundle.levelset.c_grad, np.ones(G.shape[:-1], dtype=bool))
    return G


class DiscreteDirection:
    """``G_{h,i}``: element gradient of ``phi_{h,i}`` (RAW) or its Oswald
    average over ``active`` (AVERAGED)."""

    def __init__(self, bundle, mode: GMode, i: int, active=None):
        self.bundle = bundle
        self.mode = GMode(mode)
        self.i = i
        space = bundle.space
        self._c = bundle.phi_h.coeffs[i]
        if self.mode is GMode.AVERAGED:
            if active is None or len(active) == 0:
                raise ValueError("averaged search direction needs an active set")
            active = np.asarray(active)
            nodes = space.element.nodes
            E = np.repeat(active, len(nodes))
            loc = space.grad_local(E, np.tile(nodes, (len(active), 1)), self._c)
            self.coeffs = oswald_average(space, active, loc.reshape(len(active), len(nodes), -1))

    def at(self, elems, xi):
        space = self.bundle.space
        if self.mode is GMode.RAW:
            return space.grad_local(elems, xi, self._c)
        return space.eval_local(elems, xi, self.coeffs)


def search_direction_discrete(bundle, mode, i, active=None) -> DiscreteDirection:
    return DiscreteDirection(bundle, mode, i, active)


# --------------------------------------------------------------------------
# distance solves
# --------------------------------------------------------------------------
def _ray_solve(evalf, x, G, rhs, need, half_width, tol, c_grad) -> DistanceSolveResult:
    """Solve ``f(x + d G) = rhs`` where ``need``; ``d = 0`` elsewhere.

    ``evalf(y, idx)`` returns value and gradient of the level set used by
    point ``idx`` at ``y``.
    """
    M = len(x)
    _require_direction(G, c_grad, need)
    sub = np.flatnonzero(need)
    d = np.zeros(M)
    iters = np.zeros(M, dtype=np.int64)
    res = np.zeros(M)
    if len(sub) == 0:
        return DistanceSolveResult(d, iters, res, np.full(M, half_width))

    def g(alpha, j):
        p = sub[j]
        y = x[p] + alpha[:, None] * G[p]
        val, grad = evalf(y, p)
        return val - rhs[p], np.einsum("md,md->m", grad, G[p])

    try:
        r = solve_rays(g, np.full(len(sub), half_width), tol)
    except BracketFailure as exc:
        exc.indices = sub[exc.indices]
        raise
    d[sub], iters[sub], res[sub] = r.d, r.iterations, r.residual
    A = np.full(M, half_width)
    A[sub] = r.bracket
    return DistanceSolveResult(d, iters, res, A)


def solve_d_ideal(bundle, blending: BlendingConfig, elems, x, t, tol: float = 1e-13) -> DistanceSolveResult:
    """Step ``d`` with ``phi(x + d grad phi, t) = (1 - b) phi_lin + b phi``."""
    ls = bundle.levelset
    x = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.broadcast_to(np.asarray(elems), (len(x),))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
    b = blending.value(ls, x, t)
    need = b < 1.0
    G = np.zeros_like(x)
    G[need] = ls.grad(x[need], t[need])
    rhs = np.zeros(len(x))
    if np.any(need):
        plin = bundle.phi_lin_local(elems[need], x[need], t[need])
        rhs[need] = (1.0 - b[need]) * plin + b[need] * ls.phi(x[need], t[need])

    def evalf(y, p):
        return ls.value_grad(y, t[p])

    return _ray_solve(evalf, x, G, rhs, need, bracket_half_width(bundle), tol, ls.c_grad), G


def solve_d_dt_i(bundle, blending: BlendingConfig, i: int, elems, x, tol: float = 1e-12):
    """Semi-discrete step for the snapshot ``phi(., t_i)``."""
    ls = bundle.levelset
    ti = float(bundle.tbasis.nodes[i])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.broadcast_to(np.asarray(elems), (len(x),))
    b = blending.value(ls, x, ti)
    need = b < 1.0
    G = np.zeros_like(x)
    G[need] = ls.grad(x[need], ti)
    plin = bundle.phi_lin_node_local(i, elems, x)
    rhs = (1.0 - b) * plin + b * ls.phi(x, ti)

    def evalf(y, p):
        return ls.value_grad(y, ti)

    return _ray_solve(evalf, x, G, rhs, need, bracket_half_width(bundle), tol, ls.c_grad), G


def solve_d_hi(bundle, blending: BlendingConfig, elems, i: int, x, G, tol: float = 1e-12) -> DistanceSolveResult:
    """Discrete step using the element polynomial of ``phi_{h,i}`` on ``elems``."""
    ls = bundle.levelset
    mesh, space = bundle.mesh, bundle.space
    c = bundle.phi_h.coeffs[i]
    ti = float(bundle.tbasis.nodes[i])
    x = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.broadcast_to(np.asarray(elems), (len(x),))
    b = blending.value(ls, x, ti)
    need = b < 1.0
    phi_hi = space.eval_local(elems, mesh.to_reference(elems, x), c)
    plin = bundle.phi_lin_node_local(i, elems, x)
    rhs = (1.0 - b) * plin + b * phi_hi

    def evalf(y, p):
        e = elems[p]
        xi = mesh.to_reference(e, y)
        return space.eval_local(e, xi, c), space.grad_local(e, xi, c)

    return _ray_solve(evalf, x, G, rhs, need, bracket_half_width(bundle), tol, ls.c_grad)


# --------------------------------------------------------------------------
# deformation fields
# --------------------------------------------------------------------------
class MapBase:
    """Common evaluation protocol: every method takes ``(elems, x, t)``."""

    dim: int

    def value(self, elems, x, t):
        raise NotImplementedError

    def jacobian(self, elems, x, t):
        """Spatial Jacobian ``(M, d, d)``, row = component."""
        return _fd_jacobian(self, elems, x, t)

    def dt(self, elems, x, t):
        return _fd_dt(self, elems, x, t)

    def located(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        elems, _ = self.mesh.locate_points(x)
        if np.any(elems < 0):
            raise ValueError("evaluation point outside the mesh")
        return elems, x


def _fd_jacobian(m, elems, x, t):
    # differences of the displacement, so that an identity map gives exactly I
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[-1]
    h = FD_STEP * max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        plus = m.value(elems, x + e, t) - (x + e)
        minus = m.value(elems, x - e, t) - (x - e)
        cols.append((plus - minus) / (2 * h))
    return np.eye(d) + np.stack(cols, axis=-1)


def _fd_dt(m, elems, x, t):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    return (m.value(elems, x, t + FD_STEP) - m.value(elems, x, t - FD_STEP)) / (2 * FD_STEP)


class IdentityMap(MapBase):
    def __init__(self, mesh):
        self.mesh = mesh
        self.dim = mesh.dim

    def value(self, elems, x, t):
        return np.array(x, dtype=float)

    def jacobian(self, elems, x, t):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.eye(self.dim), (len(x), self.dim, self.dim)).copy()

    def dt(self, elems, x, t):
        return np.zeros_like(np.atleast_2d(np.asarray(x, dtype=float)))


class DeformationField(MapBase):
    """``Theta_h = id + D`` with ``D`` a vector space-time FE function."""

    def __init__(self, bundle, classification: CutClassification, displacement: SpaceTimeFunction,
                 extended: bool = False, mode: GMode = GMode.RAW):
        self.bundle = bundle
        self.classification = classification
        self.displacement = displacement
        self.extended = extended
        self.mode = GMode(mode)
        self.mesh = bundle.mesh
        self.dim = bundle.mesh.dim

    @property
    def blending(self) -> BlendingConfig:
        return self.classification.blending

    def value(self, elems, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = self.mesh.to_reference(elems, x)
        return x + self.displacement.eval_local(elems, xi, t)

    def jacobian(self, elems, x, t):
        xi = self.mesh.to_reference(elems, x)
        return np.eye(self.dim) + self.displacement.grad_local(elems, xi, t)

    def dt(self, elems, x, t):
        xi = self.mesh.to_reference(elems, x)
        return self.displacement.dt_local(elems, xi, t)

    def eval(self, x, t):
        elems, x = self.located(x)
        return self.value(elems, x, t)

    def dump(self, path) -> None:
        self.displacement.dump(path)

    def with_displacement(self, coeffs, extended):
        d = SpaceTimeFunction(self.displacement.space, self.displacement.tbasis, coeffs)
        return DeformationField(self.bundle, self.classification, d, extended, self.mode)


def build_theta_gamma(bundle, classification: CutClassification, mode=GMode.RAW,
                      tol: float = 1e-12) -> DeformationField:
    """``Theta_h^Gamma``: node-wise discrete steps on every active element,
    Oswald-averaged per temporal node. Zero displacement elsewhere."""
    mesh, space = bundle.mesh, bundle.space
    active = classification.active_elements
    nodes = space.element.nodes
    nloc = len(nodes)
    coeffs = np.zeros((bundle.tbasis.n_nodes, space.n_dofs, mesh.dim))
    if len(active) == 0:
        return DeformationField(bundle, classification, SpaceTimeFunction(space, bundle.tbasis, coeffs),
                                False, mode)
    E = np.repeat(active, nloc)
    XI = np.tile(nodes, (len(active), 1))
    X = mesh.to_physical(E, XI)
    for i in range(bundle.tbasis.n_nodes):
        direction = DiscreteDirection(bundle, mode, i, active)
        G = direction.at(E, XI)
        try:
            r = solve_d_hi(bundle, classification.blending, E, i, X, G, tol)
        except Exception as exc:
            idx = getattr(exc, "indices", None)
            where = "" if idx is None else f" (first element {int(E[idx[0]])}, node {int(idx[0] % nloc)})"
            raise type(exc)(f"temporal node {i}{where}: {exc}") from exc
        local = (r.d[:, None] * G).reshape(len(active), nloc, mesh.dim)
        coeffs[i] = oswald_average(space, active, local, fill=0.0)
    return DeformationField(bundle, classification, SpaceTimeFunction(space, bundle.tbasis, coeffs),
                            False, mode)


# --------------------------------------------------------------------------
# extension by one layer of elements (FE blending)
# --------------------------------------------------------------------------
def _point_simplex_distance(P, corners):
    """Distances from points ``P`` (n, d) to a simplex with ``corners`` (d+1, d)."""
    P = np.atleast_2d(P)
    d = corners.shape[1]
    if d == 1:
        a, b = np.sort(corners[:, 0])
        return np.maximum(0.0, np.maximum(a - P[:, 0], P[:, 0] - b))
    J = (corners[1:] - corners[0]).T
    lam = np.linalg.solve(J, (P - corners[0]).T).T
    inside = np.all(lam >= 0, axis=1) & (lam.sum(axis=1) <= 1)
    dist = np.full(len(P), np.inf)
    for a, b in ((0, 1), (1, 2), (0, 2)):
        A, B = corners[a], corners[b]
        s = np.clip((P - A) @ (B - A) / ((B - A) @ (B - A)), 0.0, 1.0)
        dist = np.minimum(dist, np.linalg.norm(P - (A + s[:, None] * (B - A)), axis=1))
    return np.where(inside, 0.0, dist)


@dataclass(frozen=True)
class LayerTerms:
    """For each layer element and local node, the cut elements whose
    extension feeds that DOF and the weights of their contributions.

    ``target`` (nL, nloc, K) cut element ids, ``weight`` (nL, nloc, K). The
    DOF value is ``sum_k weight * ext_{target_k}(x_dof)``.
    """

    layer: np.ndarray
    target: np.ndarray
    weight: np.ndarray
    keep: np.ndarray  # (nL, nloc) DOF belongs to a cut element


def layer_terms(bundle, classification: CutClassification) -> LayerTerms:
    mesh, space = bundle.mesh, bundle.space
    cut = classification.cut_elements
    layer = classification.plus_layer
    nloc = space.element.n_local
    is_cut = np.zeros(mesh.n_elements, dtype=bool)
    is_cut[cut] = True
    on_boundary = np.zeros(mesh.n_vertices)
    on_boundary[mesh.elements[cut].ravel()] = 1.0
    nodes = space.element.nodes
    lam = np.concatenate([1.0 - nodes.sum(axis=1, keepdims=True), nodes], axis=1)  # (nloc, d+1)
    chi = lam @ on_boundary[mesh.elements[layer]].T  # (nloc, nL)
    chi = chi.T
    tol = 1e-12 * mesh.h_global

    choice = np.empty((len(layer), nloc), dtype=np.int64)
    for li, L in enumerate(layer):
        cands = sorted({e for v in mesh.elements[L] for e in mesh.vertex_elements[v] if is_cut[e]})
        X = space.dof_coords[space.dofs[L]]
        dist = np.stack([_point_simplex_distance(X, mesh.vertices[mesh.elements[c]]) for c in cands], axis=1)
        best = dist.min(axis=1, keepdims=True)
        choice[li] = np.asarray(cands)[np.argmax(dist <= best + tol, axis=1)]

    # average over the layer elements sharing a DOF
    dofs = space.dofs[layer]  # (nL, nloc)
    flat = dofs.ravel()
    count = np.bincount(flat, minlength=space.n_dofs)
    cut_dof = np.zeros(space.n_dofs, dtype=bool)
    cut_dof[space.dofs[cut].ravel()] = True
    # contributions per DOF: list of (target, weight)
    contrib: dict[int, list] = {}
    for (li, j), g in np.ndenumerate(dofs):
        contrib.setdefault(int(g), []).append((int(choice[li, j]), float(chi[li, j]) / count[g]))
    owner_cut = {}
    for e in cut:
        for g in space.dofs[e]:
            owner_cut.setdefault(int(g), int(e))
    K = max(len(v) for v in contrib.values()) if contrib else 1
    target = np.zeros((len(layer), nloc, K), dtype=np.int64)
    weight = np.zeros((len(layer), nloc, K))
    keep = cut_dof[dofs]
    for (li, j), g in np.ndenumerate(dofs):
        g = int(g)
        if keep[li, j]:
            target[li, j, 0] = owner_cut[g]
            weight[li, j, 0] = 1.0
            target[li, j, 1:] = owner_cut[g]
            continue
        terms = contrib[g]
        for k, (tgt, w) in enumerate(terms):
            target[li, j, k] = tgt
            weight[li, j, k] = w
        target[li, j, len(terms):] = terms[0][0]
    return LayerTerms(layer, target, weight, keep)


def extend_fe(field: DeformationField, terms: LayerTerms | None = None) -> DeformationField:
    """Extend ``Theta_h^Gamma`` from the cut elements across one layer.

    Layer DOF values are the polynomial extension of the displacement on a
    nearest cut element, damped by the hat function ``chi`` that is one on
    the boundary of the cut region and zero on the outer layer boundary.
    Shared layer DOFs take the mean of their element contributions.
    """
    if not field.blending.is_fe:
        raise ValueError("extend_fe applies to the FE blending only")
    bundle, cls = field.bundle, field.classification
    space, mesh = bundle.space, bundle.mesh
    if len(cls.plus_layer) == 0:
        return field.with_displacement(field.displacement.coeffs, True)
    terms = layer_terms(bundle, cls) if terms is None else terms
    nL, nloc, K = terms.target.shape
    dofs = space.dofs[terms.layer]
    X = np.repeat(space.dof_coords[dofs][:, :, None, :], K, axis=2).reshape(-1, mesh.dim)
    T = terms.target.ravel()
    xi = mesh.to_reference(T, X)
    coeffs = np.array(field.displacement.coeffs)
    free = ~terms.keep
    for i in range(coeffs.shape[0]):
        ext = space.eval_local(T, xi, coeffs[i]).reshape(nL, nloc, K, mesh.dim)
        vals = np.einsum("ljk,ljkd->ljd", terms.weight, ext)
        coeffs[i, dofs[free]] = vals[free]
    return field.with_displacement(coeffs, True)


def extend_smooth(field: DeformationField, check_tol: float = 1e-6) -> DeformationField:
    """Identity outside the active set; checks that the displacement has
    already vanished on the boundary of the active region."""
    if field.blending.is_fe:
        raise ValueError("extend_smooth applies to the smooth blending only")
    bundle, cls = field.bundle, field.classification
    space = bundle.space
    inside = np.zeros(bundle.mesh.n_elements, dtype=bool)
    inside[cls.active_elements] = True
    in_dofs = np.zeros(space.n_dofs, dtype=bool)
    in_dofs[space.dofs[inside].ravel()] = True
    out_dofs = np.zeros(space.n_dofs, dtype=bool)
    out_dofs[space.dofs[~inside].ravel()] = True
    border = in_dofs & out_dofs
    coeffs = np.array(field.displacement.coeffs)
    jump = float(np.max(np.abs(coeffs[:, border]))) if np.any(border) else 0.0
    if jump > check_tol:
        raise ValueError(f"displacement {jump:.3g} on the active-set boundary: blending width too small")
    if jump > 1e-10:
        warnings.warn(f"displacement {jump:.3g} on the active-set boundary", AdmissibilityWarning, stacklevel=2)
    coeffs[:, ~in_dofs] = 0.0
    return field.with_displacement(coeffs, True)


def build_theta(bundle, classification: CutClassification, mode=GMode.RAW, tol: float = 1e-12):
    """Global ``Theta_h``: active-set construction followed by the extension."""
    field = build_theta_gamma(bundle, classification, mode, tol)
    if classification.blending.is_fe:
        return extend_fe(field)
    return extend_smooth(field)


# --------------------------------------------------------------------------
# the ideal map
# --------------------------------------------------------------------------
class IdealMapEvaluator(MapBase):
    """On-demand ``Psi`` (and ``Psi^Gamma``) through tight root solves."""

    def __init__(self, bundle, classification: CutClassification, tol: float = 1e-13):
        self.bundle = bundle
        self.classification = classification
        self.tol = tol
        self.mesh = bundle.mesh
        self.dim = bundle.mesh.dim
        self.blending = classification.blending
        ne = self.mesh.n_elements
        self._region = np.zeros(ne, dtype=np.int8)  # 0 identity, 1 active, 2 layer
        self._region[classification.active_elements] = 1
        self._terms = None
        if self.blending.is_fe and len(classification.plus_layer):
            self._region[classification.plus_layer] = 2
            self._terms = layer_terms(bundle, classification)
            self._layer_pos = np.full(ne, -1)
            self._layer_pos[self._terms.layer] = np.arange(len(self._terms.layer))
        self.last_result: DistanceSolveResult | None = None

    def psi_gamma(self, elems, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r, G = solve_d_ideal(self.bundle, self.blending, elems, x, t, self.tol)
        self.last_result = r
        return x + r.d[:, None] * G

    def value(self, elems, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        elems = np.broadcast_to(np.asarray(elems), (len(x),))
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        out = x.copy()
        reg = self._region[elems]
        a = reg == 1
        if np.any(a):
            out[a] = self.psi_gamma(elems[a], x[a], t[a])
        lay = reg == 2
        if np.any(lay):
            out[lay] = x[lay] + self._layer_displacement(elems[lay], x[lay], t[lay])
        return out

    def _layer_displacement(self, elems, x, t):
        space, mesh = self.bundle.space, self.mesh
        terms = self._terms
        pos = self._layer_pos[elems]
        tgt = terms.target[pos]  # (M, nloc, K)
        w = terms.weight[pos]
        M, nloc, K = tgt.shape
        Xd = space.dof_coords[space.dofs[elems]]  # (M, nloc, d)
        Xq = np.repeat(Xd[:, :, None, :], K, axis=2).reshape(-1, mesh.dim)
        tq = np.repeat(t, nloc * K)
        nz = w.ravel() != 0.0
        disp = np.zeros((M * nloc * K, mesh.dim))
        if np.any(nz):
            disp[nz] = self.psi_gamma(tgt.ravel()[nz], Xq[nz], tq[nz]) - Xq[nz]
        vals = np.einsum("mjk,mjkd->mjd", w, disp.reshape(M, nloc, K, mesh.dim))
        N = space.element.basis(mesh.to_reference(elems, x))
        return np.einsum("mj,mjd->md", N, vals)

    def eval(self, x, t):
        elems, x = self.located(x)
        return self.value(elems, x, t)


class SemiDiscreteMap(MapBase):
    """``Psi_dt^Gamma = sum_i ell_i(t) (x + d_{dt,i} G_{dt,i})`` on active elements."""

    def __init__(self, bundle, classification: CutClassification, tol: float = 1e-12):
        self.bundle = bundle
        self.classification = classification
        self.tol = tol
        self.mesh = bundle.mesh
        self.dim = bundle.mesh.dim
        self._active = np.zeros(self.mesh.n_elements, dtype=bool)
        self._active[classification.active_elements] = True

    def value(self, elems, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        elems = np.broadcast_to(np.asarray(elems), (len(x),))
        L = self.bundle.tbasis(np.broadcast_to(np.asarray(t, dtype=float), (len(x),)))
        out = x.copy()
        a = self._active[elems]
        if np.any(a):
            for i in range(self.bundle.tbasis.n_nodes):
                r, G = solve_d_dt_i(self.bundle, self.classification.blending, i, elems[a], x[a], self.tol)
                out[a] += L[a, i, None] * r.d[:, None] * G
        return out


# --------------------------------------------------------------------------
# space-time views and inversion
# --------------------------------------------------------------------------
def st_eval(m: MapBase, x, t, elems=None):
    """``(x, t) -> (m(x, t), t)``."""
    if elems is None:
        elems, x = m.located(x)
    y = m.value(elems, x, t)
    tt = np.broadcast_to(np.asarray(t, dtype=float), (len(y),))
    return np.concatenate([y, tt[:, None]], axis=1)


def st_jacobian(m: MapBase, x, t, elems=None):
    """``(M, d+1, d+1)``: spatial Jacobian, time-derivative column, unit last row."""
    if elems is None:
        elems, x = m.located(x)
    J = m.jacobian(elems, x, t)
    v = m.dt(elems, x, t)
    M, d, _ = J.shape
    out = np.zeros((M, d + 1, d + 1))
    out[:, :d, :d] = J
    out[:, :d, d] = v
    out[:, d, d] = 1.0
    return out


def invert_st(field: MapBase, y, t, tol: float = 1e-12, max_iter: int = 50):
    """Solve ``field(x, t) = y`` by Newton's method starting from ``x = y``.

    Returns ``(x, elems)``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(y),))
    x = y.copy()
    mesh = field.mesh
    elems, _ = mesh.locate_points(x)
    if np.any(elems < 0):
        raise InversionFailure("start point outside the mesh")
    todo = np.arange(len(y))
    for _ in range(max_iter + 1):
        r = field.value(elems[todo], x[todo], t[todo]) - y[todo]
        ok = np.linalg.norm(r, axis=1) < tol
        todo, r = todo[~ok], r[~ok]
        if len(todo) == 0:
            return x, elems
        J = field.jacobian(elems[todo], x[todo], t[todo])
        x[todo] -= np.linalg.solve(J, r[..., None])[..., 0]
        new, _ = mesh.locate_points(x[todo])
        elems[todo] = np.where(new >= 0, new, elems[todo])
    raise InversionFailure(f"Newton inversion did not converge for {len(todo)} point(s)")


class ComposedMap(MapBase):
    """``Phi_h = Psi o Theta_h^{-1}`` evaluated at physical points."""

    def __init__(self, psi: MapBase, theta: MapBase, tol: float = 1e-12):
        self.psi, self.theta, self.tol = psi, theta, tol
        self.mesh = theta.mesh
        self.dim = theta.dim

    def value(self, elems, x, t):
        pre, pre_elems = invert_st(self.theta, x, t, self.tol)
        return self.psi.value(pre_elems, pre, t)
