"""Lagrange finite element spaces in space, nodal bases in time, and their
tensor product.

Spatial degrees of freedom are numbered vertices first (DOF id == vertex
id), then ``k - 1`` nodes per facet/edge, then element interiors.
"""
from __future__ import annotations

from functools import cached_property
from itertools import combinations

import numpy as np
from numpy.polynomial import legendre

from .mesh import Mesh, TimeSlab


class LagrangeElement:
    """Equispaced Lagrange element of order ``k`` on the reference simplex."""

    def __init__(self, dim: int, k: int):
        if k < 1:
            raise ValueError(f"spatial order must be >= 1, got {k}")
        self.dim = dim
        self.k = k
        self.multi = np.array(self._multi_indices(), dtype=np.int64)
        self.nodes = self.multi[:, 1:] / k
        self.exponents = np.array(
            [e for e in np.ndindex(*(k + 1,) * dim) if sum(e) <= k], dtype=np.int64
        )
        vdm = self.monomials(self.nodes)
        self.coeffs = np.linalg.inv(vdm)  # columns: basis functions in monomial form

    def _multi_indices(self):
        d, k = self.dim, self.k
        verts = []
        for a in range(d + 1):
            m = [0] * (d + 1)
            m[a] = k
            verts.append(tuple(m))
        edges = []
        for a, b in combinations(range(d + 1), 2):
            for j in range(1, k):
                m = [0] * (d + 1)
                m[a], m[b] = k - j, j
                edges.append(tuple(m))
        interior = []
        if d == 2:
            for i1 in range(1, k):
                for i2 in range(1, k - i1):
                    interior.append((k - i1 - i2, i1, i2))
        return verts + edges + interior

    @property
    def n_local(self) -> int:
        return len(self.multi)

    def _powers(self, xi):
        """Per-coordinate power tables ``xi_c^p`` for ``p = 0..k``."""
        return xi[..., :, None] ** np.arange(self.k + 1)  # (..., d, k+1)

    def monomials(self, xi):
        xi = np.asarray(xi, dtype=float)
        P = self._powers(xi)
        out = P[..., 0, self.exponents[:, 0]]
        for c in range(1, self.dim):
            out = out * P[..., c, self.exponents[:, c]]
        return out

    def monomial_grads(self, xi):
        xi = np.asarray(xi, dtype=float)
        P = self._powers(xi)
        e = self.exponents
        out = np.empty(xi.shape[:-1] + (len(e), self.dim))
        for c in range(self.dim):
            g = e[:, c] * P[..., c, np.maximum(e[:, c] - 1, 0)]
            for o in range(self.dim):
                if o != c:
                    g = g * P[..., o, e[:, o]]
            out[..., c] = g
        return out

    def basis(self, xi):
        return self.monomials(xi) @ self.coeffs

    def grad_ref(self, xi):
        mg = np.swapaxes(self.monomial_grads(xi), -1, -2)  # (..., d, nmon)
        return np.swapaxes(mg @ self.coeffs, -1, -2)


class SpatialSpace:
    """Continuous Lagrange space ``W_h^k`` on a simplicial mesh."""

    def __init__(self, mesh: Mesh, k: int):
        self.mesh = mesh
        self.k = k
        self.element = LagrangeElement(mesh.dim, k)
        self._number_dofs()

    def _number_dofs(self):
        mesh, el, k = self.mesh, self.element, self.k
        nv = mesh.n_vertices
        d = mesh.dim
        n_edge_nodes = k - 1
        if d == 1:
            n_edges = 0
            n_int = k - 1
        else:
            n_edges = len(mesh.facets)
            n_int = (k - 1) * (k - 2) // 2
        dofs = np.empty((mesh.n_elements, el.n_local), dtype=np.int64)
        int_base = nv + n_edges * n_edge_nodes
        for e, verts in enumerate(mesh.elements):
            n_seen_int = 0
            for loc, m in enumerate(el.multi):
                nz = np.flatnonzero(m)
                if len(nz) == 1:
                    dofs[e, loc] = verts[nz[0]]
                elif len(nz) == 2 and d == 2:
                    a, b = nz
                    ga, gb = verts[a], verts[b]
                    j = m[b] if gb > ga else m[a]
                    f = mesh.facet_id((ga, gb))
                    dofs[e, loc] = nv + f * n_edge_nodes + (j - 1)
                else:
                    dofs[e, loc] = int_base + e * n_int + n_seen_int
                    n_seen_int += 1
        self.dofs = dofs
        self.n_dofs = int_base + mesh.n_elements * n_int
        coords = np.empty((self.n_dofs, d))
        phys = mesh.to_physical(np.repeat(np.arange(mesh.n_elements), el.n_local),
                                np.tile(el.nodes, (mesh.n_elements, 1)))
        coords[dofs.ravel()] = phys
        self.dof_coords = coords

    @cached_property
    def p1(self) -> "SpatialSpace":
        return self if self.k == 1 else SpatialSpace(self.mesh, 1)

    def interpolate(self, f):
        return np.asarray(f(self.dof_coords), dtype=float)

    # local evaluation -----------------------------------------------------
    def local_coeffs(self, elems, coeffs):
        """Gather ``coeffs`` (ndof, ...) to (M, nloc, ...)."""
        return np.asarray(coeffs)[self.dofs[np.asarray(elems)]]

    def eval_local(self, elems, xi, coeffs):
        N = self.element.basis(xi)
        return _contract(N, self.local_coeffs(elems, coeffs))

    def grad_local(self, elems, xi, coeffs):
        G = self.phys_grads(elems, xi)
        return _contract_grad(G, self.local_coeffs(elems, coeffs))

    def phys_grads(self, elems, xi):
        """Physical basis gradients (M, nloc, d)."""
        gref = self.element.grad_ref(xi)
        return gref @ self.mesh.jac_inv[np.asarray(elems)]


def _contract(N, loc):
    """``sum_j N[m, j] loc[m, j, ...]``."""
    if loc.ndim == 2:
        return np.einsum("mj,mj->m", N, loc)
    return (N[:, None, :] @ loc)[:, 0]


def _contract_grad(G, loc):
    """``sum_j loc[m, j, ...] G[m, j, :]``, vector components first."""
    if loc.ndim == 2:
        return (loc[:, None, :] @ G)[:, 0]
    return np.swapaxes(loc, 1, 2) @ G


class TemporalBasis:
    """Nodal Lagrange basis of degree ``q`` on a time slab.

    Gauss-Lobatto nodes for ``q >= 1``; the single node is ``t_end`` for ``q = 0``.
    """

    def __init__(self, slab: TimeSlab, q: int):
        if q < 0:
            raise ValueError(f"temporal order must be >= 0, got {q}")
        self.slab = slab
        self.q = q
        self.local_nodes = lobatto_unit_nodes(q)
        self.nodes = slab.from_local(self.local_nodes)

    @property
    def n_nodes(self) -> int:
        return self.q + 1

    def __call__(self, t, deriv: int = 0):
        """Values (..., q+1) of ``ell_i`` (or their ``deriv``-th time derivative) at ``t``.

        Each cardinal is evaluated as a product of linear factors; derivatives
        follow from the Leibniz recurrence ``D_r <- D_r a + r D_{r-1} a'``.
        This stays well conditioned where a monomial expansion would not.
        """
        s = self.slab.to_local(t)
        z = self.local_nodes
        out = np.empty(s.shape + (self.q + 1,))
        for j in range(self.q + 1):
            D = [np.ones_like(s)] + [np.zeros_like(s) for _ in range(deriv)]
            for m in range(self.q + 1):
                if m == j:
                    continue
                c = 1.0 / (z[j] - z[m])
                a = (s - z[m]) * c
                for r in range(deriv, 0, -1):
                    D[r] = D[r] * a + r * D[r - 1] * c
                D[0] = D[0] * a
            out[..., j] = D[deriv]
        return out / self.slab.dt**deriv if deriv else out


def lobatto_unit_nodes(q: int):
    if q == 0:
        return np.array([1.0])
    if q == 1:
        return np.array([0.0, 1.0])
    inner = legendre.Legendre.basis(q).deriv().roots()
    x = np.concatenate([[-1.0], np.sort(inner.real), [1.0]])
    return 0.5 * (x + 1.0)


def temporal_nodes(q_t: int, slab: TimeSlab) -> TemporalBasis:
    return TemporalBasis(slab, q_t)


class SpaceTimeFunction:
    """``u(x, t) = sum_i ell_i(t) u_i(x)`` with ``u_i`` in a spatial space.

    ``coeffs`` has shape ``(q_t + 1, n_dofs)`` for scalars or
    ``(q_t + 1, n_dofs, vdim)`` for vector fields.
    """

    def __init__(self, space: SpatialSpace, tbasis: TemporalBasis, coeffs):
        self.space = space
        self.tbasis = tbasis
        self.coeffs = np.array(coeffs, dtype=float)
        if self.coeffs.shape[:2] != (tbasis.n_nodes, space.n_dofs):
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match space")
        self.coeffs.setflags(write=False)

    @property
    def vdim(self) -> int:
        return 1 if self.coeffs.ndim == 2 else self.coeffs.shape[2]

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def _time_combined(self, elems, t, deriv=0):
        L = self.tbasis(np.broadcast_to(np.asarray(t, dtype=float), np.shape(elems)), deriv)
        loc = self.coeffs[:, self.space.dofs[np.asarray(elems)]]  # (nt, M, nloc, ...)
        loc = np.moveaxis(loc, 0, -1)  # (M, nloc, ..., nt)
        shp = loc.shape
        out = loc.reshape(shp[0], -1, shp[-1]) @ L[:, :, None]
        return out.reshape(shp[:-1])

    def eval_local(self, elems, xi, t):
        N = self.space.element.basis(xi)
        return _contract(N, self._time_combined(elems, t))

    def grad_local(self, elems, xi, t):
        G = self.space.phys_grads(elems, xi)
        return _contract_grad(G, self._time_combined(elems, t))

    def dt_local(self, elems, xi, t):
        N = self.space.element.basis(xi)
        return _contract(N, self._time_combined(elems, t, deriv=1))

    def _locate(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.mesh.dim)
        elems, _ = self.mesh.locate_points(x)
        if np.any(elems < 0):
            raise ValueError("evaluation point outside the mesh")
        return elems, self.mesh.to_reference(elems, x)

    def eval(self, x, t):
        elems, xi = self._locate(x)
        return self.eval_local(elems, xi, t)

    def eval_grad_x(self, x, t):
        elems, xi = self._locate(x)
        return self.grad_local(elems, xi, t)

    def eval_dt(self, x, t):
        elems, xi = self._locate(x)
        return self.dt_local(elems, xi, t)

    def node_function(self, i):
        return self.coeffs[i]

    def element_poly_extend(self, elem, i, y):
        """Value and spatial gradient of the element polynomial of the
        ``i``-th temporal node function on ``elem``, evaluated at ``y``
        (which may lie outside the element)."""
        y = np.asarray(y, dtype=float).reshape(-1, self.mesh.dim)
        elems = np.full(len(y), elem)
        xi = self.mesh.to_reference(elems, y)
        c = self.coeffs[i]
        return self.space.eval_local(elems, xi, c), self.space.grad_local(elems, xi, c)

    # text format ----------------------------------------------------------
    def dump(self, path) -> None:
        """One line per coefficient: temporal node, DOF, value(s)."""
        with open(path, "w") as fh:
            for i in range(self.coeffs.shape[0]):
                for j in range(self.coeffs.shape[1]):
                    vals = np.atleast_1d(self.coeffs[i, j])
                    fh.write(f"{i} {j} " + " ".join(repr(float(v)) for v in vals) + "\n")

    @staticmethod
    def load_coeffs(path, n_nodes, n_dofs):
        rows = np.loadtxt(path, ndmin=2)
        vdim = rows.shape[1] - 2
        out = np.zeros((n_nodes, n_dofs, vdim))
        out[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2:]
        return out[..., 0] if vdim == 1 else out


def interpolate_spacetime(f, space: SpatialSpace, tbasis: TemporalBasis) -> SpaceTimeFunction:
    """Nodal interpolant: ``C[i, j] = f(x_j, t_i)``."""
    coeffs = np.stack([np.asarray(f(space.dof_coords, t), dtype=float) for t in tbasis.nodes])
    return SpaceTimeFunction(space, tbasis, coeffs)


def interpolate_p1(stf: SpaceTimeFunction) -> SpaceTimeFunction:
    """Piecewise linear nodal interpolation in space, applied per temporal node."""
    p1 = stf.space.p1
    return SpaceTimeFunction(p1, stf.tbasis, stf.coeffs[:, : p1.n_dofs])


def oswald_average(space: SpatialSpace, elems, local_values, fill=0.0):
    """Average element-wise DOF data into a continuous FE coefficient vector.

    ``local_values`` has shape ``(len(elems), n_local, ...)``. Each DOF gets
    the arithmetic mean over the listed elements containing it; DOFs not
    touched by any listed element are set to ``fill``.
    """
    elems = np.asarray(elems, dtype=np.int64)
    if elems.size == 0:
        raise ValueError("Oswald averaging needs a non-empty active set")
    local_values = np.asarray(local_values, dtype=float)
    tail = local_values.shape[2:]
    idx = space.dofs[elems].ravel()
    sums = np.zeros((space.n_dofs,) + tail)
    np.add.at(sums, idx, local_values.reshape((-1,) + tail))
    counts = np.bincount(idx, minlength=space.n_dofs).astype(float)
    out = np.full((space.n_dofs,) + tail, fill, dtype=float)
    hit = counts > 0
    out[hit] = sums[hit] / counts[hit].reshape((-1,) + (1,) * len(tail))
    return out
