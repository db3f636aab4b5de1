"""Structured simplicial background meshes and time slabs.

Meshes are immutable once built. Coordinates are stored as ``(n_vertices, d)``
arrays and elements as ``(n_elements, d + 1)`` index arrays. Every element
carries its affine reference map ``x = v0 + J xi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

BARY_TOL = 1e-12


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSlab:
    t_begin: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_begin:
            raise MeshError(f"empty time slab [{self.t_begin}, {self.t_end}]")

    @property
    def dt(self) -> float:
        return self.t_end - self.t_begin

    def to_local(self, t):
        return (np.asarray(t, dtype=float) - self.t_begin) / self.dt

    def from_local(self, s):
        return self.t_begin + np.asarray(s, dtype=float) * self.dt


class Mesh:
    """Conforming simplicial mesh in one or two space dimensions.

    Parameters
    ----------
    vertices : (nv, d) array
    elements : (ne, d+1) int array
    grid : optional structured-grid description ``(lower, upper, n)`` used
        for O(1) point location.
    shape_bound : maximal admissible ratio diameter / inradius.
    """

    def __init__(self, vertices, elements, grid=None, shape_bound: float = 20.0):
        self.vertices = np.array(vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices[:, None]
        self.elements = np.array(elements, dtype=np.int64)
        self.dim = self.vertices.shape[1]
        if self.dim not in (1, 2):
            raise MeshError(f"unsupported dimension {self.dim}")
        if self.elements.shape[1] != self.dim + 1:
            raise MeshError("elements must have d+1 vertices")
        self.grid = grid
        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)

        v = self.vertices[self.elements]  # (ne, d+1, d)
        self.origin = v[:, 0, :]
        self.jac = np.transpose(v[:, 1:, :] - v[:, :1, :], (0, 2, 1))  # columns = edges
        self.det = np.linalg.det(self.jac)
        if np.any(np.abs(self.det) <= 0.0):
            raise MeshError("degenerate element")
        self.jac_inv = np.linalg.inv(self.jac)
        self.measure = np.abs(self.det) / (1.0 if self.dim == 1 else 2.0)

        pairs = list(combinations(range(self.dim + 1), 2))
        self.h_per_element = np.max([np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in pairs], axis=0)
        self.h_global = float(self.h_per_element.max())
        inradius = self._inradius()
        ratio = self.h_per_element / inradius
        if np.any(ratio > shape_bound):
            raise MeshError(f"shape regularity violated: max ratio {ratio.max():.3g}")
        self._build_adjacency()

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def _inradius(self):
        if self.dim == 1:
            return 0.5 * self.measure
        v = self.vertices[self.elements]
        edges = [np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in ((1, 2), (0, 2), (0, 1))]
        perimeter = sum(edges)
        return 2.0 * self.measure / perimeter

    def _build_adjacency(self):
        # facets: vertices for d=1, edges for d=2
        facet_index: dict[tuple, int] = {}
        facet_elems: list[list[int]] = []
        elem_facets = np.empty((self.n_elements, self.dim + 1), dtype=np.int64)
        for e, verts in enumerate(self.elements):
            # facet opposite local vertex a
            for a in range(self.dim + 1):
                key = tuple(sorted(int(verts[b]) for b in range(self.dim + 1) if b != a))
                f = facet_index.get(key)
                if f is None:
                    f = len(facet_elems)
                    facet_index[key] = f
                    facet_elems.append([])
                facet_elems[f].append(e)
                elem_facets[e, a] = f
        self.facets = np.array(sorted(facet_index, key=facet_index.get), dtype=np.int64)
        self.facet_elements = [tuple(x) for x in facet_elems]
        self.element_facets = elem_facets
        self._facet_lookup = facet_index
        v2e: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for e, verts in enumerate(self.elements):
            for v in verts:
                v2e[v].append(e)
        self.vertex_elements = [tuple(x) for x in v2e]

    def facet_id(self, verts: Sequence[int]) -> int:
        return self._facet_lookup[tuple(sorted(int(v) for v in verts))]

    @property
    def boundary_facets(self):
        return [f for f, els in enumerate(self.facet_elements) if len(els) == 1]

    # reference maps -------------------------------------------------------
    def to_physical(self, elems, xi):
        elems = np.asarray(elems)
        xi = np.asarray(xi, dtype=float)
        return self.origin[elems] + np.einsum("...ij,...j->...i", self.jac[elems], xi)

    def to_reference(self, elems, x):
        elems = np.asarray(elems)
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...j->...i", self.jac_inv[elems], x - self.origin[elems])

    def barycentric(self, elems, x):
        xi = self.to_reference(elems, x)
        return np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)

    def centroids(self):
        return self.vertices[self.elements].mean(axis=1)

    # point location -------------------------------------------------------
    def locate_points(self, x):
        """Return (element ids, barycentric coords); id -1 marks "outside".

        Ties (points on shared facets/vertices) resolve to the lowest element
        id among all elements with barycentric coordinates >= -1e-12.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1 and x.shape[-1] != 1:
            x = x.reshape(-1, 1)
        cand = self._candidates(x)  # (M, k)
        valid = cand >= 0
        safe = np.where(valid, cand, 0)
        lam = self.barycentric(safe, x[:, None, :])
        inside = valid & np.all(lam >= -BARY_TOL, axis=-1)
        big = np.iinfo(np.int64).max
        ids = np.where(inside, safe, big)
        pick = np.argmin(ids, axis=1)
        elem = ids[np.arange(len(x)), pick]
        found = elem != big
        elem = np.where(found, elem, -1)
        bary = lam[np.arange(len(x)), pick]
        bary[~found] = np.nan
        return elem, bary

    def locate_point(self, x):
        """Single-point form of :meth:`locate_points`; returns ``None`` if outside."""
        elem, bary = self.locate_points(np.reshape(np.asarray(x, dtype=float), (1, -1)))
        if elem[0] < 0:
            return None
        return int(elem[0]), bary[0]

    def _candidates(self, x):
        if self.grid is None:
            return np.broadcast_to(np.arange(self.n_elements), (len(x), self.n_elements))
        lower, upper, n = self.grid
        lower = np.asarray(lower)
        upper = np.asarray(upper)
        n = np.asarray(n)
        cell = np.floor((x - lower) / ((upper - lower) / n)).astype(np.int64)
        per_cell = 1 if self.dim == 1 else 2
        offsets = np.array(np.meshgrid(*[[-1, 0, 1]] * self.dim, indexing="ij")).reshape(self.dim, -1).T
        cells = cell[:, None, :] + offsets[None, :, :]
        ok = np.all((cells >= 0) & (cells < n), axis=-1)
        if self.dim == 1:
            lin = cells[..., 0]
        else:
            lin = cells[..., 1] * n[0] + cells[..., 0]
        cand = (lin[..., None] * per_cell + np.arange(per_cell)).reshape(len(x), -1)
        ok = np.repeat(ok, per_cell, axis=1)
        return np.where(ok, cand, -1)

    # output -----------------------------------------------------------------
    def dump(self, path) -> None:
        """Plain-text dump: vertex count, vertices, element count, elements."""
        with open(path, "w") as fh:
            fh.write(f"{self.n_vertices} {self.dim}\n")
            for v in self.vertices:
                fh.write(" ".join(repr(float(c)) for c in v) + "\n")
            fh.write(f"{self.n_elements}\n")
            for el in self.elements:
                fh.write(" ".join(str(int(i)) for i in el) + "\n")

    @classmethod
    def load(cls, path) -> "Mesh":
        with open(path) as fh:
            nv, dim = (int(s) for s in fh.readline().split())
            verts = [[float(s) for s in fh.readline().split()] for _ in range(nv)]
            ne = int(fh.readline())
            els = [[int(s) for s in fh.readline().split()] for _ in range(ne)]
        return cls(np.array(verts).reshape(nv, dim), np.array(els))


def element_diameter(mesh: Mesh, elem_id: int) -> float:
    """Largest pairwise vertex distance of an element."""
    pts = mesh.vertices[mesh.elements[elem_id]]
    return max(float(np.linalg.norm(p - q)) for p, q in combinations(pts, 2))


def build_structured_mesh(domain_box, n_subdiv) -> Mesh:
    """Uniform mesh of an interval or a box.

    In 2D each grid cell ``(i, j)`` is split along its lower-left to
    upper-right diagonal into triangles ``2c`` and ``2c + 1`` with
    ``c = j * nx + i``.
    """
    box = np.asarray(domain_box, dtype=float)
    if box.ndim == 1:
        box = box[None, :]
    dim = box.shape[0]
    n = np.broadcast_to(np.asarray(n_subdiv, dtype=np.int64), (dim,)).copy()
    if np.any(n < 1):
        raise MeshError(f"subdivision count must be >= 1, got {n_subdiv}")
    lower, upper = box[:, 0], box[:, 1]
    if np.any(upper <= lower):
        raise MeshError("degenerate domain box")

    if dim == 1:
        verts = np.linspace(lower[0], upper[0], n[0] + 1)[:, None]
        elems = np.stack([np.arange(n[0]), np.arange(1, n[0] + 1)], axis=1)
    elif dim == 2:
        nx, ny = n
        xs = np.linspace(lower[0], upper[0], nx + 1)
        ys = np.linspace(lower[1], upper[1], ny + 1)
        X, Y = np.meshgrid(xs, ys)
        verts = np.stack([X.ravel(), Y.ravel()], axis=1)
        j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        v00 = (j * (nx + 1) + i).ravel()
        v10 = v00 + 1
        v01 = v00 + nx + 1
        v11 = v01 + 1
        lower_tri = np.stack([v00, v10, v11], axis=1)
        upper_tri = np.stack([v00, v11, v01], axis=1)
        elems = np.stack([lower_tri, upper_tri], axis=1).reshape(-1, 3)
    else:
        raise MeshError(f"unsupported dimension {dim}")
    return Mesh(verts, elems, grid=(lower, upper, n))
