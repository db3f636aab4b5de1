"""Reference quadrature rules and sample lattices on simplices."""
from __future__ import annotations

from functools import lru_cache
from math import ceil

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def _gauss_unit(n: int):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_interval(n: int, a: float = 0.0, b: float = 1.0):
    """``n``-point Gauss-Legendre rule on ``[a, b]``."""
    x, w = _gauss_unit(n)
    return a + (b - a) * x, (b - a) * w


def n_points_for_order(order: int) -> int:
    """Gauss points needed for exactness up to polynomial degree ``order``."""
    return max(1, ceil((order + 1) / 2))


@lru_cache(maxsize=None)
def simplex_rule(dim: int, order: int):
    """Positive-weight rule on the reference simplex, exact to ``order``.

    For triangles a collapsed (Duffy) product of Gauss-Jacobi and
    Gauss-Legendre points is used. Weights sum to the reference measure
    (1 for the interval, 1/2 for the triangle).
    """
    n = n_points_for_order(order)
    if dim == 1:
        x, w = _gauss_unit(n)
        return x[:, None].copy(), w.copy()
    if dim != 2:
        raise ValueError(f"unsupported dimension {dim}")
    xj, wj = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    v, wv = _gauss_unit(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=1)
    w = np.outer(wu, wv).ravel()
    return pts, w


def map_rule_to_simplex(corners, order: int):
    """Rule on a physical simplex given by its ``(d + 1, d)`` corners."""
    corners = np.asarray(corners, dtype=float)
    dim = corners.shape[1]
    xi, w = simplex_rule(dim, order)
    J = (corners[1:] - corners[0]).T
    vol = abs(np.linalg.det(J))
    return corners[0] + xi @ J.T, w * vol


@lru_cache(maxsize=None)
def lattice_points(dim: int, n: int):
    """Equispaced barycentric lattice of order ``n`` on the reference simplex."""
    if dim == 1:
        return (np.arange(n + 1) / n)[:, None]
    pts = [(i / n, j / n) for j in range(n + 1) for i in range(n + 1 - j)]
    return np.array(pts)
