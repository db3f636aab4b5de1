"""Independent reference computations used by several test modules.

Polygon integrals come from shapely clipping plus Green's theorem on the
boundary, so they share no code with the simplex-based cut rules.
"""
import numpy as np
from numpy.polynomial.legendre import leggauss
from shapely.geometry import Polygon, box
from shapely.geometry.polygon import orient


def half_plane_clip(triangle, normal, offset, negative=True):
    """``triangle ∩ {normal . x - offset < 0}`` (or ``>= 0``) as a shapely polygon."""
    tri = Polygon(triangle)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    c = offset / np.linalg.norm(normal)
    tangent = np.array([-n[1], n[0]])
    big = 1e3
    base = c * n
    side = -n if negative else n
    corners = [base + big * tangent, base - big * tangent, base - big * tangent + big * side,
               base + big * tangent + big * side]
    return tri.intersection(Polygon(corners))


def polygon_moment(poly, a: int, b: int) -> float:
    """Exact ``∫∫ x^a y^b`` over a shapely polygon (Green's theorem).

    Uses ``∮ x^{a+1} y^b / (a+1) dy`` with an edge Gauss rule exact for the
    degree ``a + b + 1`` integrand.
    """
    if poly.is_empty:
        return 0.0
    polys = getattr(poly, "geoms", [poly])
    s, w = leggauss((a + b + 3) // 2 + 1)
    s, w = 0.5 * (s + 1), 0.5 * w
    total = 0.0
    for p in polys:
        if p.geom_type != "Polygon" or p.area == 0:
            continue
        p = orient(p, 1.0)
        rings = [np.asarray(p.exterior.coords)] + [np.asarray(r.coords) for r in p.interiors]
        for ring in rings:
            for p0, p1 in zip(ring[:-1], ring[1:]):
                x = p0[0] + s * (p1[0] - p0[0])
                y = p0[1] + s * (p1[1] - p0[1])
                total += np.sum(w * x ** (a + 1) * y**b) / (a + 1) * (p1[1] - p0[1])
    return float(total)


def random_cut_triangle(rng, min_angle_sin=0.05):
    """Random triangle, normal and offset such that the line cuts it."""
    while True:
        P = rng.uniform(-1, 1, (3, 2))
        e1, e2 = P[1] - P[0], P[2] - P[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        lengths = [np.linalg.norm(P[i] - P[j]) for i, j in ((0, 1), (1, 2), (0, 2))]
        if area < min_angle_sin * max(lengths) ** 2 / 2:
            continue
        n = rng.normal(size=2)
        vals = P @ n
        c = rng.uniform(vals.min(), vals.max())
        if np.any(vals - c < 0) and np.any(vals - c >= 0):
            return P, n, c


__all__ = ["half_plane_clip", "polygon_moment", "random_cut_triangle", "box"]
