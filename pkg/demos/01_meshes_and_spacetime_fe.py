"""Structured simplicial meshes and tensor-product space-time Lagrange spaces.

We build a triangulation of the unit square, put a quadratic Lagrange space on
it, pair it with a quadratic Gauss-Lobatto basis in time and interpolate a
smooth function. Halving both h and dt should divide the sup-norm error by
roughly 2^(k+1) = 8.
"""
import numpy as np

from stiso.analysis import eoc
from stiso.fe import SpatialSpace, interpolate_spacetime, temporal_nodes
from stiso.mesh import TimeSlab, build_structured_mesh


def u(x, t):
    return np.sin(2 * x[..., 0] + t) * np.cos(x[..., 1])


mesh = build_structured_mesh([[0, 1], [0, 1]], 4)
print(f"mesh with {mesh.n_vertices} vertices and {mesh.n_elements} triangles, h = {mesh.h_global:.3f}")
space = SpatialSpace(mesh, 2)
print(f"P2 space: {space.n_dofs} degrees of freedom, {space.element.n_local} per element")

errors = []
for level in range(4):
    n, dt = 4 * 2**level, 0.2 / 2**level
    mesh = build_structured_mesh([[0, 1], [0, 1]], n)
    slab = TimeSlab(0.0, dt)
    uh = interpolate_spacetime(u, SpatialSpace(mesh, 2), temporal_nodes(2, slab))
    rng = np.random.default_rng(level)
    x = rng.uniform(0, 1, (5000, 2))
    t = rng.uniform(0, dt, 5000)
    err = np.max(np.abs(uh.eval(x, t) - u(x, t)))
    errors.append(err)
    print(f"n={n:3d} dt={dt:.4f}  sup error {err:.3e}")

print("observed orders:", np.round(eoc(errors)[0], 2))
