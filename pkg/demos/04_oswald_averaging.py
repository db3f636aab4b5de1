"""Turning element-wise data into a continuous finite element function.

Averaging over the elements that share a degree of freedom keeps data that
is already continuous untouched, and never overshoots the input range.
"""
import numpy as np

from stiso.fe import SpatialSpace, oswald_average
from stiso.mesh import build_structured_mesh

mesh = build_structured_mesh([[0, 1], [0, 1]], 6)
space = SpatialSpace(mesh, 3)
active = np.arange(0, mesh.n_elements, 2)
touched = np.unique(space.dofs[active])

w = space.interpolate(lambda x: x[..., 0] ** 3 - 2 * x[..., 0] * x[..., 1] ** 2 + 1)
smoothed = oswald_average(space, active, w[space.dofs[active]])
print("cubic polynomial reproduced up to", np.max(np.abs(smoothed[touched] - w[touched])))

rng = np.random.default_rng(1)
local = rng.normal(size=(len(active), space.element.n_local))
once = oswald_average(space, active, local)
twice = oswald_average(space, active, once[space.dofs[active]])
print(f"random broken data: input max {np.abs(local).max():.3f}, averaged max {np.abs(once[touched]).max():.3f}")
print("applying the average a second time changes it by", np.max(np.abs(twice[touched] - once[touched])))
