"""Classifying elements against a moving circle and integrating over cut cells.

The circle of radius 0.5 translates with speed 0.3. Its level set is
interpolated into a quadratic space-time function and then linearised
element by element. Elements are sorted into NEG, POS and CUT, and the cut
ones are split along the linearised interface so that ordinary simplex
quadrature rules integrate over the inside part exactly.
"""
import numpy as np

from stiso.cut import Status, classify, spatial_cut_rules
from stiso.levelset import MovingCircle, build_bundle
from stiso.mesh import TimeSlab, build_structured_mesh

circle = MovingCircle(center=((0.0, 0.0), (0.3, 0.0)), radius=0.5)
for n in (8, 16, 32, 64):
    mesh = build_structured_mesh([[-1, 1], [-1, 1]], n)
    bundle = build_bundle(circle, mesh, TimeSlab(0.0, 0.1), q_s=2, q_t=2)
    cls = classify(bundle)
    counts = {s.name: int(np.sum(cls.status == s)) for s in Status}
    rule = spatial_cut_rules(bundle, cls.neg_elements, 0.05, order=4, side="NEG")
    area = rule.w.sum()
    print(f"n={n:2d} {counts}  area of the linearised disc {area:.8f}, "
          f"error {abs(area - np.pi * 0.25):.2e}")

print("All weights positive:", bool(np.all(rule.w > 0)))
print("The area error falls like h^2: the piecewise linear interface is the bottleneck,")
print("which is what the isoparametric deformation in demo 05 repairs.")
