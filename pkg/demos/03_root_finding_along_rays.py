"""Safeguarded Newton iteration along many rays at once.

Each ray m asks for the root alpha of g_m(alpha) closest to zero inside a
bracket [-A, A]. The solver scans the bracket, doubles it when no sign
change is found and then polishes with Newton steps that fall back to
bisection whenever a step leaves the current bracket.
"""
import numpy as np

from stiso.rootfind import BracketFailure, solve_rays

rng = np.random.default_rng(0)
roots = rng.uniform(-0.8, 0.8, 6)
curv = rng.uniform(-1, 1, 6)


def g(alpha, idx):
    a = alpha - roots[idx]
    return a + 0.3 * curv[idx] * a**2 + 0.05 * a**3, 1 + 0.6 * curv[idx] * a + 0.15 * a**2


r = solve_rays(g, np.ones(6))
for m in range(6):
    print(f"ray {m}: root {r.d[m]:+.15f} (exact {roots[m]:+.15f}), "
          f"{r.iterations[m]} iterations, residual {r.residual[m]:.1e}")

# a ray without any root inside the doubled bracket is reported, not hidden
try:
    solve_rays(lambda a, idx: (1 + a**2, 2 * a), np.ones(1))
except BracketFailure as exc:
    print("no root found for rays", exc.indices.tolist())
