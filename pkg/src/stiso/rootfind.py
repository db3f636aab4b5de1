"""Vectorised safeguarded Newton iteration for scalar roots along rays.

Each point ``m`` carries its own function ``g_m(alpha)``; the caller supplies
one callable that evaluates all of them at once. The root of smallest
absolute value inside ``[-A_m, A_m]`` is bracketed by scanning a symmetric
grid outwards from zero, then refined by Newton steps that fall back to
bisection whenever a step leaves the bracket.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class BracketFailure(RuntimeError):
    """No sign change of ``g`` in the (once enlarged) bracket."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class DegenerateGradient(RuntimeError):
    """Search direction too short to define a step."""


@dataclass(frozen=True)
class DistanceSolveResult:
    d: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    bracket: np.ndarray  # half width A used for every point

    def to_csv(self, path, x, t) -> None:
        """Per-solve diagnostics: coordinates, time, d, iterations, residual."""
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j}" for j in range(x.shape[1])] + ["t", "d", "iterations", "residual"])
            for row in zip(x, t, self.d, self.iterations, self.residual):
                w.writerow([repr(float(c)) for c in row[0]] + [repr(float(row[1])), repr(float(row[2])),
                                                              int(row[3]), repr(float(row[4]))])


def _first_sign_change(G0, Gs, alphas):
    """Given ``g(0)`` and ``g`` on outward grids, return bracket ends.

    ``Gs`` and ``alphas`` have shape ``(M, 2, N)`` (side, outward index).
    Returns ``(found, a, ga, b, gb)`` with ``a`` closer to zero.
    """
    M, _, N = Gs.shape
    prev = np.concatenate([np.broadcast_to(G0[:, None, None], (M, 2, 1)), Gs[:, :, :-1]], axis=2)
    change = np.signbit(prev) != np.signbit(Gs)
    change |= Gs == 0.0
    idx = np.where(change.any(axis=2), change.argmax(axis=2), N)  # (M, 2)
    side = np.argmin(idx, axis=1)  # ties: negative side first, arbitrary but fixed
    k = idx[np.arange(M), side]
    found = k < N
    kk = np.minimum(k, N - 1)
    b = alphas[np.arange(M), side, kk]
    gb = Gs[np.arange(M), side, kk]
    a = np.where(kk > 0, alphas[np.arange(M), side, np.maximum(kk - 1, 0)], 0.0)
    ga = np.where(kk > 0, Gs[np.arange(M), side, np.maximum(kk - 1, 0)], G0)
    return found, a, ga, b, gb


def solve_rays(g, half_width, tol: float = 1e-12, n_scan: int = 8, max_iter: int = 100,
               polish: bool = True, n_points: int | None = None) -> DistanceSolveResult:
    """Smallest-magnitude roots of ``g(alpha)`` for a batch of points.

    Parameters
    ----------
    g : callable ``g(alpha, idx) -> (value, derivative)``, where ``alpha``
        and ``idx`` are 1-d arrays of equal length and ``idx`` selects the
        points being evaluated.
    half_width : (M,) array or scalar, initial bracket ``[-A, A]``.
    n_points : number of points ``M``; required when ``half_width`` is a scalar.

    Raises
    ------
    BracketFailure
        if some point has no sign change even after doubling the bracket.
    """
    if np.ndim(half_width) == 0:
        if n_points is None:
            raise ValueError("n_points is required with a scalar half width")
        A = np.full(n_points, float(half_width))
    else:
        A = np.array(half_width, dtype=float)
    M = A.shape[0]
    allidx = np.arange(M)
    d = np.zeros(M)
    iters = np.zeros(M, dtype=np.int64)
    g0, _ = g(np.zeros(M), allidx)
    res = np.abs(g0)
    todo = np.flatnonzero(res >= tol)
    if len(todo) == 0:
        return DistanceSolveResult(d, iters, res, A)

    lo = np.empty(M)
    hi = np.empty(M)
    glo = np.empty(M)
    ghi = np.empty(M)
    pending = todo
    for attempt in range(2):
        frac = np.arange(1, n_scan + 1) / n_scan
        alphas = np.stack([-frac[None, :] * A[pending, None], frac[None, :] * A[pending, None]], axis=1)
        flat_idx = np.repeat(pending, 2 * n_scan)
        Gs, _ = g(alphas.ravel(), flat_idx)
        found, a, ga, b, gb = _first_sign_change(g0[pending], Gs.reshape(len(pending), 2, n_scan), alphas)
        sel = pending[found]
        lo[sel], glo[sel], hi[sel], ghi[sel] = a[found], ga[found], b[found], gb[found]
        pending = pending[~found]
        if len(pending) == 0:
            break
        if attempt == 0:
            A[pending] *= 2.0
    if len(pending):
        raise BracketFailure(f"no sign change in bracket for {len(pending)} point(s)", pending)

    # orient brackets so that g(lo) < 0 <= g(hi)
    flip = glo[todo] > 0
    t = todo[flip]
    lo[t], hi[t] = hi[t], lo[t]
    glo[t], ghi[t] = ghi[t], glo[t]

    # exact hits on the scan grid
    hit = todo[ghi[todo] == 0.0]
    d[hit] = hi[hit]
    res[hit] = 0.0
    active = todo[ghi[todo] != 0.0]
    x = 0.5 * (lo + hi)
    x[active] = np.where(np.abs(glo[active]) < np.abs(ghi[active]), lo[active], hi[active])
    gx = np.zeros(M)
    dgx = np.zeros(M)
    if len(active):
        gx[active], dgx[active] = g(x[active], active)
    for it in range(max_iter):
        if len(active) == 0:
            break
        a = active
        conv = np.abs(gx[a]) < tol
        if polish:
            # one extra Newton step once converged keeps the result well inside tol
            step_ok = conv & (dgx[a] != 0)
            if np.any(step_ok):
                p = a[step_ok]
                xn = x[p] - gx[p] / dgx[p]
                inside = (xn - lo[p]) * (xn - hi[p]) <= 0
                p2 = p[inside]
                if len(p2):
                    gn, _ = g(xn[inside], p2)
                    better = np.abs(gn) <= np.abs(gx[p2])
                    x[p2[better]] = xn[inside][better]
                    gx[p2[better]] = gn[better]
        done = a[conv]
        d[done] = x[done]
        res[done] = np.abs(gx[done])
        active = a[~conv]
        if len(active) == 0:
            break
        a = active
        iters[a] += 1
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x[a] - gx[a] / dgx[a]
        bad = ~np.isfinite(xn) | ((xn - lo[a]) * (xn - hi[a]) >= 0)
        xn = np.where(bad, 0.5 * (lo[a] + hi[a]), xn)
        gn, dgn = g(xn, a)
        x[a], gx[a], dgx[a] = xn, gn, dgn
        neg = gn < 0
        lo[a[neg]] = xn[neg]
        hi[a[~neg]] = xn[~neg]
        # bracket collapsed to rounding level: accept
        tiny = np.abs(hi[a] - lo[a]) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(xn))
        if np.any(tiny):
            tt = a[tiny]
            d[tt] = x[tt]
            res[tt] = np.abs(gx[tt])
            active = a[~tiny]
    if len(active):
        d[active] = x[active]
        res[active] = np.abs(gx[active])
    return DistanceSolveResult(d, iters, res, A)
