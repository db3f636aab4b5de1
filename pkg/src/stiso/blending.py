"""Blending functions that switch the mesh deformation off away from the
interface.

``FE``      ``b = 0``; the transition to the identity happens in one layer of
            elements around the cut elements.
``SMOOTH``  ``b = eta_s(clamp((|phi| - delta0) / (c w_b)))``, zero on every cut
            element and one at distance larger than roughly ``w_b`` from them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from math import comb

import numpy as np


class BlendingKind(str, Enum):
    FE = "FE"
    SMOOTH = "SMOOTH"


def smoothstep(x, s: int):
    """Polynomial step ``eta_s`` on [0, 1]: 0 and 1 at the ends with ``s``
    vanishing derivatives at both of them. Arguments are clamped."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    acc = np.zeros_like(x)
    for k in range(s + 1):
        acc = acc + comb(s + k, k) * (1.0 - x) ** k
    return x ** (s + 1) * acc


@dataclass(frozen=True)
class BlendingConfig:
    kind: BlendingKind = BlendingKind.SMOOTH
    width: float = 0.1
    order: int | None = None  # smoothstep order; default max(q_s, q_t) + 2
    delta0: float | None = None  # resolved from the cut elements when None

    def __post_init__(self):
        object.__setattr__(self, "kind", BlendingKind(self.kind))
        if self.kind is BlendingKind.SMOOTH and not self.width > 0:
            raise ValueError("smooth blending needs a positive width")

    @property
    def is_fe(self) -> bool:
        return self.kind is BlendingKind.FE

    def resolved(self, bundle, cut_elements) -> "BlendingConfig":
        """Fill in the smoothstep order and ``delta0`` for a bundle."""
        if self.is_fe:
            return self
        order = self.order if self.order is not None else max(bundle.q_s, bundle.q_t) + 2
        if order < max(bundle.q_s, bundle.q_t) + 2:
            raise ValueError(f"smoothstep order {order} too low for q_s={bundle.q_s}, q_t={bundle.q_t}")
        if self.width >= bundle.levelset.delta_U:
            raise ValueError(f"blending width {self.width} must stay below delta_U={bundle.levelset.delta_U}")
        delta0 = self.delta0
        if delta0 is None:
            delta0 = 1.1 * max_abs_phi_on(bundle, cut_elements) if len(cut_elements) else 0.0
        return replace(self, order=order, delta0=float(delta0))

    def value(self, levelset, x, t):
        """``b(x, t)`` in [0, 1]; needs a resolved config for SMOOTH."""
        x = np.asarray(x, dtype=float)
        if self.is_fe:
            return np.zeros(x.shape[:-1])
        if self.delta0 is None or self.order is None:
            raise ValueError("smooth blending used before resolving delta0")
        z = (np.abs(levelset.phi(x, t)) - self.delta0) / (levelset.c_grad * self.width)
        return smoothstep(z, self.order)


def blending_value(config: BlendingConfig, bundle, x, t):
    return config.value(bundle.levelset, x, t)


def max_abs_phi_on(bundle, elems, n_space: int = 4, n_time: int = 5):
    """Sampled ``max |phi|`` over ``elems x I_n`` (lattice order ``n_space``)."""
    from .quadrature import lattice_points

    elems = np.asarray(elems)
    xi = lattice_points(bundle.mesh.dim, n_space)
    ts = np.linspace(bundle.slab.t_begin, bundle.slab.t_end, n_time)
    X = bundle.mesh.to_physical(np.repeat(elems, len(xi)), np.tile(xi, (len(elems), 1)))
    return float(max(np.max(np.abs(bundle.levelset.phi(X, t))) for t in ts))
