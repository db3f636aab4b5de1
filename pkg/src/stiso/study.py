"""Configuration-driven convergence studies.

A :class:`StudyConfig` describes a level set case, polynomial orders, the
blending, and a refinement ladder. :func:`run_case` evaluates the selected
metrics for one ladder level, :func:`run_study` runs the whole ladder and
collects a :class:`ConvergenceRecord`.
"""
from __future__ import annotations

import dataclasses
import sys
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from . import analysis as an
from .blending import BlendingConfig, BlendingKind
from .cut import classify
from .levelset import CASES, build_bundle, make_levelset
from .mapping import (AdmissibilityWarning, GMode, IdealMapEvaluator, InversionFailure, build_theta,
                      check_admissibility, invert_st)
from .mesh import TimeSlab, build_structured_mesh
from .rootfind import BracketFailure, DegenerateGradient

METRICS = (
    "boundary_residual",
    "value_discrepancy",
    "grad_discrepancy",
    "dt_discrepancy",
    "psi_identity_value",
    "psi_identity_grad",
    "psi_identity_dt",
    "theta_identity_value",
    "composition_discrepancy",
    "roundtrip_residual",
    "jacobian_deviation",
    "jacobian_ratio_deviation",
    "min_det",
    "normal_error",
    "interp_l2",
    "interp_dt_l2",
    "interp_grad_l2",
    "interp_final_time",
)


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class StudyConfig:
    case: str = "circle"
    case_params: dict = field(default_factory=dict)
    domain: list = field(default_factory=lambda: [[-1.0, 1.0], [-1.0, 1.0]])
    q_s: int = 2
    q_t: int = 2
    k_s: int | None = None
    k_t: int | None = None
    blending: dict = field(default_factory=lambda: {"kind": "SMOOTH", "width": 0.1})
    g_mode: str = "RAW"
    refinement: str = "SIMULTANEOUS"
    levels: int = 4
    base_n: int = 8
    base_dt: float | None = None
    t_begin: float = 0.0
    t_end: float = 0.4
    slabs: int = 1
    all_slabs: bool = False
    metrics: list = field(default_factory=lambda: ["boundary_residual"])
    thresholds: dict = field(default_factory=dict)
    test_function: str = "auto"
    roundtrip_points: int = 1000
    output: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; known: {sorted(CASES)}")
        if not (1 <= self.q_s <= 4 and 0 <= self.q_t <= 4):
            raise ConfigError(f"orders out of range: q_s={self.q_s} (1..4), q_t={self.q_t} (0..4)")
        if self.k_s is not None and self.k_s < 1 or self.k_t is not None and self.k_t < 0:
            raise ConfigError("interpolation orders out of range")
        try:
            self.blending_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid blending: {exc}") from None
        try:
            GMode(self.g_mode)
            an.RefinementMode(self.refinement)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.levels < 1 or self.base_n < 1 or self.slabs < 1:
            raise ConfigError("levels, base_n and slabs must be positive")
        if not self.t_end > self.t_begin:
            raise ConfigError("empty time interval")
        if self.base_dt is not None and not self.base_dt > 0:
            raise ConfigError("base_dt must be positive")
        bad = [m for m in self.metrics if m not in METRICS]
        bad += [m for m in self.thresholds if m not in self.metrics]
        if bad:
            raise ConfigError(f"unknown or unselected metrics: {bad}")
        box = np.asarray(self.domain, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] not in (1, 2):
            raise ConfigError("domain must be a list of [lower, upper] pairs (d = 1 or 2)")

    def blending_config(self) -> BlendingConfig:
        b = dict(self.blending)
        return BlendingConfig(kind=BlendingKind(b.pop("kind", "SMOOTH")), width=float(b.pop("width", 0.1)),
                              order=b.pop("order", None), delta0=b.pop("delta0", None), **b)

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def orders_interp(self):
        return (self.q_s if self.k_s is None else self.k_s, self.q_t if self.k_t is None else self.k_t)

    def level_sizes(self, level: int):
        """``(n_subdiv, dt)`` of a ladder level."""
        dt0 = (self.t_end - self.t_begin) / self.slabs if self.base_dt is None else self.base_dt
        mode = an.RefinementMode(self.refinement)
        n = self.base_n * (2**level if mode is not an.RefinementMode.TIME else 1)
        dt = dt0 / (2**level if mode is not an.RefinementMode.SPACE else 1)
        return n, dt

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "StudyConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def list_cases():
    """Built-in level set cases and their parameters."""
    return [(name, dict(schema)) for name, (_, schema) in sorted(CASES.items())]


def _test_function(config: StudyConfig, ls):
    from sympy import sympify

    expr = config.test_function
    if expr != "auto":
        return an.AnalyticFunction(sympify(expr), config.dim)
    if config.case == "circle":
        return an.radial_test_function(ls.center, ls.radius)
    if config.case == "kite":
        return an.kite_test_function(ls.r0)
    # linear case: a polynomial inside the interpolation space
    k_s, k_t = config.orders_interp
    return an.AnalyticFunction(sympify(f"(1 + x0 + 2*x1)**{k_s} * (1 + t)**{k_t}" if config.dim == 2
                                       else f"(1 + x0)**{k_s} * (1 + t)**{k_t}"), config.dim)


def run_case(config: StudyConfig, level: int = 0, seed: int | None = None) -> dict:
    """Metrics for one ladder level; keys ``h``, ``dt`` plus the selected metrics.

    With ``all_slabs`` the metrics are maximised over all slabs of the time
    partition, otherwise only the first slab is used.
    """
    seed = config.seed if seed is None else seed
    n, dt = config.level_sizes(level)
    mesh = build_structured_mesh(config.domain, n)
    ls = make_levelset(config.case, **config.case_params)
    n_slabs = int(round((config.t_end - config.t_begin) / dt)) if config.all_slabs else 1
    out: dict[str, Any] = {"h": mesh.h_global, "dt": dt}
    context = f"case={config.case} level={level} n={n} dt={dt:.6g}"
    for s in range(max(n_slabs, 1)):
        slab = TimeSlab(config.t_begin + s * dt, config.t_begin + (s + 1) * dt)
        try:
            vals = _metrics_on_slab(config, ls, mesh, slab, seed)
        except (BracketFailure, DegenerateGradient, InversionFailure) as exc:
            raise NumericalFailure(f"{context} slab={s}: {type(exc).__name__}: {exc}") from exc
        for k, v in vals.items():
            out[k] = max(out.get(k, -np.inf), v) if k != "min_det" else min(out.get(k, np.inf), v)
    return out


def _metrics_on_slab(config, ls, mesh, slab, seed):
    blending = config.blending_config()
    check_admissibility(blending, mesh.h_global, slab.dt, config.q_t)
    bundle = build_bundle(ls, mesh, slab, config.q_s, config.q_t)
    cls = classify(bundle, blending)
    if len(cls.cut_elements) == 0:
        raise NumericalFailure("no cut elements on this slab")
    theta = build_theta(bundle, cls, GMode(config.g_mode))
    ideal = IdealMapEvaluator(bundle, cls)
    sel = set(config.metrics)
    vals = {}
    if "boundary_residual" in sel:
        vals["boundary_residual"] = an.boundary_residual(bundle, theta, cls).value
    for key, der in (("value_discrepancy", "VALUE"), ("grad_discrepancy", "GRAD_X"), ("dt_discrepancy", "DT")):
        if key in sel:
            vals[key] = an.mapping_discrepancy(theta, ideal, der).value
    for key, der in (("psi_identity_value", "VALUE"), ("psi_identity_grad", "GRAD_X"), ("psi_identity_dt", "DT")):
        if key in sel:
            vals[key] = an.identity_discrepancy(ideal, cls, der).value
    if "theta_identity_value" in sel:
        vals["theta_identity_value"] = an.identity_discrepancy(theta, cls, "VALUE").value
    if "composition_discrepancy" in sel:
        vals["composition_discrepancy"] = an.composition_discrepancy(theta, ideal)[0].value
    if "roundtrip_residual" in sel:
        vals["roundtrip_residual"] = roundtrip_residual(theta, cls, config.roundtrip_points, seed)
    if sel & {"jacobian_deviation", "min_det"}:
        dev, mindet = an.jacobian_deviation(theta)
        vals["jacobian_deviation"] = dev.value
        vals["min_det"] = mindet
    if "jacobian_ratio_deviation" in sel:
        vals["jacobian_ratio_deviation"] = an.jacobian_equivalence(theta, slab.t_end)[1]
    if "normal_error" in sel:
        vals["normal_error"] = an.normal_error(theta, ideal).value
    interp = {"interp_l2": "L2", "interp_dt_l2": "DT_L2", "interp_grad_l2": "GRAD_L2",
              "interp_final_time": "FINAL_TIME"}
    if sel & set(interp):
        u = _test_function(config, ls)
        k_s, k_t = config.orders_interp
        for key, norm in interp.items():
            if key in sel:
                vals[key] = an.interpolation_error(bundle, ideal, u, k_s, k_t, norm).value
    return {k: vals[k] for k in config.metrics if k in vals}


def roundtrip_residual(theta, cls, n_points: int, seed: int, tol: float = 1e-12) -> float:
    """Max ``|Theta(Theta^{-1}(y)) - y|`` at random points of the deformation support."""
    rng = np.random.default_rng(seed)
    mesh = theta.mesh
    support = an.deformation_support(cls)
    elems = rng.choice(support, size=n_points)
    lam = rng.dirichlet(np.ones(mesh.dim + 1), size=n_points)
    y = np.einsum("ma,mad->md", lam, mesh.vertices[mesh.elements[elems]])
    slab = theta.bundle.slab
    t = rng.uniform(slab.t_begin, slab.t_end, n_points)
    x, ex = invert_st(theta, y, t, tol)
    return float(np.max(np.linalg.norm(theta.value(ex, x, t) - y, axis=1)))


@dataclass
class StudyResult:
    record: an.ConvergenceRecord
    failures: list
    csv_text: str

    @property
    def passed(self) -> bool:
        return not self.failures


def run_study(config: StudyConfig, levels: int | None = None, seed: int | None = None,
              out: str | None = None, log=None) -> StudyResult:
    """Run the ladder, write the CSV and check the EOC thresholds.

    A threshold ``{metric: order}`` passes when the last-interval EOC of that
    metric reaches ``order``.
    """
    levels = config.levels if levels is None else levels
    if levels < 3:
        raise ConfigError("a study needs at least 3 ladder levels")
    rec = an.ConvergenceRecord(an.RefinementMode(config.refinement), list(config.metrics))
    for lv in range(levels):
        vals = run_case(config, lv, seed)
        rec.add(vals["h"], vals["dt"], {k: vals[k] for k in config.metrics})
        if log is not None:
            log(f"level {lv}: h={vals['h']:.4g} dt={vals['dt']:.4g} " +
                " ".join(f"{k}={vals[k]:.3e}" for k in config.metrics))
    failures = []
    for name, target in sorted(config.thresholds.items()):
        order = rec.headline(name)
        if not order >= float(target):
            failures.append((name, order, float(target)))
    out = config.output if out is None else out
    text = rec.to_csv(out)
    return StudyResult(rec, failures, text)


def eoc_table(record: an.ConvergenceRecord) -> str:
    names = record.metric_names
    lines = ["level  " + "  ".join(f"{n:>24s}" for n in names)]
    for k, (h, dt, vals) in enumerate(record.rows):
        lines.append(f"{k:5d}  " + "  ".join(f"{vals[n]:>24.6e}" for n in names))
    for n in names:
        o, flags = record.orders(n)
        txt = ", ".join(f"{v:.2f}" + ("*" if f else "") for v, f in zip(o, flags))
        lines.append(f"EOC {n}: {txt}")
    if any(record.orders(n)[1].any() for n in names):
        lines.append("(* at tolerance floor)")
    return "\n".join(lines)


def _warn_to_stderr(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {category.__name__}: {message}", file=sys.stderr)


def install_warning_printer():
    warnings.showwarning = _warn_to_stderr
    warnings.simplefilter("always", AdmissibilityWarning)
