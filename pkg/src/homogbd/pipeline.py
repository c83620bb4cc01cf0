"""Command-line front end: experiment configs, the reproduction registry and CSV/JSON emission."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .barriers import (
    aggregate_bounds,
    certify,
    make_aggregate,
    make_bottom_barrier,
    make_drift_barrier,
    make_singular,
    make_slab_barrier,
    singular_constants,
    singular_scaling_defect,
)
from .cell import (
    CellConfig,
    HalfPlaneProblem,
    extract_tail,
    homogenized_boundary_data,
    m_xi_and_L_xi,
    max_trace_gap_constant,
    rotated_family_constant,
    solve_bottom,
    solve_halfplane,
)
from .data import DataError, Datum, parse_datum
from .domains import BoundaryPoint, Direction, MovingDomain, classify_boundary_point, rationality
from .effop import ergodic_constant, shift_invariance_check
from .operators import (
    DirectionFrame,
    EllipticOperator,
    OperatorError,
    SymMatrix,
    evaluate,
    heat,
    linear_trace,
    max_trace_operator,
    pucci_operator,
    rotated_family_operator,
    rotation_frame,
)
from .sweep import Probe, SweepPlan, run_sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentRecord",
    "Check",
    "REGISTRY",
    "build_operator",
    "build_data",
    "run_config",
    "list_experiments",
    "main",
]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


# ----------------------------------------------------------------------------
# Configuration


CONFIG_FIELDS = ("name", "operator", "domain", "data", "grid", "tolerances", "params", "seed")
SWEEP_GRID = ("eps_ladder", "h_per_eps", "width")
BARRIER_GRID = ("samples",)
GRID_FIELDS = tuple(CellConfig.__dataclass_fields__) + SWEEP_GRID + BARRIER_GRID


@dataclass
class ExperimentConfig:
    name: str
    operator: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    data: object = None
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, d) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config: expected a JSON object")
        unknown = sorted(set(d) - set(CONFIG_FIELDS))
        if unknown:
            raise ConfigError(f"config: unknown fields {unknown}")
        if "name" not in d:
            raise ConfigError("name: required")
        if d["name"] not in REGISTRY:
            raise ConfigError(f"name: unknown experiment {d['name']!r}")
        entry = REGISTRY[d["name"]]
        base = entry.default()
        merged = {k: d.get(k, getattr(base, k)) for k in CONFIG_FIELDS}
        for k in ("operator", "domain", "grid", "tolerances", "params"):
            if not isinstance(merged[k], dict):
                raise ConfigError(f"{k}: expected an object")
        if not isinstance(merged["seed"], int) or isinstance(merged["seed"], bool):
            raise ConfigError("seed: expected an integer")
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in CONFIG_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def validate(self) -> None:
        entry = REGISTRY[self.name]
        if self.operator:
            build_operator(self.operator)
        if self.data is not None:
            for item in self.data if isinstance(self.data, list) else [self.data]:
                build_data(item, entry.data_dim)
        if self.domain:
            _validate_domain(self.domain)
        unknown = sorted(set(self.grid) - set(GRID_FIELDS))
        if unknown:
            raise ConfigError(f"grid: unknown fields {unknown}")
        try:
            self.cell()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from exc
        unknown = sorted(set(self.tolerances) - set(entry.tolerances))
        if unknown:
            raise ConfigError(f"tolerances: unknown fields {unknown}")
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"tolerances.{k}: expected a positive number")
        unknown = sorted(set(self.params) - set(entry.params))
        if unknown:
            raise ConfigError(f"params: unknown fields {unknown}")

    def cell(self) -> CellConfig:
        return CellConfig.from_dict({k: v for k, v in self.grid.items() if k in CellConfig.__dataclass_fields__})

    def tol(self, key: str, scale: float) -> float:
        return float(self.tolerances.get(key, REGISTRY[self.name].tolerances[key])) * scale

    def param(self, key: str):
        return self.params.get(key, REGISTRY[self.name].params[key])


def _need(spec: dict, key: str, where: str):
    if key not in spec:
        raise ConfigError(f"{where}.{key}: required")
    return spec[key]


def _number(spec: dict, key: str, where: str) -> float:
    v = _need(spec, key, where)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{where}.{key}: expected a number")
    return float(v)


OPERATOR_FIELDS = {
    "heat": {"kind", "dim"},
    "pucci_plus": {"kind", "lam", "Lam", "dim"},
    "pucci_minus": {"kind", "lam", "Lam", "dim"},
    "linear": {"kind", "coeffs", "angle"},
    "linear_matrix": {"kind", "matrix"},
    "oscillating_1d": {"kind", "mean", "amp", "k"},
    "max_trace": {"kind", "Lam"},
    "rotated_family": {"kind", "delta", "K"},
}


def build_operator(spec: dict) -> EllipticOperator:
    """Operator from its JSON form."""
    kind = _need(spec, "kind", "operator")
    if kind not in OPERATOR_FIELDS:
        raise ConfigError(f"operator.kind: unknown kind {kind!r}")
    unknown = sorted(set(spec) - OPERATOR_FIELDS[kind])
    if unknown:
        raise ConfigError(f"operator: unknown fields {unknown}")
    try:
        if kind == "heat":
            return heat(int(spec.get("dim", 2)))
        if kind in ("pucci_plus", "pucci_minus"):
            lam, Lam = _number(spec, "lam", "operator"), _number(spec, "Lam", "operator")
            return pucci_operator("+" if kind == "pucci_plus" else "-", lam, Lam, int(spec.get("dim", 2)))
        if kind == "linear":
            coeffs = [float(c) for c in _need(spec, "coeffs", "operator")]
            frame = rotation_frame(float(spec["angle"])) if "angle" in spec else None
            return linear_trace(coeffs, frame)
        if kind == "linear_matrix":
            A = np.asarray(_need(spec, "matrix", "operator"), dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
                raise ConfigError("operator.matrix: expected a symmetric square matrix")
            vals, vecs = np.linalg.eigh(A)
            if vals[0] <= 0:
                raise ConfigError("operator.matrix: must be positive definite")
            frame = DirectionFrame(tuple(vecs[:, k] for k in range(A.shape[0])))
            return linear_trace(list(vals), frame, name="linear_matrix")
        if kind == "oscillating_1d":
            return oscillating_1d(_number(spec, "mean", "operator"), _number(spec, "amp", "operator"),
                                  int(spec.get("k", 1)))
        if kind == "max_trace":
            return max_trace_operator(_number(spec, "Lam", "operator"))
        return rotated_family_operator(_number(spec, "delta", "operator"), int(spec.get("K", 9)))
    except OperatorError as exc:
        raise ConfigError(f"operator: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"operator: {exc}") from exc


def oscillating_1d(mean: float, amp: float, k: int = 1) -> EllipticOperator:
    """``(mean + amp sin(2 pi k y)) u''``."""
    if not 0 <= amp < mean:
        raise ConfigError("operator: need 0 <= amp < mean")

    def a(x, y, t, s):
        return mean + amp * np.sin(2 * math.pi * k * y[..., 0])

    return linear_trace([a], lam=mean - amp, Lam=mean + amp, name=f"oscillating_1d({mean},{amp},{k})")


def build_data(spec, dim: int) -> Datum:
    try:
        return parse_datum(spec, dim)
    except (DataError, TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"data: {exc}") from exc


DOMAIN_FIELDS = {
    "halfplane": {"kind", "nu", "c"},
    "flat_moving": {"kind", "nu", "offset", "time_range"},
    "rotating_prop45": {"kind", "time_range"},
    "torus": {"kind"},
    "none": {"kind"},
}


def _validate_domain(spec: dict) -> None:
    kind = _need(spec, "kind", "domain")
    if kind not in DOMAIN_FIELDS:
        raise ConfigError(f"domain.kind: unknown kind {kind!r}")
    unknown = sorted(set(spec) - DOMAIN_FIELDS[kind])
    if unknown:
        raise ConfigError(f"domain: unknown fields {unknown}")
    if kind in ("halfplane", "flat_moving"):
        nu = np.asarray(_need(spec, "nu", "domain"), dtype=float)
        if nu.ndim != 1 or not np.linalg.norm(nu) > 0:
            raise ConfigError("domain.nu: expected a nonzero vector")


def build_moving_domain(spec: dict) -> MovingDomain:
    _validate_domain(spec)
    kind = spec["kind"]
    tr = tuple(float(v) for v in spec.get("time_range", (0.0, 1.0)))
    if kind == "flat_moving":
        return MovingDomain("flat_moving", tr, nu=np.asarray(spec["nu"], dtype=float),
                            offset=tuple(float(v) for v in spec.get("offset", (0.0,))))
    if kind == "rotating_prop45":
        return MovingDomain("rotating_prop45", tr)
    raise ConfigError(f"domain.kind: {kind!r} is not a moving domain")


# ----------------------------------------------------------------------------
# Records


@dataclass
class Check:
    name: str
    value: float
    relation: str
    threshold: float
    timing: bool = False

    @property
    def passed(self) -> bool:
        v, th = self.value, self.threshold
        if not math.isfinite(v):
            return False
        return {"<=": v <= th, ">=": v >= th}[self.relation]


@dataclass
class Outcome:
    results: dict
    checks: list
    table: list = field(default_factory=list)
    table_header: tuple = ()


@dataclass
class ExperimentRecord:
    config_hash: str
    version: str
    name: str
    seed: int
    results: dict
    checks: list
    passed: bool
    wall_clock: float

    def payload(self) -> dict:
        """Everything except the wall clock and timing checks."""
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "name": self.name,
            "seed": self.seed,
            "results": self.results,
            "checks": [dict(name=c.name, value=c.value, relation=c.relation, threshold=c.threshold, passed=c.passed)
                       for c in self.checks if not c.timing],
        }

    def to_json(self) -> str:
        d = self.payload()
        d["timing"] = [dict(name=c.name, value=c.value, relation=c.relation, threshold=c.threshold, passed=c.passed)
                       for c in self.checks if c.timing]
        d["passed"] = self.passed
        d["wall_clock"] = self.wall_clock
        return json.dumps(_clean(d), sort_keys=True, indent=2)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "check", "value", "relation", "threshold", "passed"])
        for c in self.checks:
            if not c.timing:
                w.writerow([self.name, c.name, f"{c.value:.10e}", c.relation, f"{c.threshold:.10e}", c.passed])
        return buf.getvalue()


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return o


# ----------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class Entry:
    name: str
    tags: tuple
    summary: str
    runner: Callable
    config: dict
    tolerances: dict
    params: dict
    data_dim: int = 2

    def default(self) -> ExperimentConfig:
        c = json.loads(json.dumps(self.config))
        return ExperimentConfig(name=self.name, operator=c.get("operator", {}), domain=c.get("domain", {}),
                                data=c.get("data"), grid=c.get("grid", {}), tolerances={}, params={},
                                seed=int(c.get("seed", 0)))


def _tail(prob: HalfPlaneProblem, cfg: CellConfig):
    start = time.perf_counter()
    tail = extract_tail(solve_halfplane(prob, cfg=cfg), cfg=cfg)
    return tail, time.perf_counter() - start


LATERAL = {"mode": "sin", "k": [1, 0]}
TEMPORAL = {"mode": "sin", "k": [0, 0], "k_s": 1}


def _data_items(cfg: ExperimentConfig, dim: int) -> list:
    items = cfg.data if isinstance(cfg.data, list) else [cfg.data]
    return [build_data(d, dim) for d in items]


def exp_linear_average(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    nu = rationality(np.asarray(cfg.domain["nu"], dtype=float))
    checks, rows, res = [], [], {}
    for i, g in enumerate(_data_items(cfg, op.dim)):
        tail, wall = _tail(HalfPlaneProblem(nu, op, g), cfg.cell())
        dev = abs(tail.value - g.mean())
        res[f"datum{i}"] = {"tail": tail.value, "mean": g.mean(), "bracket": tail.upper - tail.lower,
                            "flags": tail.flags}
        rows.append([i, f"{tail.value:.10e}", f"{g.mean():.10e}", f"{dev:.10e}"])
        checks.append(Check(f"datum{i}: |tail - cell mean|", dev, "<=", cfg.tol("tail", tol_scale)))
        checks.append(Check(f"datum{i}: runtime seconds", wall, "<=", cfg.param("max_seconds"), timing=True))
    return Outcome(res, checks, rows, ("datum", "tail", "mean", "deviation"))


def exp_trichotomy(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    lam, Lam = float(cfg.param("lam")), float(cfg.param("Lam"))
    nu = rationality(np.asarray(cfg.domain["nu"], dtype=float))
    tol = cfg.tol("tail", tol_scale)
    ops = {"heat": heat(2), "P+": pucci_operator("+", lam, Lam), "P-": pucci_operator("-", lam, Lam)}
    checks, rows, res = [], [], {}
    for i, g in enumerate(_data_items(cfg, 2)):
        tails = {k: _tail(HalfPlaneProblem(nu, op, g), cfg.cell())[0].value for k, op in ops.items()}
        gap = tails["P+"] - tails["P-"]
        res[f"datum{i}"] = dict(tails, gap=gap)
        rows.append([i] + [f"{tails[k]:.10e}" for k in ops] + [f"{gap:.10e}"])
        checks += [
            Check(f"datum{i}: |heat tail - mean|", abs(tails["heat"] - g.mean()), "<=", tol),
            Check(f"datum{i}: P+ tail - mean + tol", tails["P+"] - g.mean() + tol, ">=", 0.0),
            Check(f"datum{i}: mean + tol - P- tail", g.mean() + tol - tails["P-"], ">=", 0.0),
            Check(f"datum{i}: P+ tail - P- tail", gap, ">=", cfg.param("min_gap")),
        ]
    return Outcome(res, checks, rows, ("datum", "heat", "P+", "P-", "gap"))


def exp_prop34_shift(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    nu = np.asarray(cfg.domain["nu"], dtype=float)
    pt = BoundaryPoint(np.zeros(2), 0.0, rationality(nu), 0.0, "Gamma1")
    vals, rows = [], []
    for z, tau in cfg.param("shifts"):
        r = homogenized_boundary_data(pt, op, g, cfg.cell(), z=z, tau=tau)
        vals.append(r.value)
        rows.append([json.dumps(z), repr(float(tau)), f"{r.value:.10e}", r.diagnostics.get("normal_used")])
    spread = max(vals) - min(vals)
    return Outcome({"tails": vals, "spread": spread},
                   [Check("Gamma1 approximant tails: max - min over shifts", spread, "<=", cfg.tol("shift", tol_scale))],
                   rows, ("z", "tau", "tail", "normal_used"))


def exp_bottom(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    x0 = cfg.param("x0")
    vals, rows = [], []
    for z in cfg.param("shifts"):
        r = solve_bottom(x0, op, g, cfg.cell(), z=z)
        vals.append(r.value)
        rows.append([json.dumps(z), f"{r.value:.10e}", json.dumps(r.flags, sort_keys=True)])
    spread = max(vals) - min(vals)
    return Outcome({"tails": vals, "spread": spread},
                   [Check("bottom tails: max - min over shifts", spread, "<=", cfg.tol("shift", tol_scale))],
                   rows, ("z", "tail", "flags"))


def exp_profile(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    nu = rationality(np.asarray(cfg.domain["nu"], dtype=float))
    c = float(cfg.domain["c"])
    tol = cfg.tol("profile", tol_scale)

    def f(z, s):
        return extract_tail(solve_halfplane(HalfPlaneProblem(nu, op, g, z, 0.0, c, s), cfg=cfg.cell()),
                            cfg=cfg.cell()).value

    checks, rows, res = [], [], {"pairs": [], "periodicity": []}
    for (z1, s1), (z2, s2) in cfg.param("equal_argument_pairs"):
        a1 = float(np.dot(z1, nu.nu) + c * s1)
        a2 = float(np.dot(z2, nu.nu) + c * s2)
        if abs(a1 - a2) > 1e-12:
            raise ConfigError("params.equal_argument_pairs: pairs must share z.nu + c s")
        v1, v2 = f(z1, s1), f(z2, s2)
        res["pairs"].append([v1, v2])
        rows.append(["pair", f"{a1:.6f}", f"{v1:.10e}", f"{v2:.10e}"])
        checks.append(Check(f"profile at argument {a1:.3f}: two (z, s) pairs", abs(v1 - v2), "<=", tol))
    period = 1.0 / abs(c * float(np.linalg.norm(nu.rational_rep)))
    for s in cfg.param("period_points"):
        v1, v2 = f(np.zeros(2), s), f(np.zeros(2), s + period)
        res["periodicity"].append([v1, v2])
        rows.append(["period", f"{s:.6f}", f"{v1:.10e}", f"{v2:.10e}"])
        checks.append(Check(f"profile at s={s} and s+{period:g}", abs(v1 - v2), "<=", tol))
    return Outcome(res, checks, rows, ("kind", "argument", "first", "second"))


def exp_lemma36(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    cell = cfg.cell()
    checks, rows, res = [], [], {}
    P = build_operator(cfg.operator)
    worst = 0.0
    for M in cfg.param("matrices"):
        v = ergodic_constant(P, M, cell.torus_res, cell.horizon).value
        exact = evaluate(P, SymMatrix(np.asarray(M, dtype=float)))
        worst = max(worst, abs(v - exact))
        rows.append(["constant", json.dumps(M), f"{v:.10e}", f"{exact:.10e}"])
    res["constant_max_deviation"] = worst
    checks.append(Check("constant coefficients: |Fbar - F|", worst, "<=", cfg.tol("constant", tol_scale)))
    mean, amp = cfg.param("oscillating")
    osc = oscillating_1d(mean, amp)
    v = ergodic_constant(osc, [[1.0]], cell.torus_res, cell.horizon).value
    harmonic = math.sqrt(mean**2 - amp**2)
    res["oscillating_1d"] = {"effective": v, "harmonic_mean": harmonic}
    rows.append(["oscillating_1d", "[[1.0]]", f"{v:.10e}", f"{harmonic:.10e}"])
    checks.append(Check("1D oscillating coefficient vs harmonic mean", abs(v - harmonic), "<=",
                        cfg.tol("harmonic", tol_scale)))
    rep = shift_invariance_check(_shift_operator(), cfg.param("shift_matrix"),
                                 [tuple(s) for s in cfg.param("shifts")], cell.torus_res, cell.horizon)
    res["shift_values"] = rep.values
    rows.append(["shift", json.dumps(cfg.param("shift_matrix")), f"{max(rep.values):.10e}",
                 f"{min(rep.values):.10e}"])
    checks.append(Check("ergodic constant spread over shifts", rep.deviation, "<=", cfg.tol("shift", tol_scale)))
    return Outcome(res, checks, rows, ("case", "matrix", "value", "reference"))


def _shift_operator() -> EllipticOperator:
    """Bellman-type operator with cell dependence in both variables."""
    def a1(x, y, t, s):
        return 1.5 + 0.5 * np.sin(2 * math.pi * y[..., 0])

    def a2(x, y, t, s):
        return 1.5 + 0.5 * np.cos(2 * math.pi * (y[..., 0] + y[..., 1]))

    return linear_trace([a1, a2], lam=1.0, Lam=2.0, name="shift_test_linear")


def exp_linear_L(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    xi = Direction.from_integer(tuple(cfg.param("xi")))
    m, L = m_xi_and_L_xi(xi, xi.tangent(), op, g, cfg.cell())
    pt = BoundaryPoint(np.zeros(2), 0.0, xi, float(cfg.param("c")), "Gamma2")
    gbar = homogenized_boundary_data(pt, op, g, cfg.cell()).value
    tol = cfg.tol("identity", tol_scale)
    res = {"gbar": gbar, "L_xi": L.value, "mean_m_xi": m.mean, "m_xi_period": m.period}
    rows = [[f"{gbar:.10e}", f"{L.value:.10e}", f"{m.mean:.10e}"]]
    checks = [Check("|gbar - L_xi|", abs(gbar - L.value), "<=", tol),
              Check("|L_xi - mean of m_xi|", abs(L.value - m.mean), "<=", tol)]
    return Outcome(res, checks, rows, ("gbar", "L_xi", "mean_m_xi"))


def exp_invariant_gap(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    xi = rationality(np.asarray(cfg.domain["nu"], dtype=float))
    m, L = m_xi_and_L_xi(xi, np.array(cfg.param("eta"), dtype=float), op, g, cfg.cell())
    pt = BoundaryPoint(np.zeros(2), 0.0, xi, float(cfg.domain["c"]), "Gamma2")
    gbar = homogenized_boundary_data(pt, op, g, cfg.cell()).value
    Lam = float(cfg.operator["Lam"])
    Q = max_trace_gap_constant(Lam, "half")
    Q_matched = max_trace_gap_constant(Lam, "matched")
    tol = cfg.tol("gap", tol_scale)
    res = {"gbar": gbar, "L_xi": L.value, "Q": Q, "Q_matched_decay": Q_matched}
    rows = [[f"{gbar:.10e}", f"{L.value:.10e}", f"{Q:.10e}", f"{Q_matched:.10e}"]]
    checks = [Check("|L_xi|", abs(L.value), "<=", tol),
              Check("gbar - (Q - tol)", gbar - (Q - tol), ">=", 0.0),
              Check("Q", Q, ">=", cfg.param("min_Q"))]
    return Outcome(res, checks, rows, ("gbar", "L_xi", "Q", "Q_matched_decay"))


def exp_discontinuity(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    op = build_operator(cfg.operator)
    g = build_data(cfg.data, 2)
    dom = build_moving_domain(cfg.domain)
    c = rotated_family_constant()
    below, above, rows = [], [], []
    for t0 in cfg.param("t_before"):
        pt = classify_boundary_point(dom, [0.0, t0], t0)
        v = homogenized_boundary_data(pt, op, g, cfg.cell()).value
        below.append(v)
        rows.append([repr(float(t0)), pt.case, f"{v:.10e}"])
    for t0 in cfg.param("t_after"):
        pt = classify_boundary_point(dom, [0.0, t0], t0)
        v = homogenized_boundary_data(pt, op, g, cfg.cell()).value
        above.append(v)
        rows.append([repr(float(t0)), pt.case, f"{v:.10e}"])
    tol = cfg.tol("spread", tol_scale)
    res = {"before": below, "after": above, "c": c}
    checks = [Check("spread of gbar over t0 < 0", max(below) - min(below), "<=", tol),
              Check("c/2 - max gbar over t0 < 0", c / 2 - max(below), ">=", 0.0),
              Check("min gbar over t0 > 0 - c", min(above) - c, ">=", 0.0),
              Check("gap between sides - c/2", min(above) - max(below) - c / 2, ">=", 0.0)]
    return Outcome(res, checks, rows, ("t0", "case", "gbar"))


def exp_barriers(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
    n = int(cfg.grid.get("samples", 500))
    seed = cfg.seed
    lam, Lam = float(cfg.param("lam")), float(cfg.param("Lam"))
    c0, C0, L, eps = (float(cfg.param(k)) for k in ("c0", "C0", "L", "eps"))
    tol = cfg.tol("residual", tol_scale)
    barriers = [
        make_slab_barrier(c0, C0, L, lam, Lam, 2),
        make_drift_barrier(c0, C0, L, lam, Lam, 2, eps, 1.0, 1.0),
        make_bottom_barrier(c0, C0, L, Lam, 2),
        make_singular(lam, Lam, 2),
    ]
    m1, m2 = singular_constants(lam, Lam, 2)
    d0 = 2 * lam / Lam
    delta = float(cfg.param("delta"))
    budget = delta**2 / (C0 * m2 * 2.0**d0 / m1 * m2)
    cyl = [(xj, tj, (budget / len(cfg.param("cylinders"))) ** (1.0 / d0) * 0.9) for xj, tj in cfg.param("cylinders")]
    agg = make_aggregate(cyl, C0, m1, m2, d0, lam, Lam, 2)
    barriers.append(agg)
    checks, rows, res = [], [], {"certificates": []}
    for b in barriers:
        cert = certify(b, samples=n, seed=seed, tol=tol)
        res["certificates"].append({"kind": cert.kind, "min_residual": cert.min_residual, "samples": cert.samples})
        rows.append([cert.kind, f"{cert.min_residual:.10e}", cert.samples])
        checks.append(Check(f"{cert.kind}: min discrete residual", cert.min_residual, ">=", -tol))
    defect = singular_scaling_defect(barriers[3], seed=seed)
    bounds = aggregate_bounds(agg, delta, samples=n, seed=seed)
    res.update(scaling_defect=defect, aggregate=bounds, m1=m1, m2=m2)
    checks += [Check("singular scaling identity: relative defect", defect, "<=", 1e-12),
               Check("aggregate: min on cylinders - C0", bounds["near_min"] - C0, ">=", 0.0),
               Check("aggregate: delta - max far away", delta - bounds["far_max"], ">=", 0.0)]
    return Outcome(res, checks, rows, ("kind", "min_residual", "samples"))


def _sweep_plan(cfg: ExperimentConfig, probes: list) -> SweepPlan:
    g = build_data(cfg.data, 1)
    dom = build_moving_domain(cfg.domain)
    return SweepPlan(dom, build_operator(cfg.operator), g, tuple(cfg.grid.get("eps_ladder", (1 / 4, 1 / 8, 1 / 16, 1 / 32))),
                     tuple(probes), width=float(cfg.grid.get("width", 4.0)), h_per_eps=int(cfg.grid.get("h_per_eps", 8)),
                     cell=cfg.cell())


def _ladder_checks(pid: str, devs: list, slack: float, final_tol: float) -> list:
    worst_ratio = max((b / a for a, b in zip(devs, devs[1:]) if a > 0), default=0.0)
    return [Check(f"{pid}: largest consecutive deviation ratio", worst_ratio, "<=", 1.0 + slack),
            Check(f"{pid}: final deviation", devs[-1], "<=", final_tol)]


def exp_sweep(kind: str):
    def run(cfg: ExperimentConfig, tol_scale: float) -> Outcome:
        if kind == "gamma2":
            probes = [Probe("sqrt_eps_R", "sqrt_eps_R", float(cfg.param("R")), t0=float(cfg.param("t0"))),
                      Probe("eps_R", "eps_R", float(cfg.param("R_eps")), t0=float(cfg.param("t0")))]
        else:
            probes = [Probe("bottom", "bottom", float(cfg.param("R")), x0=float(cfg.param("x0")))]
        plan = _sweep_plan(cfg, probes)
        start = time.perf_counter()
        res = run_sweep(plan)
        wall = time.perf_counter() - start
        slack, final = cfg.param("slack"), cfg.tol("final", tol_scale)
        main = probes[0].id
        devs = list(res.deviation[main].values())
        checks = _ladder_checks(main, devs, slack, final)
        if res.truncated:
            checks.append(Check("ladder entries dropped", float(len(res.truncated)), "<=", 0.0))
        checks.append(Check("max |u| - max |g|", max(res.max_abs_u.values()) - res.data_bound, "<=", 1e-12))
        if kind == "gamma2":
            ratio = min(res.spread["eps_R"][e] / max(res.spread["sqrt_eps_R"][e], 1e-300) for e in res.spread["eps_R"])
            checks.append(Check("variance of eps R probes over variance of sqrt(eps) R probes", ratio, ">=", 1.0))
        checks.append(Check("sweep runtime seconds", wall, "<=", 600.0, timing=True))
        rows = [[r["probe"], repr(r["eps"]), r["scaling"], repr(r["R"]), f"{r['value']:.10e}",
                 f"{r['reference']:.10e}", f"{r['deviation']:.10e}"] for r in res.rows]
        return Outcome(_clean(res.manifest()), checks, rows,
                       ("probe", "eps", "depth_scaling", "R", "value", "reference", "deviation"))

    return run


def _entry(name, tags, summary, runner, config, tolerances, params, data_dim=2) -> Entry:
    return Entry(name, tuple(tags), summary, runner, config, tolerances, params, data_dim)


P12 = {"kind": "pucci_plus", "lam": 1.0, "Lam": 2.0, "dim": 2}
SWEEP_DATA = {"sum": [0.5, {"mode": "sin", "k": [1], "amp": 0.3}, {"mode": "sin", "k": [0], "k_s": 1, "amp": 0.2}]}
SWEEP_DOMAIN = {"kind": "flat_moving", "nu": [1.0], "offset": [0.0, -1.0], "time_range": [0.0, 2.0]}

REGISTRY: dict[str, Entry] = {e.name: e for e in [
    _entry("linear-average", ["linear", "cell"], "heat tails equal the cell mean", exp_linear_average,
           {"operator": {"kind": "heat"}, "domain": {"kind": "halfplane", "nu": [0.0, 1.0], "c": 0.0},
            "data": [LATERAL, TEMPORAL]}, {"tail": 2e-3}, {"max_seconds": 120.0}),
    _entry("prop3.4-shift", ["cell", "shift"], "Gamma1 approximant tails do not depend on the shift",
           exp_prop34_shift,
           {"operator": P12, "domain": {"kind": "halfplane", "nu": [0.5773502691896258, 0.816496580927726], "c": 0.0},
            "data": {"sum": [{"mode": "sin", "k": [0, 1]}, {"mode": "cos", "k": [1, 0], "amp": 0.5},
                             {"mode": "sin", "k": [0, 0], "k_s": 1, "amp": 0.5}]}},
           {"shift": 2e-3}, {"shifts": [[[0.0, 0.0], 0.0], [[0.37, 0.37], 0.61]]}),
    _entry("prop3.7-profile", ["cell", "profile"], "moving-phase profile depends on z.nu + c s only",
           exp_profile,
           {"operator": P12, "domain": {"kind": "halfplane", "nu": [0.0, 1.0], "c": 1.0},
            "data": {"sum": [{"mode": "sin", "k": [0, 1]}, {"mode": "cos", "k": [1, 0], "amp": 0.5}]}},
           {"profile": 2e-3},
           {"equal_argument_pairs": [[[[0.0, 0.3], 0.0], [[0.1, 0.1], 0.2]]], "period_points": [0.25]}),
    _entry("prop3.9-trichotomy", ["cell", "pucci"], "P+ tail above, P- tail below the mean with a gap",
           exp_trichotomy,
           {"domain": {"kind": "halfplane", "nu": [0.0, 1.0], "c": 0.0}, "data": [LATERAL, TEMPORAL],
            "grid": {"n_lat": 64, "n_unit": 103}},
           {"tail": 2e-3}, {"lam": 1.0, "Lam": 2.0, "min_gap": 1e-2}),
    _entry("prop4.4-linear-L", ["linear", "cell", "profile"], "linear operators: gbar = L_xi = mean of m_xi",
           exp_linear_L,
           {"operator": {"kind": "linear_matrix", "matrix": [[2.0, 0.5], [0.5, 1.0]]},
            "data": {"sum": [0.3, {"mode": "sin", "k": [0, 1]}, {"mode": "cos", "k": [1, 1], "amp": 0.5}]}},
           {"identity": 3e-3}, {"xi": [1, 1], "c": 1.0}),
    _entry("prop4.5-discontinuity", ["cell", "discontinuity"], "gbar jumps where the normal turns irrational",
           exp_discontinuity,
           {"operator": {"kind": "rotated_family", "delta": 0.05, "K": 9},
            "domain": {"kind": "rotating_prop45", "time_range": [-1.0, 1.0]},
            "data": {"mode": "sin", "w": [0.0, 1.0]}},
           {"spread": 2e-3}, {"t_before": [-0.5, -0.3, -0.1], "t_after": [0.05, 0.1]}),
    _entry("prop4.6-invariant-gap", ["cell", "gap"], "L_xi vanishes while gbar stays above the kappa average",
           exp_invariant_gap,
           {"operator": {"kind": "max_trace", "Lam": 2.0}, "domain": {"kind": "halfplane", "nu": [0.0, 1.0], "c": 1.0},
            "data": {"mode": "sin", "w": [0.0, 1.0]}},
           {"gap": 2e-3}, {"eta": [1.0, 0.0], "min_Q": 0.02}),
    _entry("lemma3.6-shift", ["effop", "shift"], "effective operator identities and shift invariance",
           exp_lemma36, {"operator": P12, "domain": {"kind": "torus"}},
           {"constant": 1e-3, "harmonic": 5e-3, "shift": 1e-3},
           {"matrices": [[[1.0, 0.0], [0.0, -1.0]], [[0.3, 0.7], [0.7, -0.2]], [[-1.0, 0.2], [0.2, 0.5]]],
            "oscillating": [2.0, 1.0], "shift_matrix": [[1.0, 0.0], [0.0, 0.5]],
            "shifts": [[[0.0, 0.0], 0.0], [[0.37, 0.61], 0.0], [[0.5, 0.1], 0.0]]}),
    _entry("barrier-certificates", ["barriers"], "discrete supersolution certificates for every barrier",
           exp_barriers, {"domain": {"kind": "none"}, "grid": {"samples": 500}},
           {"residual": 1e-4},
           {"lam": 1.0, "Lam": 2.0, "c0": 0.5, "C0": 1.0, "L": 1.0, "eps": 0.01, "delta": 0.5,
            "cylinders": [[[0.2, 0.1], 0.3], [[-0.4, 0.5], 0.6], [[0.5, -0.5], 0.1]]}),
    _entry("bottom-B", ["cell", "bottom", "shift"], "bottom tails do not depend on the shift", exp_bottom,
           {"operator": P12, "domain": {"kind": "torus"},
            "data": {"sum": [{"mode": "sin", "k": [1, 0]}, {"mode": "cos", "k": [0, 1], "amp": 0.5}]}},
           {"shift": 1e-3}, {"x0": [0.5, 0.5], "shifts": [[0.0, 0.0], [0.41, 0.0]]}),
    _entry("sweep-gamma2", ["sweep", "linear"], "sqrt(eps) R probes approach gbar along the eps ladder",
           exp_sweep("gamma2"), {"operator": {"kind": "heat", "dim": 1}, "domain": SWEEP_DOMAIN, "data": SWEEP_DATA},
           {"final": 5e-3}, {"R": 3.0, "R_eps": 1.0, "t0": 1.0, "slack": 0.2}, data_dim=1),
    _entry("sweep-bottom", ["sweep", "bottom", "linear"], "bottom probes approach the bottom tail", exp_sweep("bottom"),
           {"operator": {"kind": "heat", "dim": 1}, "domain": SWEEP_DOMAIN, "data": SWEEP_DATA},
           {"final": 5e-3}, {"R": 0.02, "x0": 2.0, "slack": 0.2}, data_dim=1),
]}


def list_experiments(tag: str | None = None) -> list[Entry]:
    return [e for e in REGISTRY.values() if tag is None or tag in e.tags]


def format_table(entries: list[Entry]) -> str:
    lines = [f"{'name':<24} {'tags':<28} summary"]
    for e in entries:
        lines.append(f"{e.name:<24} {','.join(e.tags):<28} {e.summary}")
    return "\n".join(lines)


def run_config(cfg: ExperimentConfig, tol_scale: float = 1.0) -> tuple[ExperimentRecord, Outcome]:
    np.random.seed(cfg.seed)
    start = time.perf_counter()
    out = REGISTRY[cfg.name].runner(cfg, tol_scale)
    wall = time.perf_counter() - start
    rec = ExperimentRecord(cfg.hash(), __version__, cfg.name, cfg.seed, _clean(out.results), out.checks,
                           all(c.passed for c in out.checks), wall)
    return rec, out


def table_csv(out: Outcome) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(out.table_header)
    for r in out.table:
        w.writerow(r)
    return buf.getvalue()


def write_outputs(rec: ExperimentRecord, out: Outcome, cfg: ExperimentConfig, out_dir: Path) -> Path:
    d = out_dir / f"{rec.name}-{rec.config_hash[:12]}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.to_json())
    (d / "record.json").write_text(rec.to_json())
    (d / "summary.csv").write_text(rec.summary_csv())
    if out.table_header:
        (d / "table.csv").write_text(table_csv(out))
    return d


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("HOMOG_OUT") or "homog_out")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="homogbd", description="Boundary-layer homogenization experiments.")
    parser.add_argument("--out", help="output directory (default $HOMOG_OUT or ./homog_out)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for numerical libraries")
    parser.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance by this factor")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment config file")
    p_run.add_argument("config")
    p_list = sub.add_parser("list", help="list registered experiments")
    p_list.add_argument("--tag")
    p_rep = sub.add_parser("repro", help="run a registered experiment with its default config")
    p_rep.add_argument("name")
    args = parser.parse_args(argv)
    if args.threads < 1 or not args.tol_scale > 0:
        print("error: --threads must be >= 1 and --tol-scale > 0", file=sys.stderr)
        return EXIT_CONFIG
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    if args.cmd == "list":
        print(format_table(list_experiments(args.tag)))
        return EXIT_PASS
    try:
        if args.cmd == "run":
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                raise ConfigError(f"config: cannot read {args.config} ({exc.strerror})") from exc
            cfg = ExperimentConfig.from_json(text)
        else:
            if args.name not in REGISTRY:
                raise ConfigError(f"name: unknown experiment {args.name!r}")
            cfg = ExperimentConfig.from_dict({"name": args.name})
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rec, out = run_config(cfg, args.tol_scale)
    where = write_outputs(rec, out, cfg, _out_dir(args.out))
    for c in rec.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} {c.relation} {c.threshold:.6g}")
    print(f"record written to {where}")
    return EXIT_PASS if rec.passed else EXIT_FAIL
