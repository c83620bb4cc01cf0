"""Half-plane and torus cell problems and their boundary-layer tails."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate

from .data import Const, DataError, Datum, Mode, Sum
from .domains import BoundaryPoint, Direction, GeometryError, continued_fraction_approx
from .effop import EffectiveOperator, PreconditionError
from .operators import DirectionFrame, EllipticOperator, SymMatrix, evaluate, linear_trace, pucci_operator, rescaled_limit
from .scheme import GridFunction, Lattice, run_until, solve_periodic, solve_steady

__all__ = [
    "CellConfig",
    "HalfPlaneProblem",
    "HalfPlaneSolution",
    "TailResult",
    "ProfileF",
    "UnsupportedPointError",
    "solve_halfplane",
    "extract_tail",
    "profile_f",
    "profile_datum",
    "solve_R2",
    "homogenized_boundary_data",
    "m_xi_and_L_xi",
    "solve_bottom",
    "kappa_max_trace",
    "max_trace_gap_constant",
    "rotated_family_constant",
]


class UnsupportedPointError(ValueError):
    pass


@dataclass(frozen=True)
class CellConfig:
    """Discretization and relaxation controls shared by the cell solvers.

    Depths are in units of the problem's depth unit: the lateral period when
    the data or operator vary along the boundary, else the decay length of the
    time forcing.
    """

    n_lat: int = 32
    n_unit: int = 32
    depths: tuple = (1.0, 2.0, 3.0, 4.0)
    L_factor: float = 2.0
    relax_tol: float = 1e-7
    relax_flag_tol: float = 1e-4
    max_periods: int = 60
    snapshots: int = 16
    s_samples: int = 8
    approx_order: int = 2
    torus_res: int = 32
    horizon: float = 1.0
    bottom_res: int = 32
    bottom_time: float = 4.0
    bottom_tol: float = 1e-9
    bottom_chunk: float = 0.05

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> CellConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cell config fields {sorted(unknown)}")
        d = dict(d)
        if "depths" in d:
            d["depths"] = tuple(float(v) for v in d["depths"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class HalfPlaneProblem:
    """``v_t = F(D^2 v, y = x + z + c s nu, t + tau)`` in ``{x . nu > 0}`` with data on ``{x . nu = 0}``."""

    nu: Direction
    op: EllipticOperator
    bdata: Datum
    z: tuple | None = None
    tau: float = 0.0
    c: float = 0.0
    s_param: float = 0.0

    def __post_init__(self) -> None:
        d = self.nu.dim
        if self.op.dim != d or self.bdata.dim != d:
            raise GeometryError("normal, operator and data dimensions differ")
        z = (0.0,) * d if self.z is None else tuple(float(v) for v in np.atleast_1d(self.z))
        if len(z) != d:
            raise GeometryError("shift dimension differs from the normal")
        object.__setattr__(self, "z", z)

    @property
    def shift(self) -> np.ndarray:
        return np.asarray(self.z) + self.c * self.s_param * self.nu.nu


@dataclass
class TailResult:
    value: float
    upper: float
    lower: float
    osc_table: list
    fitted_decay: float
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dict__"):
        return {k: v for k, v in o.__dict__.items() if not k.startswith("_")}
    return str(o)


@dataclass
class HalfPlaneSolution:
    problem: HalfPlaneProblem
    final: GridFunction
    window: list
    lateral_period: float | None
    time_period: float | None
    depth_unit: float
    L: float
    relaxed: bool
    report: dict


def _combine_periods(a: float | None, b: float | None) -> float | None:
    if a is None:
        return b
    if b is None:
        return a
    r = Fraction(a / b).limit_denominator(64)
    if abs(float(r) - a / b) > 1e-9 * max(1.0, a / b):
        raise GeometryError("operator and data periods are incommensurate")
    return a * r.denominator


def _depends_on_cell(op: EllipticOperator) -> tuple[bool, bool]:
    """``(depends on y, depends on s)`` as declared by the operator."""
    if op.constant_coefficients:
        return False, False
    return True, not op.meta.get("time_independent", False)


def _geometry(prob: HalfPlaneProblem) -> tuple[float | None, float | None]:
    op_y, op_s = _depends_on_cell(prob.op)
    P = None
    if prob.nu.dim == 2:
        try:
            P = prob.bdata.line_period(prob.nu.tangent())
        except DataError as exc:
            raise GeometryError(f"data along the boundary is not periodic ({exc}); use a rational approximant") from exc
        if op_y:
            if not prob.nu.rational:
                raise GeometryError("an irrational normal needs a rational approximant for a periodic operator")
            P = _combine_periods(P, prob.nu.rep_norm)
    T = _combine_periods(prob.bdata.time_period(), 1.0 if op_s else None)
    return P, T


def _depth_unit(P: float | None, T: float | None, Lam: float) -> float:
    unit = 0.0
    if P is not None:
        unit = P
    if T is not None:
        unit = max(unit, 2.0 * math.sqrt(Lam * T / math.pi))
    return unit or 1.0


def _normal_operator(op: EllipticOperator, nu: np.ndarray) -> EllipticOperator:
    """``m -> F(m nu nu^T)`` for a constant-coefficient operator."""
    N = SymMatrix.outer(nu)
    ap, am = float(evaluate(op, N)), -float(evaluate(op, N.scale(-1.0)))
    if abs(ap - am) <= 1e-14 * max(ap, am):
        return linear_trace([ap], name="normal_restriction")
    if ap > am:
        return pucci_operator("+", am, ap, dim=1)
    return pucci_operator("-", ap, am, dim=1)


def _lattice_for(prob: HalfPlaneProblem, cfg: CellConfig, L: float | None, op: EllipticOperator | None = None):
    P, T = _geometry(prob)
    op = prob.op if op is None else op
    unit = _depth_unit(P, T, prob.op.Lam)
    L = cfg.L_factor * max(cfg.depths) * unit if L is None else L
    nu = prob.nu.nu
    if op.dim == 2:
        if P is not None:
            h, n_lat = P / cfg.n_lat, cfg.n_lat
        else:
            h, n_lat = unit / cfg.n_unit, 3
        n_dep = int(round(L / h)) + 1
        frame = DirectionFrame((prob.nu.tangent(), nu))
        lat = Lattice.build((n_lat, n_dep), h, op.Lam, [("periodic", "periodic"), ("dirichlet", "neumann_far")], frame)
    else:
        h = unit / cfg.n_unit
        n_dep = int(round(L / h)) + 1
        lat = Lattice.build((n_dep,), h, op.Lam, [("dirichlet", "neumann_far")], DirectionFrame((nu if nu.size == 1 else np.ones(1),)))
    return lat, P, T, unit, (lat.shape[-1] - 1) * h


def solve_halfplane(
    prob: HalfPlaneProblem,
    L: float | None = None,
    relax_time: float | None = None,
    cfg: CellConfig = CellConfig(),
) -> HalfPlaneSolution:
    """Solve the half-plane problem on ``{0 <= x . nu <= L}`` to its steady or time-periodic regime.

    Lateral faces are periodic with the period of the data and operator along
    the boundary; the far face mirrors.
    """
    op = prob.op
    reduce = prob.nu.dim == 2 and op.constant_coefficients and _geometry(prob)[0] is None
    if reduce:
        # laterally constant data and operator: the solution depends on the depth only
        op = _normal_operator(op, prob.nu.nu)
    lat, P, T, unit, L = _lattice_for(prob, cfg, L, op)
    shift = prob.shift
    tau = prob.tau
    data = prob.bdata
    nu = prob.nu.nu

    def lift(X):
        return X[..., :1] * nu if reduce else X

    def coords(X, t):
        return X, X + (0.0 if reduce else shift), t, t + tau

    def bc(X, t):
        return data(lift(X) + shift, t + tau)

    zero = GridFunction(lat, np.zeros(lat.shape), 0.0)
    if T is None:
        u, rep = solve_steady(zero, op, None, bc, coords=coords, t=0.0)
        relaxed = rep["iterations"] < 60
        return HalfPlaneSolution(prob, u, [u], P, None, unit, L, relaxed, dict(rep, periods=0))
    ts = T * np.arange(cfg.snapshots) / cfg.snapshots

    def bc_mean(X, t):
        return np.mean([bc(X, s) for s in ts], axis=0)

    u0, _ = solve_steady(zero, op, None, bc_mean, coords=coords, t=0.0)
    max_periods = cfg.max_periods if relax_time is None else max(2, int(math.ceil(relax_time / T)))
    st = solve_periodic(
        u0, op, None, bc, T, coords=coords, tol=cfg.relax_tol, max_periods=max_periods, snapshots=cfg.snapshots
    )
    last = st.changes[-1] if st.changes else 0.0
    rep = {"periods": st.periods, "last_change": last, "changes": st.changes}
    return HalfPlaneSolution(prob, st.final, st.window, P, T, unit, L, last <= cfg.relax_flag_tol, rep)


def _decay_fit(table: Sequence[tuple]) -> float:
    pts = [(r, o) for r, o in table if r > 0 and o > 1e-15]
    if len(pts) < 2:
        return float("nan")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def extract_tail(sol: HalfPlaneSolution, nu: Direction | None = None, depths: Sequence[float] | None = None,
                 cfg: CellConfig = CellConfig()) -> TailResult:
    """Medium limit of the solution along the normal.

    Each depth ``R`` (in depth units) probes the nodes with ``|x . nu - R| <= 1/2``
    unit over the whole lateral period and the stored time window.
    """
    if nu is not None and np.max(np.abs(nu.nu - sol.problem.nu.nu)) > 1e-12:
        raise GeometryError("probe normal differs from the solved problem's normal")
    depths = cfg.depths if depths is None else tuple(depths)
    if len(depths) < 2:
        raise ValueError("at least two depths are needed for a medium limit")
    unit = sol.depth_unit
    lat = sol.final.lattice
    xn = lat.axis_coords(lat.dim - 1)
    stack = np.stack([w.values for w in sol.window])
    table, samples = [], []
    for r in sorted(depths):
        R = r * unit
        if R > sol.L / 2 + 1e-12:
            raise ValueError(f"depth {R:g} exceeds half the slab height {sol.L:g}")
        sel = np.abs(xn - R) <= 0.5 * unit + 1e-12
        vals = stack[..., sel]
        table.append((R, float(vals.max() - vals.min())))
        samples.append(vals)
    deep = np.concatenate([s.ravel() for s in samples[-2:]])
    upper, lower = float(deep.max()), float(deep.min())
    flags = [] if sol.relaxed else ["unrelaxed"]
    diag = {
        "depth_unit": unit,
        "L": sol.L,
        "h": lat.h,
        "lateral_period": sol.lateral_period,
        "time_period": sol.time_period,
        "report": {k: v for k, v in sol.report.items() if k != "changes"},
    }
    return TailResult(0.5 * (upper + lower), upper, lower, table, _decay_fit(table), flags, diag)


# ----------------------------------------------------------------------------
# Case 2: profiles and the second cell problem


@dataclass
class ProfileF:
    nu: Direction
    c: float
    samples: list
    period: float | None
    arg_period: float | None
    tails: list = field(default_factory=list)
    interpolation_residual: float = float("nan")

    @property
    def mean(self) -> float:
        return float(np.mean([v for _, v in self.samples]))


def _lattice_frequencies(d: Datum) -> bool:
    for w in d.terms():
        k = np.asarray(w[:-1]) / (2 * math.pi)
        if np.any(np.abs(k - np.round(k)) > 1e-9):
            return False
    return True


def profile_arg_period(prob: HalfPlaneProblem) -> float | None:
    """Period of the profile in its argument ``z . nu + c s``."""
    op_y, _ = _depends_on_cell(prob.op)
    if prob.nu.rational and (op_y or _lattice_frequencies(prob.bdata)):
        return 1.0 / prob.nu.rep_norm
    if op_y:
        raise GeometryError("profile of a periodic operator needs a rational normal")
    try:
        return prob.bdata.line_period(prob.nu.nu)
    except DataError as exc:
        raise GeometryError(f"profile period undefined: {exc}") from exc


def profile_f(base: HalfPlaneProblem, s_samples: Sequence[float], cfg: CellConfig = CellConfig(),
              L: float | None = None, relax_time: float | None = None) -> ProfileF:
    """Tails of the traveling-shift problems at each slow time ``s``."""
    if base.c == 0:
        raise PreconditionError("a profile needs a nonzero boundary speed")
    arg_period = profile_arg_period(base)
    samples, tails = [], []
    for s in s_samples:
        sol = solve_halfplane(replace(base, s_param=float(s)), L, relax_time, cfg)
        tail = extract_tail(sol, cfg=cfg)
        samples.append((base.c * float(s), tail.value))
        tails.append(tail)
    period = None if arg_period is None else arg_period / abs(base.c)
    prof = ProfileF(base.nu, base.c, samples, period, arg_period, tails)
    prof.interpolation_residual = _interp_residual(prof)
    return prof


def uniform_s_samples(prob: HalfPlaneProblem, n: int) -> list:
    """``n`` slow times spread uniformly over one profile period."""
    ap = profile_arg_period(prob)
    if ap is None:
        return [0.0, 0.5]
    per = ap / abs(prob.c)
    return [per * j / n for j in range(n)]


def _check_uniform(prof: ProfileF) -> np.ndarray:
    args = np.array([a for a, _ in prof.samples])
    order = np.argsort(args)
    args = args[order]
    n = args.size
    if prof.arg_period is None:
        return order
    step = prof.arg_period / n
    if np.max(np.abs(np.diff(args) - step)) > 1e-9 * max(1.0, step):
        raise PreconditionError("profile samples must be uniform over exactly one period")
    return order


def _trig_terms(args, vals, period, direction, time_rate, dim):
    """Trigonometric interpolant of uniform samples as data ``sigma -> f(sigma)``.

    ``sigma = direction . y + time_rate * s``.
    """
    n = vals.size
    X = np.fft.rfft(vals) / n
    parts: list = [Const(float(X[0].real), dim)]
    a0 = float(args[0])
    for k in range(1, n // 2 + 1):
        c = X[k] * (1.0 if (n % 2 == 0 and k == n // 2) else 2.0)
        if abs(c) < 1e-15:
            continue
        w = 2 * math.pi * k / period
        phase = -w * a0
        wy = tuple(w * v for v in direction)
        parts.append(Mode("cos", wy, w * time_rate, float(c.real), phase))
        parts.append(Mode("sin", wy, w * time_rate, float(-c.imag), phase))
    return parts[0] if len(parts) == 1 else Sum(tuple(parts))


def profile_datum(prof: ProfileF, direction: Sequence[float] | None = None, time_rate: float = 0.0) -> Datum:
    """Interpolant of the profile in ``sigma = direction . y + time_rate * s``."""
    order = _check_uniform(prof)
    args = np.array([a for a, _ in prof.samples])[order]
    vals = np.array([v for _, v in prof.samples])[order]
    direction = (0.0,) if direction is None else tuple(direction)
    if prof.arg_period is None or np.ptp(vals) == 0.0:
        return Const(float(vals.mean()), len(direction))
    return _trig_terms(args, vals, prof.arg_period, direction, time_rate, len(direction))


def _interp_residual(prof: ProfileF) -> float:
    n = len(prof.samples)
    if prof.arg_period is None or n < 4 or n % 2:
        return float("nan")
    try:
        order = _check_uniform(prof)
    except PreconditionError:
        return float("nan")
    args = np.array([a for a, _ in prof.samples])[order]
    vals = np.array([v for _, v in prof.samples])[order]
    coarse = _trig_terms(args[::2], vals[::2], prof.arg_period, (1.0,), 0.0, 1)
    pred = coarse(args[1::2, None])
    return float(np.max(np.abs(pred - vals[1::2])))


def solve_R2(profile: ProfileF, effF: EffectiveOperator, L: float | None = None, cfg: CellConfig = CellConfig(),
             relax_time: float | None = None) -> TailResult:
    """Tail of the one-dimensional problem under the effective operator with data ``f(c t)``.

    The data are constant along the boundary, so the problem reduces to the
    depth variable and time.
    """
    op1 = effF.restricted(profile.nu.nu)
    datum = profile_datum(profile, (0.0,), profile.c)
    prob = HalfPlaneProblem(Direction(np.array([1.0]), (1,)), op1, datum)
    sol = solve_halfplane(prob, L, relax_time, cfg)
    tail = extract_tail(sol, cfg=cfg)
    tail.diagnostics["interpolation_residual"] = profile.interpolation_residual
    tail.diagnostics["restricted_operator"] = {"kind": op1.kind, "lam": op1.lam, "Lam": op1.Lam}
    return tail


# ----------------------------------------------------------------------------
# Boundary points


def _freeze_data(g, x0, t0) -> Datum:
    if isinstance(g, Datum):
        return g
    return g(x0, t0)


def homogenized_boundary_data(
    pt: BoundaryPoint,
    F: EllipticOperator,
    g,
    cfg: CellConfig = CellConfig(),
    z: Sequence[float] | None = None,
    tau: float = 0.0,
) -> TailResult:
    """Homogenized datum at a lateral boundary point.

    ``g`` is a datum or a callable ``(x0, t0) -> datum``.
    """
    if pt.case not in ("Gamma1", "Gamma2"):
        raise UnsupportedPointError(f"no cell problem for a point of type {pt.case!r}")
    op0 = rescaled_limit(F, pt.x0, pt.t0)
    g0 = _freeze_data(g, pt.x0, pt.t0)
    if pt.case == "Gamma1":
        nu = pt.nu
        prob = HalfPlaneProblem(nu, op0, g0, z, tau, 0.0)
        used, err = nu, 0.0
        try:
            _geometry(prob)
        except GeometryError:
            used = continued_fraction_approx(nu.nu, cfg.approx_order)
            err = float(np.linalg.norm(used.nu - nu.nu))
            prob = HalfPlaneProblem(used, op0, g0, z, tau, 0.0)
        tail = extract_tail(solve_halfplane(prob, cfg=cfg), cfg=cfg)
        tail.diagnostics.update(case="Gamma1", normal_used=used.nu.tolist(), normal_error=err)
        return tail
    base = HalfPlaneProblem(pt.nu, op0, g0, z, tau, pt.c)
    prof = profile_f(base, uniform_s_samples(base, cfg.s_samples), cfg)
    effF = EffectiveOperator(op0, cfg.torus_res, cfg.horizon)
    tail = solve_R2(prof, effF, cfg=cfg)
    tail.diagnostics.update(
        case="Gamma2",
        profile=[list(p) for p in prof.samples],
        profile_period=prof.period,
        profile_flags=sorted({f for t in prof.tails for f in t.flags}),
    )
    if any(t.flags for t in prof.tails):
        tail.flags = sorted(set(tail.flags) | {"profile_unrelaxed"})
    return tail


def m_xi_and_L_xi(
    xi: Direction,
    eta: Sequence[float],
    F: EllipticOperator,
    g,
    cfg: CellConfig = CellConfig(),
    x0=None,
    t0: float = 0.0,
) -> tuple[ProfileF, TailResult]:
    """Shifted-boundary profile ``m_xi`` and the tail ``L_xi`` of its effective extension."""
    if not xi.rational:
        raise GeometryError("xi must be rational")
    eta = np.asarray(eta, dtype=float)
    if abs(float(eta @ xi.nu)) > 1e-12 or abs(np.linalg.norm(eta) - 1.0) > 1e-12:
        raise GeometryError("eta must be a unit vector perpendicular to xi")
    op0 = rescaled_limit(F, x0, t0)
    g0 = _freeze_data(g, x0, t0)
    base = HalfPlaneProblem(xi, op0, g0, None, 0.0, 1.0)
    m = profile_f(base, uniform_s_samples(base, cfg.s_samples), cfg)
    op_bar = EffectiveOperator(op0, cfg.torus_res, cfg.horizon).as_operator()
    datum = profile_datum(m, tuple(eta), 0.0)
    prob = HalfPlaneProblem(xi, op_bar, datum)
    tail = extract_tail(solve_halfplane(prob, cfg=cfg), cfg=cfg)
    tail.diagnostics["m_xi"] = [list(p) for p in m.samples]
    return m, tail


# ----------------------------------------------------------------------------
# Bottom problem


def solve_bottom(x0, F: EllipticOperator, g, cfg: CellConfig = CellConfig(), z: Sequence[float] | None = None) -> TailResult:
    """Long-time value of the torus problem started from the data at ``s = 0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    op0 = rescaled_limit(F, x0, 0.0)
    g0 = _freeze_data(g, x0, 0.0)
    d = op0.dim
    z = np.zeros(d) if z is None else np.atleast_1d(np.asarray(z, dtype=float))
    op_y, _ = _depends_on_cell(op0)
    P = 1.0 if op_y else None
    for i in range(d):
        try:
            P = _combine_periods(P, g0.line_period(np.eye(d)[i]))
        except DataError as exc:
            raise GeometryError(f"bottom data is not periodic: {exc}") from exc
    P = 1.0 if P is None else P
    n = cfg.bottom_res
    lat = Lattice.build((n,) * d, P / n, op0.Lam, [("periodic", "periodic")] * d)
    X = lat.positions()
    u = GridFunction(lat, g0(X + z, 0.0), 0.0)

    def coords(Xs, t):
        return Xs, Xs + z, t, t

    table = [(0.0, float(np.ptp(u.values)))]
    while u.time < cfg.bottom_time - 1e-12 and table[-1][1] > cfg.bottom_tol:
        u, _ = run_until(u, op0, None, None, min(u.time + cfg.bottom_chunk, cfg.bottom_time), coords=coords)
        table.append((u.time, float(np.ptp(u.values))))
    upper, lower = float(u.values.max()), float(u.values.min())
    flags = [] if table[-1][1] <= cfg.relax_flag_tol else ["unrelaxed"]
    diag = {"final_time": u.time, "h": lat.h, "period": P, "z": z.tolist()}
    return TailResult(0.5 * (upper + lower), upper, lower, table, _decay_fit(table[1:]), flags, diag)


# ----------------------------------------------------------------------------
# Lower-bound constants from explicit subsolutions


def kappa_max_trace(y, t, Lam: float = 2.0, second_rate: str = "half") -> np.ndarray:
    """Maximum of two traveling waves below the one-dimensional ``max{m, Lam m}`` flow with data ``sin t``.

    ``second_rate`` selects the damping of the second wave: ``"half"`` uses
    ``exp(-y/2)``, ``"matched"`` uses ``exp(-y/sqrt 2)``.
    """
    k = 1.0 / math.sqrt(2.0 * Lam)
    damp = 0.5 if second_rate == "half" else 1.0 / math.sqrt(2.0)
    a = np.sin(t - k * y) * np.exp(-k * y)
    b = np.sin(t - y / math.sqrt(2.0)) * np.exp(-damp * y)
    return np.maximum(a, b)


def max_trace_gap_constant(Lam: float = 2.0, second_rate: str = "half") -> float:
    """Time average of ``kappa_max_trace`` at depth one."""
    val, _ = integrate.quad(lambda t: float(kappa_max_trace(1.0, t, Lam, second_rate)), 0.0, 2 * math.pi, limit=200)
    return val / (2 * math.pi)


def rotated_family_constant() -> float:
    """Average over one period of ``e^-1 [sin]_+ + e^-2 [sin]_-`` with ``[x]_- = min(x, 0)``."""

    def kappa(x):
        s = math.sin(x)
        return math.exp(-1.0) * max(s, 0.0) + math.exp(-2.0) * min(s, 0.0)

    val, _ = integrate.quad(kappa, 0.0, 2 * math.pi, points=[math.pi], limit=200)
    return val / (2 * math.pi)
