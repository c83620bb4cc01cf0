"""Full oscillatory problem on a moving one-dimensional domain across an epsilon ladder."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cell import CellConfig, homogenized_boundary_data, solve_bottom
from .data import Datum
from .domains import BoundaryPoint, Direction, GeometryError, MovingDomain
from .effop import EffectiveOperator
from .operators import DirectionFrame, EllipticOperator, rescaled_limit
from .scheme import DriftTerm, GridFunction, Lattice, run_until

__all__ = [
    "SweepError",
    "Probe",
    "SweepPlan",
    "SweepResult",
    "run_sweep",
    "interior_check",
    "InteriorReport",
]

log = logging.getLogger(__name__)

SCALINGS = ("eps_R", "sqrt_eps_R", "bottom")


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class Probe:
    """A probe at depth ``eps R`` or ``sqrt(eps) R`` from the lower boundary, or at time ``eps R``.

    Lateral probes sample one slow period ``eps / |c|`` starting at ``t0``.
    Bottom probes sample eight points spread over one micro-cell right of ``x0``.
    """

    id: str
    scaling: str
    R: float
    t0: float = 1.0
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.scaling not in SCALINGS:
            raise SweepError(f"unknown depth scaling {self.scaling!r}")
        if not self.R > 0:
            raise SweepError("R must be positive")


@dataclass(frozen=True, eq=False)
class SweepPlan:
    """``u_t = F(u_xx, x, x/eps, t, t/eps^2)`` on ``{b(t) < x . nu < b(t) + width}``.

    Boundary and initial data are ``macro(x, t) + g(x/eps, t/eps^2)``.
    """

    domain: MovingDomain
    F: EllipticOperator
    g: Datum
    eps_ladder: tuple
    probes: tuple
    width: float = 4.0
    h_per_eps: int = 8
    macro: Callable | None = None
    n_window: int = 32
    max_work: float = 2e9
    cell: CellConfig = field(default_factory=lambda: CellConfig(n_unit=32))

    def __post_init__(self) -> None:
        if self.domain.kind != "flat_moving" or self.domain.dim != 1:
            raise SweepError("sweeps run on one-dimensional flat moving domains")
        if self.F.dim != 1 or self.g.dim != 1:
            raise SweepError("operator and data must be one-dimensional")
        eps = tuple(float(e) for e in self.eps_ladder)
        if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise SweepError("eps_ladder must be positive and strictly decreasing")
        if self.h_per_eps < 4:
            raise SweepError("the grid must resolve the micro-cell: h <= eps / 4")
        object.__setattr__(self, "eps_ladder", eps)
        object.__setattr__(self, "probes", tuple(self.probes))

    @property
    def nu(self) -> float:
        return float(self.domain.nu[0])

    def b(self, t: float) -> float:
        return self.domain.b(t)

    def speed(self, t: float) -> float:
        return self.domain.speed_law(t)

    def speed_bound(self, t_end: float) -> float:
        return max(abs(self.speed(t)) for t in np.linspace(self.domain.time_range[0], t_end, 64))

    def macro_value(self, x, t):
        if self.macro is None:
            return 0.0
        return self.macro(x, t)

    def data(self, x: np.ndarray, t: float, eps: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.macro_value(x, t) + self.g(x[..., None] / eps, t / eps**2)

    def data_bound(self) -> float:
        return float(sum(abs(a) for a in self.g.terms().values()))


@dataclass
class SweepResult:
    rows: list
    references: dict
    deviation: dict
    cauchy: dict
    spread: dict
    max_abs_u: dict
    data_bound: float
    truncated: list
    wall: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe", "eps", "depth_scaling", "R", "value", "reference", "deviation"])
        for r in self.rows:
            w.writerow([r["probe"], repr(r["eps"]), r["scaling"], repr(r["R"]), f"{r['value']:.12e}",
                        f"{r['reference']:.12e}", f"{r['deviation']:.12e}"])
        return buf.getvalue()

    def manifest(self) -> dict:
        return {
            "references": self.references,
            "deviation": {k: v for k, v in self.deviation.items()},
            "cauchy": self.cauchy,
            "spread": self.spread,
            "max_abs_u": self.max_abs_u,
            "data_bound": self.data_bound,
            "truncated": self.truncated,
        }


def _boundary_points(plan: SweepPlan, t: float) -> tuple[BoundaryPoint, BoundaryPoint]:
    nu, c = plan.nu, plan.speed(t)
    if c == 0:
        raise GeometryError("the lateral probes need a moving boundary")
    lo = BoundaryPoint(np.array([plan.b(t) * nu]), t, Direction(np.array([nu]), (int(nu),)), c, "Gamma2")
    hi = BoundaryPoint(np.array([(plan.b(t) + plan.width) * nu]), t, Direction(np.array([-nu]), (-int(nu),)), -c, "Gamma2")
    return lo, hi


def _references(plan: SweepPlan) -> dict:
    refs = {}
    for p in plan.probes:
        if p.scaling == "bottom":
            x = plan.b(0.0) * plan.nu + p.x0
            tail = solve_bottom(np.array([x]), plan.F, plan.g, plan.cell)
            refs[p.id] = tail.value
        else:
            lo, _ = _boundary_points(plan, p.t0)
            tail = homogenized_boundary_data(lo, plan.F, plan.g, plan.cell)
            refs[p.id] = tail.value
    return refs


def _lattice(plan: SweepPlan, eps: float, t_end: float) -> Lattice:
    h0 = eps / plan.h_per_eps
    n = int(math.ceil(plan.width / h0)) + 1
    h = plan.width / (n - 1)
    bmax = plan.speed_bound(t_end)
    return Lattice.build((n,), h, plan.F.Lam, [("dirichlet", "dirichlet")], DirectionFrame((np.array([plan.nu]),)),
                         drift_bound=bmax)


def _solve_eps(plan: SweepPlan, eps: float, probes: list, t_end: float, track: bool = True):
    """Run one ladder entry in the frame attached to the lower boundary."""
    lat = _lattice(plan, eps, t_end)
    nu = plan.nu

    def phys(X, t):
        return X[..., 0] + plan.b(t) * nu

    def coords(X, t):
        x = phys(X, t)[..., None]
        return x, x / eps, t, t / eps**2

    def bc(X, t):
        return plan.data(phys(X, t), t, eps)

    bmax = plan.speed_bound(t_end)
    drift = DriftTerm(lambda t: np.array([plan.speed(t) * nu]), bmax + 1e-15)
    t0 = plan.domain.time_range[0]
    X = lat.positions()
    u = GridFunction(lat, bc(X, t0), t0)
    peak = [float(np.max(np.abs(u.values)))]

    def cb(v: GridFunction) -> None:
        peak[0] = max(peak[0], float(np.max(np.abs(v.values))))

    u, recs = run_until(u, plan.F, drift, bc, t_end, probes, coords=coords, callback=cb if track else None,
                        run_id=f"eps={eps:g}")
    return u, recs, peak[0], lat


def _probe_points(plan: SweepPlan, p: Probe, eps: float) -> list:
    nu = plan.nu
    if p.scaling == "bottom":
        t = plan.domain.time_range[0] + eps * p.R
        return [(np.array([(p.x0 + j * eps / 8.0) * nu]), t) for j in range(8)]
    depth = eps * p.R if p.scaling == "eps_R" else math.sqrt(eps) * p.R
    if depth >= plan.width / 2:
        raise SweepError(f"probe {p.id} at depth {depth:g} is past the middle of the domain")
    period = eps / abs(plan.speed(p.t0))
    return [(np.array([depth * nu]), p.t0 + period * j / plan.n_window) for j in range(plan.n_window + 1)]


def run_sweep(plan: SweepPlan, references: dict | None = None) -> SweepResult:
    """Probe values, deviations from the homogenized data and consecutive-eps differences."""
    import time

    refs = _references(plan) if references is None else dict(references)
    rows, dev, spread, peaks, truncated, wall = [], {p.id: {} for p in plan.probes}, {p.id: {} for p in plan.probes}, {}, [], {}
    for eps in plan.eps_ladder:
        pts = {p.id: _probe_points(plan, p, eps) for p in plan.probes}
        t_end = max(t for v in pts.values() for _, t in v)
        lat = _lattice(plan, eps, t_end)
        work = lat.size * (t_end - plan.domain.time_range[0]) / lat.dt
        if work > plan.max_work:
            log.warning("eps=%g exceeds the work budget; ladder truncated", eps)
            truncated.append(eps)
            break
        flat = [pt for p in plan.probes for pt in pts[p.id]]
        start = time.perf_counter()
        _, recs, peak, _ = _solve_eps(plan, eps, flat, t_end)
        wall[repr(eps)] = time.perf_counter() - start
        peaks[repr(eps)] = peak
        by_key = {(round(r.t, 14), r.x): r.value for r in recs}
        for p in plan.probes:
            vals = np.array([by_key[(round(t, 14), tuple(X.tolist()))] for X, t in pts[p.id]])
            macro = np.array([plan.macro_value(float(X[0]) + plan.b(t) * plan.nu, t) for X, t in pts[p.id]])
            ref = refs[p.id] + macro
            errs = np.abs(vals - ref)
            k = int(np.argmax(errs))
            dev[p.id][repr(eps)] = float(errs[k])
            spread[p.id][repr(eps)] = float(np.var(vals))
            rows.append(dict(probe=p.id, eps=eps, scaling=p.scaling, R=p.R, value=float(vals[k]),
                             reference=float(ref[k]), deviation=float(errs[k])))
    cauchy = {}
    for pid, d in dev.items():
        vals = list(d.values())
        cauchy[pid] = [abs(b - a) for a, b in zip(vals, vals[1:])]
    return SweepResult(rows, refs, dev, cauchy, spread, peaks, plan.data_bound(), truncated, wall)


# ----------------------------------------------------------------------------
# Interior homogenization


@dataclass
class InteriorReport:
    points: list
    deviation: dict
    cauchy: list
    effective: dict


def interior_check(plan: SweepPlan, interior_points: Sequence[tuple], ref_per_width: int = 256) -> InteriorReport:
    """Compare the oscillatory solution at interior points with the homogenized solution.

    The homogenized problem uses the effective operator and the homogenized
    lateral and initial data; it is solved once on a grid of ``ref_per_width``
    cells across the domain.
    """
    t0 = plan.domain.time_range[0]
    pts = []
    for x, t in interior_points:
        xi = (float(x) - plan.b(t) * plan.nu) * plan.nu
        dist = min(xi, plan.width - xi, math.sqrt(max(t - t0, 0.0)))
        if dist < 0.1:
            raise SweepError(f"interior point ({x}, {t}) is within parabolic distance 0.1 of the boundary")
        pts.append((np.array([xi * plan.nu]), float(t)))
    t_end = max(t for _, t in pts)
    lo, hi = _boundary_points(plan, t0)
    g_lo = homogenized_boundary_data(lo, plan.F, plan.g, plan.cell).value
    g_hi = homogenized_boundary_data(hi, plan.F, plan.g, plan.cell).value
    g_bot = solve_bottom(np.array([plan.b(t0) * plan.nu]), plan.F, plan.g, plan.cell).value
    base = rescaled_limit(plan.F, None, t0)
    eff = EffectiveOperator(base, plan.cell.torus_res, plan.cell.horizon).restricted(np.array([1.0]))
    nu = plan.nu
    bmax = plan.speed_bound(t_end)
    drift = DriftTerm(lambda t: np.array([plan.speed(t) * nu]), bmax + 1e-15)

    def phys(X, t):
        return X[..., 0] + plan.b(t) * nu

    def bc(X, t):
        xi = X[..., 0] * nu
        side = np.where(xi < plan.width / 2, g_lo, g_hi)
        return plan.macro_value(phys(X, t), t) + side

    def reference(cells: int) -> dict:
        lat = Lattice.build((cells + 1,), plan.width / cells, eff.Lam, [("dirichlet", "dirichlet")],
                            DirectionFrame((np.array([nu]),)), drift_bound=bmax)
        X = lat.positions()
        u0 = np.where(lat.dirichlet_mask(), bc(X, t0), plan.macro_value(phys(X, t0), t0) + g_bot)
        _, recs = run_until(GridFunction(lat, u0, t0), eff, drift, bc, t_end, pts)
        return {(round(r.t, 14), r.x): r.value for r in recs}

    # the upwinded drift is first order in h; two grids cancel the leading term
    coarse, fine = reference(ref_per_width), reference(2 * ref_per_width)
    ref = {k: 2.0 * fine[k] - coarse[k] for k in fine}
    dev = {}
    for eps in plan.eps_ladder:
        _, recs, _, _ = _solve_eps(plan, eps, pts, t_end, track=False)
        dev[repr(eps)] = max(abs(r.value - ref[(round(r.t, 14), r.x)]) for r in recs)
    vals = list(dev.values())
    effective = {"kind": eff.kind, "lam": eff.lam, "Lam": eff.Lam, "g_lo": g_lo, "g_hi": g_hi, "g_bottom": g_bot}
    return InteriorReport([(float(X[0]), t) for X, t in pts], dev, [abs(b - a) for a, b in zip(vals, vals[1:])],
                          effective)


def result_json(res: SweepResult) -> str:
    return json.dumps(res.manifest(), sort_keys=True)
