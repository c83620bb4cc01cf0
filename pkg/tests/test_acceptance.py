"""Acceptance criteria at their stated tolerances; each prints one PASS/FAIL line."""

import math
from functools import lru_cache

import numpy as np

from homogbd.operators import heat, max_trace_operator, pucci_operator, rotated_family_operator
from homogbd.pipeline import ExperimentConfig, run_config
from homogbd.scheme import DriftTerm, GridFunction, Lattice, run_until, step


@lru_cache(maxsize=None)
def run(name: str):
    rec, out = run_config(ExperimentConfig.from_dict({"name": name}))
    return rec, out.results


def timing(rec, prefix: str) -> list[float]:
    return [c.value for c in rec.checks if c.timing and c.name.startswith(prefix)]


def test_criterion_01_linear_average(verdict):
    rec, res = run("linear-average")
    walls = timing(rec, "datum")
    checks = []
    for i, label in enumerate(("lateral", "time")):
        tail = res[f"datum{i}"]["tail"]
        checks.append((f"{label} heat tail {tail:.2e} within 2e-3 of mean 0", abs(tail - 0.0) <= 2e-3))
    checks.append((f"max seconds per tail {max(walls):.1f} <= 120", len(walls) == 2 and max(walls) <= 120.0))
    assert verdict(1, "linear-average identity", checks)


def test_criterion_02_trichotomy(verdict):
    rec, res = run("prop3.9-trichotomy")
    grid = ExperimentConfig.from_dict({"name": "prop3.9-trichotomy"}).grid
    checks = [(f"h = 1/{grid['n_lat']} lateral", grid["n_lat"] >= 64)]
    for i, label in enumerate(("lateral", "time")):
        r = res[f"datum{i}"]
        checks += [
            (f"{label} P+ tail {r['P+']:.4f} >= -2e-3", r["P+"] >= -2e-3),
            (f"{label} P- tail {r['P-']:.4f} <= 2e-3", r["P-"] <= 2e-3),
            (f"{label} gap {r['gap']:.4f} >= 1e-2", r["gap"] >= 1e-2),
        ]
    assert verdict(2, "Pucci trichotomy", checks)


def test_criterion_03_shift_independence(verdict):
    _, lateral = run("prop3.4-shift")
    _, bottom = run("bottom-B")
    checks = [(f"approximant tail spread {lateral['spread']:.2e} <= 2e-3", lateral["spread"] <= 2e-3),
              (f"bottom tail spread {bottom['spread']:.2e} <= 1e-3", bottom["spread"] <= 1e-3)]
    assert verdict(3, "shift independence", checks)


def test_criterion_04_profile(verdict):
    _, res = run("prop3.7-profile")
    pair = max(abs(a - b) for a, b in res["pairs"])
    per = max(abs(a - b) for a, b in res["periodicity"])
    checks = [(f"equal-argument difference {pair:.2e} <= 2e-3", pair <= 2e-3),
              (f"period shift difference {per:.2e} <= 2e-3", per <= 2e-3)]
    assert verdict(4, "profile structure", checks)


def test_criterion_05_effective_operator(verdict):
    _, res = run("lemma3.6-shift")
    const = res["constant_max_deviation"]
    osc = res["oscillating_1d"]["effective"]
    harmonic = math.sqrt(3.0)
    spread = max(res["shift_values"]) - min(res["shift_values"])
    checks = [(f"constant |Fbar - F| {const:.2e} <= 1e-3", const <= 1e-3),
              (f"oscillating coefficient {osc:.5f} within 5e-3 of sqrt 3", abs(osc - harmonic) <= 5e-3),
              (f"shift spread {spread:.2e} <= 1e-3", spread <= 1e-3)]
    assert verdict(5, "effective-operator identities", checks)


def test_criterion_06_linear_identity(verdict):
    _, res = run("prop4.4-linear-L")
    a = abs(res["gbar"] - res["L_xi"])
    b = abs(res["L_xi"] - res["mean_m_xi"])
    checks = [(f"|gbar - L_xi| {a:.2e} <= 3e-3", a <= 3e-3), (f"|L_xi - mean m_xi| {b:.2e} <= 3e-3", b <= 3e-3)]
    assert verdict(6, "linear gbar = L_xi = mean m_xi", checks)


def kappa_average_oracle(Lam: float, n: int = 200_000) -> float:
    """Rectangle rule over one period of the two explicit subsolutions at depth one."""
    t = 2 * math.pi * np.arange(n) / n
    k = 1.0 / math.sqrt(2.0 * Lam)
    first = np.sin(t - k) * math.exp(-k)
    second = np.sin(t - 1.0 / math.sqrt(2.0)) * math.exp(-0.5)
    return float(np.mean(np.maximum(first, second)))


def test_criterion_07_invariant_gap(verdict):
    _, res = run("prop4.6-invariant-gap")
    Q = res["Q"]
    oracle = kappa_average_oracle(2.0)
    checks = [(f"|L_xi| {abs(res['L_xi']):.2e} <= 2e-3", abs(res["L_xi"]) <= 2e-3),
              (f"gbar {res['gbar']:.4f} >= Q - 2e-3 = {Q - 2e-3:.4f}", res["gbar"] >= Q - 2e-3),
              (f"Q {Q:.6f} > 0.02", Q > 0.02),
              (f"Q matches independent quadrature {oracle:.6f}", abs(Q - oracle) <= 1e-6)]
    assert verdict(7, "invariant gap", checks)


def test_criterion_08_discontinuity(verdict):
    _, res = run("prop4.5-discontinuity")
    c = res["c"]
    closed = (math.exp(-1.0) - math.exp(-2.0)) / math.pi
    before, after = res["before"], res["after"]
    spread = max(before) - min(before)
    gap = min(after) - max(before)
    checks = [(f"c {c:.6f} matches closed form {closed:.6f}", abs(c - closed) <= 1e-10),
              (f"three points before the turn, spread {spread:.2e} <= 2e-3", len(before) == 3 and spread <= 2e-3),
              (f"max before {max(before):.4f} < c/2", max(before) < c / 2),
              (f"min after {min(after):.4f} > c", min(after) > c),
              (f"gap {gap:.4f} >= c/2", gap >= c / 2)]
    assert verdict(8, "discontinuity at the irrational turn", checks)


def test_criterion_09_barriers(verdict):
    _, res = run("barrier-certificates")
    certs = res["certificates"]
    agg = res["aggregate"]
    checks = [(f"{c['kind']} min residual {c['min_residual']:.2e} >= -1e-4", c["min_residual"] >= -1e-4)
              for c in certs]
    checks += [(f"five barrier kinds certified ({len(certs)})", len({c['kind'] for c in certs}) == 5),
               (f"scaling defect {res['scaling_defect']:.1e} at rounding level", res["scaling_defect"] <= 1e-12),
               (f"min on cylinders {agg['near_min']:.3f} >= C0 {agg['C0']}", agg["near_min"] >= agg["C0"]),
               (f"max far away {agg['far_max']:.3f} <= delta {agg['delta']}",
                agg["far_samples"] > 0 and agg["far_max"] <= agg["delta"])]
    assert verdict(9, "barrier certificates", checks)


def ladder_ok(devs: list[float], slack: float = 0.2) -> bool:
    return all(b <= (1.0 + slack) * a for a, b in zip(devs, devs[1:]))


def test_criterion_10_sweeps(verdict):
    rec_l, lat = run("sweep-gamma2")
    rec_b, bot = run("sweep-bottom")
    dl = list(lat["deviation"]["sqrt_eps_R"].values())
    db = list(bot["deviation"]["bottom"].values())
    total = rec_l.wall_clock + rec_b.wall_clock
    checks = [(f"sqrt(eps) R deviations {[f'{d:.2e}' for d in dl]} non-increasing within 20%", ladder_ok(dl)),
              (f"final lateral deviation {dl[-1]:.2e} <= 5e-3", dl[-1] <= 5e-3),
              (f"bottom deviations {[f'{d:.1e}' for d in db]} non-increasing within 20%", ladder_ok(db)),
              (f"final bottom deviation {db[-1]:.2e} <= 5e-3", db[-1] <= 5e-3),
              ("no ladder entries dropped", not lat["truncated"] and not bot["truncated"]),
              (f"total sweep runtime {total:.0f}s <= 600s", total <= 600.0)]
    assert verdict(10, "sweep behaviour", checks)


def _random_trials(n: int, seed: int = 20261015) -> tuple[int, int, float]:
    rng = np.random.default_rng(seed)
    ops = [pucci_operator("+", 1.0, 2.0), pucci_operator("-", 1.0, 3.0), heat(2), max_trace_operator(2.0),
           rotated_family_operator(0.05, 5)]
    per = Lattice.build((6, 6), 0.1, 3.0, (("periodic", "periodic"),) * 2, drift_bound=2.0)
    box = Lattice.build((6, 6), 0.1, 3.0, (("dirichlet", "dirichlet"),) * 2, drift_bound=2.0)
    mono = comp = 0
    worst = 0.0
    for trial in range(n):
        op = ops[trial % len(ops)]
        b = rng.uniform(-1.0, 1.0, 2)
        drift = DriftTerm(b, 2.0)
        u = rng.normal(size=per.shape)
        bump = rng.uniform(0.0, 1.0, size=per.shape) * (rng.uniform(size=per.shape) < 0.5)
        lo = step(GridFunction(per, u), op, drift)
        hi = step(GridFunction(per, u + bump), op, drift)
        gap = float(np.min(hi.values - lo.values))
        worst = min(worst, gap)
        mono += gap < -1e-12
        # comparison over several steps with ordered Dirichlet data
        base, lift = rng.normal(), rng.uniform(0.0, 0.5)
        a = GridFunction(box, rng.normal(size=box.shape))
        c = GridFunction(box, a.values + rng.uniform(0.0, 1.0, size=box.shape))
        for _ in range(3):
            a = step(a, op, drift, lambda X, t, v=base: np.full(len(X), v))
            c = step(c, op, drift, lambda X, t, v=base + lift: np.full(len(X), v))
        gap = float(np.min(c.values - a.values))
        worst = min(worst, gap)
        comp += gap < -1e-12
    return mono, comp, worst


def _heat_kernel_error(n_per_unit: int) -> float:
    t0, t1, half = 0.1, 0.2, 2.0

    def kernel(X, t):
        return np.exp(-np.sum(X * X, axis=-1) / (4 * t)) / (4 * math.pi * t)

    n = int(2 * half * n_per_unit) + 1
    lat = Lattice.build((n, n), 1.0 / n_per_unit, 1.0, (("dirichlet", "dirichlet"),) * 2, origin=(-half, -half))
    X = lat.positions()
    u, _ = run_until(GridFunction(lat, kernel(X, t0), t0), heat(2), None, kernel, t1)
    return float(np.max(np.abs(u.values - kernel(X, t1))))


def test_criterion_11_scheme(verdict):
    mono, comp, worst = _random_trials(10_000)
    e1, e2 = _heat_kernel_error(8), _heat_kernel_error(16)
    order = math.log2(e1 / e2)
    checks = [(f"monotonicity violations {mono} of 10^4", mono == 0),
              (f"comparison violations {comp} of 10^4 (worst gap {worst:.1e})", comp == 0),
              (f"heat-kernel errors {e1:.2e}, {e2:.2e}, order {order:.2f} >= 1.8", order >= 1.8)]
    assert verdict(11, "scheme properties", checks)
