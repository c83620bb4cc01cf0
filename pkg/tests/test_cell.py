import math

import numpy as np
import pytest

from homogbd.cell import (
    CellConfig,
    HalfPlaneProblem,
    UnsupportedPointError,
    extract_tail,
    homogenized_boundary_data,
    kappa_max_trace,
    m_xi_and_L_xi,
    max_trace_gap_constant,
    rotated_family_constant,
    solve_bottom,
    solve_halfplane,
)
from homogbd.data import Const, Mode, Sum, parse_datum
from homogbd.domains import BoundaryPoint, Direction, GeometryError, rationality
from homogbd.operators import heat, linear_trace, pucci_operator

FAST = CellConfig(n_lat=16, n_unit=16)
E2 = Direction.axis(1)
P12 = pucci_operator("+", 1.0, 2.0)
M12 = pucci_operator("-", 1.0, 2.0)


def tail(op, g, nu=E2, cfg=FAST, **kw):
    return extract_tail(solve_halfplane(HalfPlaneProblem(nu, op, g, **kw), cfg=cfg), cfg=cfg)


def test_heat_lateral_profile_matches_exponential():
    g = Sum((Const(0.3), Mode.lattice("sin", [1, 0])))
    sol = solve_halfplane(HalfPlaneProblem(E2, heat(2), g), cfg=FAST)
    lat = sol.final.lattice
    X = lat.positions()
    exact = 0.3 + np.sin(2 * math.pi * X[..., 0]) * np.exp(-2 * math.pi * X[..., 1])
    assert float(np.max(np.abs(sol.final.values - exact))) < 1e-2
    t = extract_tail(sol, cfg=FAST)
    assert t.value == pytest.approx(0.3, abs=1e-3)
    assert t.upper >= t.value >= t.lower and not t.flags


def test_heat_time_forcing_tail_is_mean():
    g = Sum((Const(0.2), parse_datum({"mode": "sin", "k": [0, 0], "k_s": 1}, 2)))
    assert tail(heat(2), g).value == pytest.approx(0.2, abs=2e-3)


def test_constant_data_gives_constant_tail():
    for op in (heat(2), P12, M12):
        assert tail(op, Const(0.7)).value == pytest.approx(0.7, abs=1e-9)


def test_translation_invariance_and_order():
    g = Mode.lattice("sin", [1, 0])
    base = tail(P12, g).value
    assert tail(P12, Sum((g, Const(1.0)))).value == pytest.approx(base + 1.0, abs=1e-9)
    assert tail(M12, g).value <= base


def test_pucci_sides_of_the_mean():
    g = Mode.lattice("sin", [1, 0])
    assert tail(P12, g).value > 1e-2
    assert tail(M12, g).value < -1e-2


def test_extract_tail_validation():
    sol = solve_halfplane(HalfPlaneProblem(E2, heat(2), Const(1.0)), cfg=FAST)
    with pytest.raises(ValueError):
        extract_tail(sol, depths=(1.0,))
    with pytest.raises(ValueError):
        extract_tail(sol, depths=(1.0, 100.0))
    with pytest.raises(GeometryError):
        extract_tail(sol, nu=Direction.axis(0))


def test_problem_dimension_checks():
    with pytest.raises(GeometryError):
        HalfPlaneProblem(E2, heat(1), Const(1.0))
    with pytest.raises(GeometryError):
        HalfPlaneProblem(E2, heat(2), Const(1.0), z=(0.0,))


def test_cell_config_round_trip():
    cfg = CellConfig(n_lat=24, depths=(1.0, 2.0))
    assert CellConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        CellConfig.from_dict({"n_lattice": 3})


def test_unsupported_point():
    pt = BoundaryPoint(np.zeros(2), 0.0, E2, 0.0, "neither")
    with pytest.raises(UnsupportedPointError):
        homogenized_boundary_data(pt, heat(2), Const(1.0), FAST)


def test_gamma1_linear_is_mean():
    nu = rationality(np.array([1.0, math.sqrt(2.0)]) / math.sqrt(3.0))
    pt = BoundaryPoint(np.zeros(2), 0.0, nu, 0.0, "Gamma1")
    g = Sum((Const(0.25), Mode.lattice("sin", [0, 1])))
    r = homogenized_boundary_data(pt, heat(2), g, FAST)
    assert r.value == pytest.approx(0.25, abs=2e-3)
    assert r.diagnostics["case"] == "Gamma1"


def test_gamma2_linear_is_mean():
    pt = BoundaryPoint(np.zeros(2), 0.0, E2, 1.0, "Gamma2")
    g = Sum((Const(-0.1), Mode.lattice("sin", [0, 1]), Mode.lattice("cos", [1, 0], amp=0.5)))
    r = homogenized_boundary_data(pt, heat(2), g, FAST)
    assert r.value == pytest.approx(-0.1, abs=2e-3)


def test_linear_identity_small():
    xi = Direction.from_integer((1, 1))
    op = linear_trace([2.0, 1.0])
    g = Sum((Const(0.3), Mode.lattice("sin", [0, 1])))
    m, L = m_xi_and_L_xi(xi, xi.tangent(), op, g, FAST)
    assert L.value == pytest.approx(m.mean, abs=3e-3)
    assert m.mean == pytest.approx(0.3, abs=3e-3)


def test_m_xi_validation():
    with pytest.raises(GeometryError):
        m_xi_and_L_xi(rationality(np.array([1.0, math.sqrt(2.0)]) / math.sqrt(3.0)), [1.0, 0.0], heat(2), Const(1.0))
    with pytest.raises(GeometryError):
        m_xi_and_L_xi(E2, [1.0, 1.0], heat(2), Const(1.0))


def test_bottom_heat_is_mean_and_shift_free():
    g = Sum((Const(0.4), Mode.lattice("sin", [1, 0]), Mode.lattice("cos", [0, 1], amp=0.5)))
    a = solve_bottom([0.5, 0.5], heat(2), g)
    b = solve_bottom([0.5, 0.5], heat(2), g, z=[0.41, 0.0])
    assert a.value == pytest.approx(0.4, abs=1e-6)
    assert a.value == pytest.approx(b.value, abs=1e-6)


def test_bottom_pucci_above_mean():
    g = Mode.lattice("sin", [1, 0])
    assert solve_bottom([0.0, 0.0], P12, g).value > 0.0


def test_rotated_family_constant_closed_form():
    assert rotated_family_constant() == pytest.approx((math.exp(-1.0) - math.exp(-2.0)) / math.pi, abs=1e-12)


@pytest.mark.parametrize("rate,second", [("half", 0.5), ("matched", 1.0 / math.sqrt(2.0))])
def test_max_trace_gap_constant_matches_rectangle_rule(rate, second):
    t = 2 * math.pi * np.arange(100_000) / 100_000
    k = 0.5
    oracle = np.mean(np.maximum(np.sin(t - k) * math.exp(-k), np.sin(t - 1 / math.sqrt(2)) * math.exp(-second)))
    assert max_trace_gap_constant(2.0, rate) == pytest.approx(float(oracle), abs=1e-7)
    assert kappa_max_trace(0.0, 1.0) == pytest.approx(math.sin(1.0))
