import csv
import io
import json
import math

import numpy as np
import pytest

from homogbd.data import Const, parse_datum
from homogbd.domains import MovingDomain
from homogbd.operators import heat
from homogbd.pipeline import SWEEP_DATA, oscillating_1d
from homogbd.sweep import Probe, SweepError, SweepPlan, interior_check, result_json, run_sweep

DOMAIN = MovingDomain("flat_moving", nu=[1.0], offset=(0.0, -1.0), time_range=(0.0, 2.0))
DATA = parse_datum(SWEEP_DATA, 1)


def plan(g=DATA, ladder=(1 / 4, 1 / 8), probes=(Probe("lat", "sqrt_eps_R", 1.0, t0=0.3),), **kw):
    return SweepPlan(DOMAIN, heat(1), g, ladder, probes, **kw)


def test_plan_validation():
    with pytest.raises(SweepError):
        plan(ladder=(1 / 8, 1 / 4))
    with pytest.raises(SweepError):
        plan(h_per_eps=3)
    with pytest.raises(SweepError):
        SweepPlan(MovingDomain("flat_moving", nu=[0.0, 1.0]), heat(2), parse_datum(1.0, 2), (0.1,), ())
    with pytest.raises(SweepError):
        Probe("p", "deep", 1.0)
    with pytest.raises(SweepError):
        Probe("p", "eps_R", 0.0)


def test_probe_past_middle_rejected():
    with pytest.raises(SweepError):
        run_sweep(plan(probes=(Probe("far", "sqrt_eps_R", 10.0, t0=0.3),)), references={"far": 0.0})


def test_constant_data_is_reproduced():
    res = run_sweep(plan(g=Const(0.7, 1), probes=(Probe("lat", "sqrt_eps_R", 1.0, t0=0.3),
                                                  Probe("bot", "bottom", 0.5, x0=2.0))))
    assert res.references == pytest.approx({"lat": 0.7, "bot": 0.7})
    for d in res.deviation.values():
        assert max(d.values()) < 1e-12


def test_quick_ladder_outputs():
    res = run_sweep(plan(probes=(Probe("lat", "sqrt_eps_R", 1.0, t0=0.3), Probe("near", "eps_R", 1.0, t0=0.3))),
                    references={"lat": 0.5, "near": 0.5})
    assert set(res.deviation) == {"lat", "near"}
    assert len(res.cauchy["lat"]) == 1
    assert max(res.max_abs_u.values()) <= res.data_bound + 1e-12
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert rows[0] == ["probe", "eps", "depth_scaling", "R", "value", "reference", "deviation"]
    assert len(rows) == 1 + 2 * 2
    assert json.loads(result_json(res))["data_bound"] == pytest.approx(1.0)


def test_work_budget_truncates():
    res = run_sweep(plan(max_work=1e4), references={"lat": 0.5})
    assert res.truncated == [0.25]
    assert res.deviation["lat"] == {}


def test_interior_point_validation():
    with pytest.raises(SweepError):
        interior_check(plan(), [(-0.45, 0.5)])
    with pytest.raises(SweepError):
        interior_check(plan(), [(2.0, 0.001)])


def test_interior_constant_data():
    rep = interior_check(plan(g=Const(0.3, 1), ladder=(1 / 4,)), [(1.0, 0.3)], ref_per_width=64)
    assert max(rep.deviation.values()) < 1e-12


@pytest.mark.slow
def test_interior_homogenization_converges():
    p = SweepPlan(DOMAIN, oscillating_1d(2.0, 1.0), DATA, (1 / 4, 1 / 8, 1 / 16), (), h_per_eps=16,
                  macro=lambda x, t: np.sin(x))
    rep = interior_check(p, [(1.0, 0.3), (2.0, 0.3), (2.5, 0.2)])
    assert rep.effective["Lam"] == pytest.approx(math.sqrt(3.0), abs=5e-3)
    devs = list(rep.deviation.values())
    assert all(b <= 0.75 * a for a, b in zip(devs, devs[1:]))
