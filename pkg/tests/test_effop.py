import math

import numpy as np
import pytest

from homogbd.effop import (
    EffectiveOperator,
    PreconditionError,
    ergodic_constant,
    shift_invariance_check,
)
from homogbd.operators import SymMatrix, evaluate, heat, linear_trace, pucci_operator
from homogbd.pipeline import oscillating_1d


def test_constant_operator_is_its_own_average():
    P = pucci_operator("+", 1.0, 2.0)
    for M in ([[1.0, 0.3], [0.3, -0.5]], [[-2.0, 0.0], [0.0, 0.5]]):
        r = ergodic_constant(P, M, torus_res=16, horizon=0.25)
        assert r.value == pytest.approx(evaluate(P, SymMatrix(np.array(M))), abs=1e-9)


def test_harmonic_mean_in_one_dimension():
    r = ergodic_constant(oscillating_1d(2.0, 1.0), [[1.0]], torus_res=32, horizon=1.0)
    assert r.value == pytest.approx(math.sqrt(3.0), abs=5e-3)


def test_preconditions():
    with pytest.raises(PreconditionError):
        ergodic_constant(heat(2), np.eye(2), torus_res=8)
    aperiodic = linear_trace([1.0, 1.0], periodic=False)
    with pytest.raises(PreconditionError):
        ergodic_constant(aperiodic, np.eye(2))
    with pytest.raises(ValueError):
        shift_invariance_check(heat(2), np.eye(2), [((0.0, 0.0), 0.0)])


def test_shift_invariance_constant_operator():
    rep = shift_invariance_check(heat(2), np.eye(2), [((0.0, 0.0), 0.0), ((0.3, 0.1), 0.2)], torus_res=16,
                                 horizon=0.25)
    assert rep.passed and rep.deviation < 1e-12


def test_effective_operator_homogeneous_and_directional():
    E = EffectiveOperator(pucci_operator("+", 1.0, 2.0))
    M = SymMatrix(np.array([[1.0, 0.2], [0.2, -3.0]]))
    assert E(M.scale(2.5)) == pytest.approx(2.5 * E(M))
    assert E(SymMatrix(np.zeros((2, 2)))) == 0.0
    assert E.directional([1.0, 0.0]) == pytest.approx((2.0, 1.0))
    op1 = E.restricted([0.0, 1.0])
    assert op1.dim == 1 and (op1.lam, op1.Lam) == (1.0, 2.0)
    assert evaluate(op1, SymMatrix(np.array([[-1.0]]))) == pytest.approx(-1.0)


def test_as_operator_for_linear_base():
    E = EffectiveOperator(oscillating_1d(2.0, 1.0), torus_res=32, horizon=1.0)
    op = E.as_operator()
    assert evaluate(op, SymMatrix(np.array([[1.0]]))) == pytest.approx(math.sqrt(3.0), abs=5e-3)


def test_save_and_load(tmp_path):
    P = pucci_operator("-", 1.0, 2.0)
    E = EffectiveOperator(P)
    E(SymMatrix.diag(1.0, -1.0))
    path = tmp_path / "table.json"
    E.save(path)
    F = EffectiveOperator.load(P, path)
    assert F.table == E.table
    with pytest.raises(ValueError):
        EffectiveOperator.load(pucci_operator("+", 1.0, 2.0), path)
