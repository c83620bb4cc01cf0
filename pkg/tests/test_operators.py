import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homogbd.operators import (
    DirectionFrame,
    OperatorError,
    ShapeError,
    SymMatrix,
    UnsupportedLimitError,
    EllipticOperator,
    ellipticity_audit,
    evaluate,
    family_angles,
    heat,
    linear_trace,
    max_trace_operator,
    pucci_minus,
    pucci_operator,
    pucci_plus,
    rescaled_limit,
    rotated_family_operator,
    rotation_frame,
)

entries = st.floats(-50, 50, allow_nan=False)


def sym(a, b, c):
    return SymMatrix(np.array([[a, b], [b, c]]))


def pucci_oracle(M, lam, Lam, sign):
    ev = np.linalg.eigvalsh(M)
    if sign > 0:
        return Lam * ev[ev > 0].sum() + lam * ev[ev < 0].sum()
    return lam * ev[ev > 0].sum() + Lam * ev[ev < 0].sum()


def test_pucci_examples():
    M = SymMatrix.diag(1.0, -2.0)
    assert pucci_plus(M, 1.0, 2.0) == pytest.approx(2.0 * 1.0 + 1.0 * -2.0)
    assert pucci_minus(M, 1.0, 2.0) == pytest.approx(1.0 * 1.0 + 2.0 * -2.0)
    assert pucci_plus(SymMatrix.diag(0.0, 0.0), 1.0, 2.0) == 0.0


@given(entries, entries, entries)
def test_pucci_matches_eigen_oracle(a, b, c):
    M = sym(a, b, c)
    assert pucci_plus(M, 1.0, 3.0) == pytest.approx(pucci_oracle(M.entries, 1.0, 3.0, 1), abs=1e-9)
    assert pucci_minus(M, 1.0, 3.0) == pytest.approx(pucci_oracle(M.entries, 1.0, 3.0, -1), abs=1e-9)


@given(entries, entries, entries, st.floats(0.0, 10.0))
def test_positive_homogeneity(a, b, c, k):
    M = sym(a, b, c)
    for op in (pucci_operator("+", 1, 2), max_trace_operator(2.0), rotated_family_operator(0.05, 5)):
        assert evaluate(op, M.scale(k)) == pytest.approx(k * evaluate(op, M), abs=1e-8 * (1 + k * 50))


@given(entries, entries, entries)
def test_pucci_duality(a, b, c):
    M = sym(a, b, c)
    assert pucci_plus(M, 1.0, 2.0) == pytest.approx(-pucci_minus(-M, 1.0, 2.0), abs=1e-12)


def test_symmatrix_validation():
    with pytest.raises(ShapeError):
        SymMatrix(np.zeros((3, 3)))
    with pytest.raises(OperatorError):
        SymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(OperatorError):
        SymMatrix(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_closed_form_eigenvalues():
    M = sym(2.0, 0.5, 1.0)
    assert np.allclose(M.eigenvalues(), np.linalg.eigvalsh(M.entries))


def test_rotation_frame_orthonormal():
    F = rotation_frame(0.3)
    Q = F.matrix()
    assert np.allclose(Q.T @ Q, np.eye(2))


def test_frame_rejects_non_orthonormal():
    with pytest.raises(OperatorError):
        DirectionFrame((np.array([1.0, 0.0]), np.array([1.0, 1.0]) / math.sqrt(2)))


def test_linear_trace_on_rotated_frame():
    th = 0.4
    op = linear_trace([3.0, 1.0], rotation_frame(th))
    Q = rotation_frame(th).matrix()
    A = Q @ np.diag([3.0, 1.0]) @ Q.T
    M = sym(0.7, -0.2, 1.5)
    assert evaluate(op, M) == pytest.approx(np.trace(A @ M.entries))


def test_heat_is_trace():
    assert evaluate(heat(2), sym(1.5, 9.0, -0.5)) == pytest.approx(1.0)


def test_max_trace():
    op = max_trace_operator(2.0)
    assert evaluate(op, SymMatrix.diag(1.0, 1.0)) == pytest.approx(4.0)
    assert evaluate(op, SymMatrix.diag(-1.0, 0.0)) == pytest.approx(-1.0)


def test_family_angles_inside_interval():
    a = family_angles(0.05, 9)
    assert a.size == 9 and np.all(np.abs(a) < 0.05)
    assert a == pytest.approx(-a[::-1])
    with pytest.raises(OperatorError):
        family_angles(0.05, 0)


def test_rotated_family_dominates_trace():
    op = rotated_family_operator(0.05, 9)
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.normal(size=(2, 2))
        M = SymMatrix(0.5 * (a + a.T))
        assert evaluate(op, M) >= M.trace() - 1e-12


@pytest.mark.parametrize("op", [pucci_operator("+", 1, 2), pucci_operator("-", 0.5, 1.5), max_trace_operator(2.0),
                                rotated_family_operator(0.05, 9), heat(2)])
def test_ellipticity_audit_passes(op):
    rep = ellipticity_audit(op, samples=300, seed=3)
    assert rep.passed
    assert rep.lower_margin >= -1e-9 and rep.upper_margin >= -1e-9


def test_ellipticity_audit_detects_wrong_constants():
    bad = linear_trace([1.0, 5.0], lam=1.0, Lam=2.0)
    assert not ellipticity_audit(bad, samples=200, seed=0).passed


def test_invalid_pair_rejected():
    with pytest.raises(OperatorError):
        pucci_operator("+", 2.0, 1.0)
    with pytest.raises(OperatorError):
        pucci_operator("+", 0.0, 1.0)


def test_rescaled_limit_drops_source():
    src = lambda x, y, t, s: 7.0 + 0 * t  # noqa: E731
    op = linear_trace([1.0, 2.0], source=src)
    lim = rescaled_limit(op)
    M = sym(1.0, 0.0, 1.0)
    assert evaluate(op, M) == pytest.approx(10.0)
    assert evaluate(lim, M) == pytest.approx(3.0)


def test_rescaled_limit_of_pucci_is_itself():
    P = pucci_operator("+", 1, 2)
    assert rescaled_limit(P) is P


def test_rescaled_limit_custom_without_part():
    op = EllipticOperator(kind="custom", lam=1.0, Lam=2.0, dim=2, func=lambda M, x, y, t, s: M.trace())
    with pytest.raises(UnsupportedLimitError):
        rescaled_limit(op)


def test_periodicity_of_cell_coefficients():
    a = lambda x, y, t, s: 2.0 + np.sin(2 * np.pi * y[..., 0])  # noqa: E731
    op = linear_trace([a], lam=1.0, Lam=3.0)
    M = SymMatrix(np.array([[1.0]]))
    assert evaluate(op, M, y=[0.3]) == pytest.approx(evaluate(op, M, y=[1.3]))
