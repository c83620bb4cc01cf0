import math

import numpy as np
import pytest

from homogbd.barriers import (
    Barrier,
    SmallnessError,
    aggregate_bounds,
    certify,
    drift_threshold,
    make_aggregate,
    make_bottom_barrier,
    make_drift_barrier,
    make_singular,
    make_slab_barrier,
    singular_constants,
    singular_scaling_defect,
)

LAM, BIG = 1.0, 2.0


@pytest.mark.parametrize("d", [1, 2])
def test_slab_values(d):
    c0, C0, L = 0.5, 1.0, 1.0
    b = make_slab_barrier(c0, C0, L, LAM, BIG, d)
    assert b.eval(np.zeros(d), 0.0) == pytest.approx(c0)
    rng = np.random.default_rng(0)
    n = 400
    if d == 2:
        top = np.stack([rng.uniform(-L, L, n), np.full(n, L)], axis=1)
        side = np.stack([rng.choice([-L, L], n), rng.uniform(0, L, n)], axis=1)
        bottom = np.stack([rng.uniform(-L, L, n), rng.uniform(0, L, n)], axis=1)
        assert np.all(b.eval(top, rng.uniform(-L**2, L**2, n)) >= C0)
        assert np.all(b.eval(side, rng.uniform(-L**2, L**2, n)) >= C0)
    else:
        top = np.full((n, 1), L)
        bottom = rng.uniform(0, L, (n, 1))
        assert np.all(b.eval(top, rng.uniform(-L**2, L**2, n)) >= C0)
    for t in (-L**2, L**2):
        assert np.all(b.eval(bottom, np.full(n, t)) >= C0)


@pytest.mark.parametrize("d", [1, 2])
def test_slab_and_drift_certified(d):
    assert certify(make_slab_barrier(0.5, 1.0, 1.0, LAM, BIG, d), samples=300).passed
    assert certify(make_drift_barrier(0.5, 1.0, 1.0, LAM, BIG, d, 0.01, 1.0, 1.0), samples=300).passed


def test_drift_smallness_enforced():
    b = make_drift_barrier(0.5, 1.0, 1.0, LAM, BIG, 2, 0.01, 1.0, 1.0)
    assert b.params["product"] <= b.params["threshold"]
    assert b.params["threshold"] == pytest.approx(drift_threshold(1.0, b.params["C1"], LAM, BIG, 2))
    with pytest.raises(SmallnessError):
        make_drift_barrier(0.5, 1.0, 1.0, LAM, BIG, 2, 1.0, 1.0, 1.0)


def test_bottom_certified():
    assert certify(make_bottom_barrier(0.5, 1.0, 1.0, BIG, 2), samples=300).passed


def test_certify_detects_subsolution():
    bad = Barrier("bottom_L61", dict(c0=0.5, C0=1.0, L=1.0, Lam=BIG, d=2, C1=1.0),
                  lambda x, t: np.sum(x * x, axis=1) - t)
    assert not certify(bad, samples=200).passed


def test_singular_certified_and_scaling():
    b = make_singular(LAM, BIG, 2)
    assert certify(b, samples=200).passed
    assert singular_scaling_defect(b) <= 1e-12
    assert singular_scaling_defect(b, ks=(2.0, 3.0, 10.0), seed=5) <= 1e-12
    assert b.eval(np.array([0.3, 0.1]), -0.5) == 0.0


@pytest.mark.parametrize("lam,Lam,d", [(1.0, 2.0, 2), (1.0, 1.0, 2), (0.5, 2.0, 1), (1.0, 3.0, 2)])
def test_singular_constants_closed_form(lam, Lam, d):
    m1, m2 = singular_constants(lam, Lam, d)
    a = d * lam / (2 * Lam)
    assert m1 == pytest.approx(math.exp(-1.0 / (4 * Lam)), rel=1e-9)
    assert m2 == pytest.approx(max(1.0, (2 * d * lam / math.e) ** a), rel=1e-5)


def _aggregate(delta, cylinders, share=0.9):
    m1, m2 = singular_constants(LAM, BIG, 2)
    d0 = 2 * LAM / BIG
    mass = 1.0 * m2 * 2.0**d0 / m1
    budget = delta**2 / (mass * m2)
    r = (share * budget / len(cylinders)) ** (1.0 / d0)
    return make_aggregate([(x, t, r) for x, t in cylinders], 1.0, m1, m2, d0, LAM, BIG, 2)


def test_aggregate_bounds():
    agg = _aggregate(0.5, [([0.2, 0.1], 0.3), ([-0.4, 0.5], 0.6)])
    out = aggregate_bounds(agg, 0.5, samples=300)
    assert out["covering_sum"] <= out["covering_budget"]
    assert out["near_min"] >= out["C0"]
    assert out["far_samples"] > 0 and out["far_max"] <= 0.5
    assert certify(agg, samples=200).passed


def test_aggregate_grows_with_cylinders():
    one = _aggregate(0.5, [([0.2, 0.1], 0.3)])
    r = one.params["cylinders"][0][2]
    two = make_aggregate([([0.2, 0.1], 0.3, r), ([-0.4, 0.5], 0.6, r)], 1.0, one.params["m1"], one.params["m2"],
                         one.params["d0"], LAM, BIG, 2)
    x = np.random.default_rng(2).uniform(-1, 1, (100, 2))
    t = np.random.default_rng(3).uniform(0, 1, 100)
    assert np.all(two.fn(x, t) >= one.fn(x, t))


def test_constructor_validation():
    with pytest.raises(ValueError):
        make_slab_barrier(1.0, 0.5, 1.0, LAM, BIG, 2)
    with pytest.raises(ValueError):
        make_singular(2.0, 1.0, 2)
    with pytest.raises(ValueError):
        make_aggregate([], 1.0, 1.0, 1.0, 0.3, LAM, BIG, 2)
