"""Closed-form barriers and their certification as discrete supersolutions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .operators import pucci_operator
from .scheme import residual

__all__ = [
    "SmallnessError",
    "Barrier",
    "Certificate",
    "make_slab_barrier",
    "make_drift_barrier",
    "make_bottom_barrier",
    "make_singular",
    "make_aggregate",
    "singular_constants",
    "certify",
    "singular_scaling_defect",
    "aggregate_bounds",
]

BARRIER_KINDS = ("slab_L31", "drift_L33", "bottom_L61", "singular_L71", "aggregate_T71")


class SmallnessError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Barrier:
    kind: str
    params: dict
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)

    def eval(self, x, t) -> np.ndarray:
        """Vectorised over ``x`` of shape ``(N, d)`` or ``(d,)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.fn(np.atleast_2d(x), np.asarray(t, dtype=float))
        return float(out[0]) if single else out


def _split(x: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xn = x @ nu
    xp = x - xn[:, None] * nu
    return xn, np.sum(xp * xp, axis=1)


def _slab_fn(c0, C0, C1, L, lam, Lam, d, nu):
    if d == 1:
        def fn(x, t):
            xn = x @ nu
            return C1 / L * xn * (2.0 - xn / L) * (2 * Lam / lam) + c0 + C0 / L**4 * t**2

        return fn

    def fn(x, t):
        xn, xp2 = _split(x, nu)
        k = (d - 1) * Lam / lam
        return C1 / L**2 * (xp2 - 2 * k * xn**2) + C1 / L * 4 * k * xn + c0 + C0 / L**4 * t**2

    return fn


def _check(c0, C0, L, lam, Lam, d):
    if not (C0 > c0 > 0 and L > 0 and 0 < lam <= Lam and d in (1, 2)):
        raise ValueError("require C0 > c0 > 0, L > 0, 0 < lam <= Lam and d in {1, 2}")


def make_slab_barrier(c0: float, C0: float, L: float, lam: float, Lam: float, d: int, nu=None) -> Barrier:
    """Quadratic supersolution of ``u_t - P+(D^2 u) = 0`` on the slab ``Q_L``.

    Equal to ``c0`` at the origin and at least ``C0`` on the rest of the
    parabolic boundary of ``Q_L``.
    """
    _check(c0, C0, L, lam, Lam, d)
    nu = np.eye(d)[-1] if nu is None else np.asarray(nu, dtype=float)
    if d == 1:
        C1 = C0 * max(1.0, lam / (2 * Lam), 1.0 / (2 * Lam))
    else:
        C1 = C0 * max(1.0, lam / (2 * Lam * (d - 1)), 1.0 / (Lam * (d - 1)))
    params = dict(c0=c0, C0=C0, L=L, lam=lam, Lam=Lam, d=d, C1=C1, nu=nu.tolist())
    return Barrier("slab_L31", params, _slab_fn(c0, C0, C1, L, lam, Lam, d, nu))


def drift_threshold(C0: float, C1: float, lam: float, Lam: float, d: int) -> float:
    """Admissible bound on ``L eps c1 + L^3 eps^3 c2``."""
    q = C0 / (C1 * Lam * max(d - 1, 1)) if d > 1 else C0 / (2 * C1 * Lam)
    return lam * (1.0 - q) / 5.0


def make_drift_barrier(
    c0: float,
    C0: float,
    L: float,
    lam: float,
    Lam: float,
    d: int,
    eps: float,
    c1_bound: float,
    c2_bound: float,
    nu=None,
) -> Barrier:
    """Slab barrier that also absorbs a drift ``(eps c1 + eps^3 c2 t) xi . D``.

    Raises :class:`SmallnessError` when ``L eps c1_bound + L^3 eps^3 c2_bound``
    exceeds :func:`drift_threshold`.
    """
    _check(c0, C0, L, lam, Lam, d)
    if eps == 0:
        out = make_slab_barrier(c0, C0, L, lam, Lam, d, nu)
        return Barrier("drift_L33", dict(out.params, eps=0.0, c1_bound=c1_bound, c2_bound=c2_bound), out.fn)
    nu = np.eye(d)[-1] if nu is None else np.asarray(nu, dtype=float)
    if d == 1:
        C1 = C0 * max(1.0, lam / (2 * Lam), 1.0 / (2 * Lam))
    else:
        C1 = C0 * max(1.0, lam / (2 * Lam * (d - 1)), 2.0 / (Lam * (d - 1)))
    product = L * eps * c1_bound + (L * eps) ** 3 * c2_bound
    thr = drift_threshold(C0, C1, lam, Lam, d)
    if product > thr:
        raise SmallnessError(
            f"L*eps*c1_bound + L^3*eps^3*c2_bound = {product:.4g} exceeds the admissible {thr:.4g}"
        )
    params = dict(c0=c0, C0=C0, L=L, lam=lam, Lam=Lam, d=d, C1=C1, nu=nu.tolist(), eps=eps,
                  c1_bound=c1_bound, c2_bound=c2_bound, product=product, threshold=thr)
    return Barrier("drift_L33", params, _slab_fn(c0, C0, C1, L, lam, Lam, d, nu))


def make_bottom_barrier(c0: float, C0: float, L: float, Lam: float, d: int) -> Barrier:
    """``C0 |x|^2 / L^2 + c0 + C1 t / L^2`` with ``C1 = C0 max{2 Lam d, 1}``."""
    if not (C0 > c0 > 0 and L > 0):
        raise ValueError("require C0 > c0 > 0 and L > 0")
    C1 = C0 * max(2 * Lam * d, 1.0)

    def fn(x, t):
        return C0 / L**2 * np.sum(x * x, axis=1) + c0 + C1 / L**2 * t

    return Barrier("bottom_L61", dict(c0=c0, C0=C0, L=L, Lam=Lam, d=d, C1=C1), fn)


def _singular_fn(lam: float, Lam: float, d: int):
    a = d * lam / (2 * Lam)

    def fn(x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        r2 = np.sum(x * x, axis=1)
        pos = t > 0
        out = np.zeros(x.shape[0])
        tp = t[pos]
        out[pos] = tp ** (-a) * np.exp(-r2[pos] / (4 * Lam * tp))
        return out

    return fn


def make_singular(lam: float, Lam: float, d: int) -> Barrier:
    """``t^(-d lam / (2 Lam)) exp(-|x|^2 / (4 Lam t))`` for ``t > 0`` and ``0`` otherwise."""
    if not (0 < lam <= Lam):
        raise ValueError("require 0 < lam <= Lam")
    return Barrier("singular_L71", dict(lam=lam, Lam=Lam, d=d, d0=d * lam / Lam), _singular_fn(lam, Lam, d))


@lru_cache(maxsize=None)
def singular_constants(lam: float, Lam: float, d: int, resolution: float = 1e-3) -> tuple[float, float]:
    """``(m1, m2)`` by dense sampling.

    ``m1 = min {Phi(x, 1): |x| <= 1}``; ``m2 = max {Phi(x, t): t = 1 or |x| = 1}``.
    Radial symmetry reduces both to one-dimensional samples.
    """
    fn = _singular_fn(lam, Lam, d)
    r = np.arange(0.0, 1.0 + resolution / 2, resolution)
    e = np.zeros((r.size, d))
    e[:, 0] = r
    m1 = float(np.min(fn(e, np.ones(r.size))))
    t = np.arange(resolution, 50.0, resolution)
    x1 = np.zeros((t.size, d))
    x1[:, 0] = 1.0
    m2 = float(max(np.max(fn(e, np.ones(r.size))), np.max(fn(x1, t))))
    return m1, m2


def make_aggregate(cylinders: Sequence[tuple], C0: float, m1: float, m2: float, d0: float, lam: float = 1.0,
                   Lam: float = 2.0, d: int = 2) -> Barrier:
    """``M sum_j r_j^d0 Phi(x - x_j, t - t_j + 2 r_j^2)`` with ``M = C0 m2 2^d0 / m1``."""
    if abs(d0 - d * lam / Lam) > 1e-12:
        raise ValueError("d0 must equal d lam / Lam")
    mass = C0 * m2 * 2.0**d0 / m1
    cyl = [(np.atleast_1d(np.asarray(xj, dtype=float)), float(tj), float(rj)) for xj, tj, rj in cylinders]
    phi = _singular_fn(lam, Lam, d)

    def fn(x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        out = np.zeros(x.shape[0])
        for xj, tj, rj in cyl:
            out += rj**d0 * phi(x - xj, t - tj + 2 * rj**2)
        return mass * out

    params = dict(C0=C0, m1=m1, m2=m2, d0=d0, M=mass, lam=lam, Lam=Lam, d=d,
                  cylinders=[(xj.tolist(), tj, rj) for xj, tj, rj in cyl],
                  covering_sum=float(sum(rj**d0 for _, _, rj in cyl)))
    return Barrier("aggregate_T71", params, fn)


# ----------------------------------------------------------------------------
# Certification


@dataclass
class Certificate:
    kind: str
    params: dict
    region: str
    min_residual: float
    samples: int
    tol: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, default=float)


def _region_samples(b: Barrier, n: int, rng: np.random.Generator, exclusion: float):
    p = b.params
    d = p["d"]
    if b.kind in ("slab_L31", "drift_L33"):
        L = p["L"]
        nu = np.asarray(p["nu"])
        xn = rng.uniform(0, L, n)
        x = np.zeros((n, d))
        if d == 2:
            tang = np.array([-nu[1], nu[0]])
            x = xn[:, None] * nu + rng.uniform(-L, L, n)[:, None] * tang
        else:
            x = xn[:, None] * nu
        t = rng.uniform(-L**2, L**2, n)
        return x, t, f"Q_L interior, L={L}"
    if b.kind == "bottom_L61":
        L = p["L"]
        x = rng.uniform(-L / math.sqrt(d), L / math.sqrt(d), (n, d))
        t = rng.uniform(0, L**2, n)
        return x, t, f"|x| < L, 0 < t < L^2, L={L}"
    if b.kind in ("singular_L71", "aggregate_T71"):
        x = rng.uniform(-1, 1, (4 * n, d))
        t = rng.uniform(-0.5, 1.0, 4 * n)
        if b.kind == "singular_L71":
            keep = np.sum(x * x, axis=1) + np.abs(t) >= exclusion**2
        else:
            keep = np.ones(t.size, dtype=bool)
            for xj, tj, rj in p["cylinders"]:
                dx = x - np.asarray(xj)
                tau = t - tj + 2 * rj**2
                keep &= np.sum(dx * dx, axis=1) + np.abs(tau) >= exclusion**2
        return x[keep][:n], t[keep][:n], f"[-1,1]^d x [-0.5,1] minus parabolic radius {exclusion}"
    raise ValueError(b.kind)


def _drift_worst(b: Barrier, x: np.ndarray, t: np.ndarray, h: float) -> np.ndarray:
    """Largest drift contribution ``|b(t)| |D phi|`` over admissible directions and signs."""
    p = b.params
    eps, c1, c2 = p.get("eps", 0.0), p.get("c1_bound", 0.0), p.get("c2_bound", 0.0)
    if eps == 0:
        return np.zeros(t.size)
    mag = eps * c1 + eps**3 * c2 * np.abs(t)
    d = p["d"]
    grad = np.stack([(b.fn(x + h * e, t) - b.fn(x - h * e, t)) / (2 * h) for e in np.eye(d)], axis=-1)
    return mag * np.linalg.norm(grad, axis=1)


def certify(b: Barrier, samples: int = 2000, seed: int = 0, tol: float = 1e-4, exclusion: float = 0.1,
            h: float | None = None) -> Certificate:
    """Minimum discrete residual ``phi_t - P+(D_h^2 phi) - drift`` over the barrier's region."""
    p = b.params
    rng = np.random.default_rng(seed)
    x, t, region = _region_samples(b, samples, rng, exclusion)
    lam, Lam, d = p.get("lam", 1.0), p["Lam"], p["d"]
    if b.kind == "bottom_L61":
        lam = min(lam, Lam)
    op = pucci_operator("+", lam, Lam, dim=d)
    if b.kind in ("singular_L71", "aggregate_T71"):
        # parabolic scaling of the stencil near the singular times
        res = np.empty(t.size)
        scale = np.sqrt(np.maximum(np.abs(t), exclusion**2))
        h0 = 1e-3 if h is None else h
        for i in range(t.size):
            hs = h0 * scale[i]
            res[i] = residual(b.fn, op, None, [(x[i], t[i])], h=hs, dt=hs**2)[0]
    else:
        hh = (p["L"] / 50.0) if h is None else h
        res = residual(b.fn, op, None, list(zip(x, t)), h=hh, dt=hh)
        res = res - _drift_worst(b, x, t, hh)
    m = float(np.min(res)) if res.size else float("inf")
    return Certificate(b.kind, {k: v for k, v in p.items() if k != "cylinders"}, region, m, int(t.size), tol, m >= -tol)


def singular_scaling_defect(b: Barrier, ks=(0.5, 2.0, 3.0, 10.0), samples: int = 200, seed: int = 0) -> float:
    """Largest relative defect of ``phi(k x, k^2 t) = k^(-d0) phi(x, t)`` on random points."""
    if b.kind != "singular_L71":
        raise ValueError("scaling applies to the singular barrier")
    rng = np.random.default_rng(seed)
    d, d0 = b.params["d"], b.params["d0"]
    x = rng.uniform(-1, 1, (samples, d))
    t = rng.uniform(0.05, 1.0, samples)
    base = b.fn(x, t)
    worst = 0.0
    for k in ks:
        lhs = b.fn(k * x, k * k * t)
        worst = max(worst, float(np.max(np.abs(lhs - k ** (-d0) * base) / np.maximum(np.abs(base) * k ** (-d0), 1e-300))))
    return worst


def aggregate_bounds(b: Barrier, delta: float, samples: int = 500, seed: int = 0) -> dict:
    """Smallest value on the listed cylinders and largest value far from every pole.

    Far means parabolic distance at least ``delta^(1/d0)`` from each pole
    ``(x_j, t_j - 2 r_j^2)``; the far bound ``delta`` needs
    ``sum r_j^d0 <= delta^2 / (M m2)``.
    """
    if b.kind != "aggregate_T71":
        raise ValueError("bounds apply to the aggregate barrier")
    p = b.params
    rng = np.random.default_rng(seed)
    d, d0 = p["d"], p["d0"]
    near = []
    for xj, tj, rj in p["cylinders"]:
        dirs = rng.normal(size=(samples, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        x = np.asarray(xj) + rj * rng.uniform(0, 1, (samples, 1)) ** (1.0 / d) * dirs
        t = tj + rng.uniform(-rj**2, rj**2, samples)
        near.append(float(np.min(b.fn(x, t))))
    rho = delta ** (1.0 / d0)
    x = rng.uniform(-2, 2, (8 * samples, d))
    t = rng.uniform(-1.0, 2.0, 8 * samples)
    keep = np.ones(t.size, dtype=bool)
    for xj, tj, rj in p["cylinders"]:
        dx = np.linalg.norm(x - np.asarray(xj), axis=1)
        dt = t - (tj - 2 * rj**2)
        keep &= np.maximum(dx, np.sqrt(np.abs(dt))) >= rho
    far = float(np.max(b.fn(x[keep], t[keep]))) if keep.any() else 0.0
    budget = delta**2 / (p["M"] * p["m2"])
    return {"near_min": min(near) if near else float("inf"), "far_max": far, "far_samples": int(keep.sum()),
            "covering_sum": p["covering_sum"], "covering_budget": budget, "C0": p["C0"], "delta": delta}
