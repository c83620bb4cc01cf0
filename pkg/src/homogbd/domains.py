"""Half-planes, slabs, parabolic cylinders and moving space-time domains.

Also supplies the lattice arithmetic of boundary normals: detection of
rational directions, the lattice gap ``w_nu(N)`` and continued-fraction
approximants of planar directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "Direction",
    "HalfPlane",
    "SlabQL",
    "ParabolicCylinder",
    "MovingDomain",
    "BoundaryPoint",
    "rationality",
    "w_nu",
    "continued_fraction",
    "convergents",
    "continued_fraction_approx",
    "classify_boundary_point",
]


class GeometryError(ValueError):
    """A point or a domain description is geometrically invalid."""


@dataclass(frozen=True, eq=False)
class Direction:
    """A unit vector, optionally with its irreducible integer representative."""

    nu: np.ndarray
    rational_rep: tuple | None = None

    def __post_init__(self) -> None:
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
            raise GeometryError(f"direction {nu} is not a unit vector")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        if self.rational_rep is not None:
            rep = tuple(int(v) for v in self.rational_rep)
            if len(rep) != nu.size or math.gcd(*map(abs, rep)) != 1:
                raise GeometryError(f"rational representative {rep} is not irreducible")
            if np.max(np.abs(np.asarray(rep) / np.linalg.norm(rep) - nu)) > 1e-12:
                raise GeometryError("rational representative does not reproduce nu")
            object.__setattr__(self, "rational_rep", rep)

    @property
    def dim(self) -> int:
        return self.nu.size

    @property
    def rational(self) -> bool:
        return self.rational_rep is not None

    @property
    def rep_norm(self) -> float:
        """``|nu_hat|``, the lattice period along the boundary hyperplane."""
        if self.rational_rep is None:
            raise GeometryError("irrational direction has no lattice period")
        return float(np.linalg.norm(self.rational_rep))

    def tangent(self) -> np.ndarray:
        """Unit tangent ``(-nu_2, nu_1)`` of a planar direction."""
        if self.dim != 2:
            raise GeometryError("tangent is defined for planar directions")
        return np.array([-self.nu[1], self.nu[0]])

    @classmethod
    def from_integer(cls, rep: Sequence[int]) -> Direction:
        rep = tuple(int(v) for v in rep)
        g = math.gcd(*map(abs, rep))
        if g == 0:
            raise GeometryError("zero vector has no direction")
        rep = tuple(v // g for v in rep)
        nu = np.asarray(rep, dtype=float) / math.hypot(*rep)
        return cls(nu, rep)

    @classmethod
    def axis(cls, i: int, dim: int = 2) -> Direction:
        rep = [0] * dim
        rep[i] = 1
        return cls.from_integer(rep)


@dataclass(frozen=True, eq=False)
class HalfPlane:
    """``P_nu = {(x, t): x . nu >= 0}``."""

    nu: Direction

    def contains(self, x, t: float = 0.0) -> bool:
        return float(np.dot(x, self.nu.nu)) >= 0.0


def _split(x, nu: np.ndarray) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    xn = float(x @ nu)
    return xn, x - xn * nu


@dataclass(frozen=True, eq=False)
class SlabQL:
    """``Q_L = {0 < x_nu < L, |t| < L^2, |x'| < L}``."""

    nu: Direction
    L: float

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise GeometryError("L must be positive")

    def contains(self, x, t: float) -> bool:
        xn, xp = _split(x, self.nu.nu)
        return 0.0 < xn < self.L and abs(t) < self.L**2 and np.linalg.norm(xp) < self.L


@dataclass(frozen=True, eq=False)
class ParabolicCylinder:
    """``{|x - x_c| < r, |t - t_c| < r^2}``."""

    center_x: np.ndarray
    center_t: float
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise GeometryError("r must be positive")
        object.__setattr__(self, "center_x", np.atleast_1d(np.asarray(self.center_x, dtype=float)))

    def contains(self, x, t: float) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center_x) < self.r and abs(t - self.center_t) < self.r**2)


# ----------------------------------------------------------------------------
# Lattice arithmetic


def continued_fraction(x: float, max_terms: int = 64, rtol: float = 1e-12) -> list[int]:
    """Partial quotients of ``x >= 0``."""
    if x < 0:
        raise ValueError("x must be non-negative")
    terms = []
    for _ in range(max_terms):
        a = math.floor(x)
        terms.append(int(a))
        frac = x - a
        if frac < rtol * max(1.0, x):
            break
        x = 1.0 / frac
    return terms


def convergents(terms: Sequence[int]) -> list[Fraction]:
    out = []
    p0, q0, p1, q1 = 1, 0, terms[0], 1
    out.append(Fraction(p1, q1))
    for a in terms[1:]:
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        out.append(Fraction(p1, q1))
    return out


def _planar_canonical(nu: np.ndarray) -> tuple[float, bool, tuple[int, int]]:
    """Slope in ``[0, 1]``, a swap flag and the component signs."""
    a, b = abs(float(nu[0])), abs(float(nu[1]))
    signs = (1 if nu[0] >= 0 else -1, 1 if nu[1] >= 0 else -1)
    swap = b > a
    if swap:
        a, b = b, a
    return b / a, swap, signs


def _planar_rep(p: int, q: int, swap: bool, signs: tuple[int, int]) -> tuple[int, int]:
    x, y = (p, q) if swap else (q, p)
    return signs[0] * x, signs[1] * y


def rationality(nu, tol: float = 1e-6) -> Direction:
    """Attach an integer representative when ``nu`` is rational at precision ``tol``.

    A candidate ``nu_hat`` with ``|nu_hat| <= 1/tol`` matches when
    ``|nu_hat/|nu_hat| - nu| <= tol / |nu_hat|^2``; in the plane every such
    candidate is a continued-fraction convergent of the slope, so the search
    over convergents is exhaustive.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    nu = nu / np.linalg.norm(nu)
    if nu.size == 1:
        return Direction(np.sign(nu), (int(np.sign(nu[0])),))
    if nu.size != 2:
        raise GeometryError("only dimensions 1 and 2 are supported")
    slope, swap, signs = _planar_canonical(nu)
    for c in convergents(continued_fraction(slope, max_terms=80, rtol=1e-16)):
        rep = _planar_rep(c.numerator, c.denominator, swap, signs)
        norm = math.hypot(*rep)
        if norm > 1.0 / tol:
            break
        unit = np.asarray(rep, dtype=float) / norm
        err = float(np.max(np.abs(unit - nu)))
        if err <= tol / norm**2:
            return Direction(unit, rep)
    return Direction(nu, None)


def w_nu(nu: Direction | np.ndarray, N: int) -> float:
    """``min |m . nu|`` over nonzero integer vectors with ``|m| <= N``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    v = nu.nu if isinstance(nu, Direction) else np.asarray(nu, dtype=float)
    rng = np.arange(-N, N + 1)
    grids = np.meshgrid(*([rng] * v.size), indexing="ij")
    m = np.stack([g.ravel() for g in grids], axis=1)
    norms = np.linalg.norm(m, axis=1)
    keep = (norms > 0) & (norms <= N)
    return float(np.min(np.abs(m[keep] @ v)))


def continued_fraction_approx(nu, order: int = 4) -> Direction:
    """Rational direction from the ``order``-th convergent of the slope ``nu_2/nu_1``."""
    if order < 1:
        raise ValueError("order must be at least 1")
    nu = np.asarray(nu, dtype=float)
    if nu.size != 2:
        raise GeometryError("continued-fraction approximants need a planar direction")
    nu = nu / np.linalg.norm(nu)
    if nu[0] == 0.0 or nu[1] == 0.0:
        return Direction.from_integer((int(np.sign(nu[0])), int(np.sign(nu[1]))))
    slope = abs(nu[1] / nu[0])
    convs = convergents(continued_fraction(slope, max_terms=order + 1))
    c = convs[min(order, len(convs) - 1)]
    sx, sy = int(np.sign(nu[0])), int(np.sign(nu[1]))
    if c.numerator == 0:
        return Direction.from_integer((sx, 0))
    return Direction.from_integer((sx * c.denominator, sy * c.numerator))


# ----------------------------------------------------------------------------
# Moving domains

MOVING_KINDS = ("flat_moving", "rotating_prop45", "graph")


def _poly(coeffs: Sequence[float], t: float) -> float:
    return float(sum(c * t**k for k, c in enumerate(coeffs)))


def _dpoly(coeffs: Sequence[float], t: float) -> float:
    return float(sum(k * c * t ** (k - 1) for k, c in enumerate(coeffs) if k > 0))


@dataclass(frozen=True, eq=False)
class MovingDomain:
    """A moving spatial domain ``Omega(t)`` for ``t`` in ``time_range``.

    ``flat_moving``: ``{x . nu > b(t)}`` with ``b`` a polynomial.
    ``rotating_prop45``: ``{y > t}`` for ``t < 0`` and ``{y - tan(t) x > t}`` for ``t >= 0``.
    ``graph``: ``{x_last > phi(x_first, t)}`` for a callable ``phi``.
    All kinds are clipped to the axis-aligned ``box``.
    """

    kind: str
    time_range: tuple = (0.0, 1.0)
    nu: np.ndarray | None = None
    offset: tuple = (0.0,)
    phi: Callable | None = None
    box: tuple = ((-10.0, 10.0), (-10.0, 10.0))
    dim: int = 2
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in MOVING_KINDS:
            raise GeometryError(f"unknown moving-domain kind {self.kind!r}")
        if self.kind == "flat_moving":
            if self.nu is None:
                raise GeometryError("flat_moving needs a normal")
            nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
            object.__setattr__(self, "nu", nu / np.linalg.norm(nu))
            object.__setattr__(self, "dim", nu.size)
        if self.kind == "rotating_prop45" and self.dim != 2:
            raise GeometryError("the rotating domain is planar")
        if self.kind == "graph" and self.phi is None:
            raise GeometryError("graph domains need a boundary function")
        if len(self.box) != self.dim:
            object.__setattr__(self, "box", tuple(self.box[: self.dim]))

    # -- level function: positive inside, zero on the moving boundary
    def level(self, x, t: float) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "flat_moving":
            return float(x @ self.nu) - self.b(t)
        if self.kind == "rotating_prop45":
            if t < 0:
                return float(x[1] - t)
            return float((x[1] - math.tan(t) * x[0] - t) * math.cos(t))
        return float(x[-1] - self.phi(x[0] if self.dim == 2 else None, t))

    def b(self, t: float) -> float:
        return _poly(self.offset, t)

    def speed_law(self, t: float) -> float:
        return _dpoly(self.offset, t)

    def in_box(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return all(lo < xi < hi for xi, (lo, hi) in zip(x, self.box))

    def contains(self, x, t: float) -> bool:
        return self.level(x, t) > 0 and self.in_box(x)

    def normal_and_speed(self, x, t: float, fd: float = 1e-6) -> tuple[np.ndarray, float]:
        """Inner unit normal and normal speed of the moving boundary through ``(x, t)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "flat_moving":
            return self.nu.copy(), self.speed_law(t)
        if self.kind == "rotating_prop45":
            if t < 0:
                return np.array([0.0, 1.0]), 1.0
            nu = np.array([-math.sin(t), math.cos(t)])
            return nu, x[0] / math.cos(t) + math.cos(t)
        grad = np.zeros(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = fd
            grad[i] = (self.level(x + e, t) - self.level(x - e, t)) / (2 * fd)
        dt = (self.level(x, t + fd) - self.level(x, t - fd)) / (2 * fd)
        g = np.linalg.norm(grad)
        return grad / g, -dt / g

    def check_condition_O(self, times: Sequence[float], n: int = 96) -> bool:
        """Raster test that ``Omega(t)`` is nonempty and connected inside the box."""
        from scipy import ndimage

        axes = [np.linspace(lo, hi, n + 2)[1:-1] for lo, hi in self.box]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        for t in times:
            mask = np.array([self.level(p, t) > 0 for p in pts]).reshape((n,) * self.dim)
            if not mask.any():
                return False
            _, count = ndimage.label(mask)
            if count != 1:
                return False
        return True


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    x0: np.ndarray
    t0: float
    nu: Direction
    c: float
    case: str


def classify_boundary_point(dom: MovingDomain, x0, t0: float, nbhd: float = 0.05, tol: float = 1e-6) -> BoundaryPoint:
    """Label a lateral boundary point as ``Gamma1``, ``Gamma2`` or ``neither``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if abs(dom.level(x0, t0)) > 1e-9:
        raise GeometryError(f"({x0}, {t0}) is not on the lateral boundary")
    nu_vec, c = dom.normal_and_speed(x0, t0)
    direction = rationality(nu_vec, tol)
    if not direction.rational:
        return BoundaryPoint(x0, t0, direction, c, "Gamma1")
    if abs(c) <= 1e-12:
        return BoundaryPoint(x0, t0, direction, c, "neither")
    tangent = np.array([-nu_vec[1], nu_vec[0]]) if dom.dim == 2 else np.zeros(1)
    for ds in np.linspace(-nbhd, nbhd, 5):
        for dt in np.linspace(-nbhd, nbhd, 5):
            t = t0 + dt
            # move the sample onto the boundary at time t along the normal
            x = x0 + ds * tangent
            x = x - dom.level(x, t) * nu_vec
            n_s, c_s = dom.normal_and_speed(x, t)
            if np.max(np.abs(n_s - nu_vec)) > 1e-9 or abs(c_s) <= 1e-12:
                return BoundaryPoint(x0, t0, direction, c, "neither")
    return BoundaryPoint(x0, t0, direction, c, "Gamma2")
