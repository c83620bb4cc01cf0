"""Closed grammar of boundary data: constants, trigonometric modes, sums and products.

Every datum is a real trigonometric polynomial in ``(y, s)``. Its exact
complex-exponential expansion gives cell means, periods along lines and
dependence flags without sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = ["DataError", "Datum", "Const", "Mode", "Sum", "Product", "parse_datum"]

TWO_PI = 2.0 * math.pi


class DataError(ValueError):
    pass


def _key(w: np.ndarray) -> tuple:
    return tuple(round(float(v), 12) + 0.0 for v in w)


class Datum:
    """Base class; subclasses implement ``_eval``, ``_terms`` and ``to_dict``."""

    dim: int

    def __call__(self, y, s=0.0) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise DataError(f"datum expects {self.dim}-dimensional y, got shape {y.shape}")
        return self._eval(y, np.asarray(s, dtype=float))

    def terms(self) -> dict:
        """``{frequency (w_y..., w_s): complex coefficient}`` of the exponential expansion."""
        out: dict = {}
        for w, a in self._terms():
            k = _key(w)
            out[k] = out.get(k, 0j) + a
        return {k: v for k, v in out.items() if abs(v) > 1e-15}

    def mean(self) -> float:
        """Average over ``(y, s)``; equal to the unit-cell mean for lattice-periodic data."""
        return float(self.terms().get((0.0,) * (self.dim + 1), 0j).real)

    def _frequencies(self) -> list[np.ndarray]:
        return [np.asarray(k) for k in self.terms()]

    @property
    def depends_on_y(self) -> bool:
        return any(np.any(w[:-1] != 0) for w in self._frequencies())

    @property
    def depends_on_s(self) -> bool:
        return any(w[-1] != 0 for w in self._frequencies())

    def line_period(self, direction: Sequence[float], time_rate: float = 0.0) -> float | None:
        """Period of ``a -> datum(y0 + a direction, s0 + a time_rate)``; ``None`` if constant.

        Raises :class:`DataError` when the frequencies along the line are incommensurate.
        """
        d = np.concatenate([np.asarray(direction, dtype=float), [time_rate]])
        om = sorted({abs(round(float(w @ d), 12)) for w in self._frequencies()} - {0.0})
        return _common_period(om)

    def time_period(self) -> float | None:
        return self.line_period(np.zeros(self.dim), 1.0)

    def shifted(self, z: Sequence[float], tau: float = 0.0) -> Datum:
        """``(y, s) -> datum(y + z, s + tau)``."""
        return Shifted(self, np.asarray(z, dtype=float), float(tau))

    def __add__(self, other: Datum) -> Datum:
        return Sum((self, other))

    def __mul__(self, other: Datum) -> Datum:
        return Product((self, other))


def _common_period(om: list[float]) -> float | None:
    if not om:
        return None
    base = om[0]
    den = 1
    for w in om:
        r = Fraction(w / base).limit_denominator(64)
        if abs(float(r) - w / base) > 1e-9:
            raise DataError("frequencies along the line are incommensurate")
        den = den * r.denominator // math.gcd(den, r.denominator)
    # fundamental = base / den * gcd of numerators; numerators share no factor with den by construction
    nums = [Fraction(w / base).limit_denominator(64) * den for w in om]
    g = 0
    for n in nums:
        g = math.gcd(g, int(n))
    return TWO_PI * den / (base * g)


@dataclass(frozen=True, eq=False)
class Const(Datum):
    value: float
    dim: int = 2

    def _eval(self, y, s):
        return np.full(np.broadcast_shapes(y.shape[:-1], s.shape), float(self.value))

    def _terms(self):
        return [(np.zeros(self.dim + 1), complex(self.value))]

    def to_dict(self) -> dict:
        return {"const": self.value}


@dataclass(frozen=True, eq=False)
class Mode(Datum):
    """``amp * f(w . y + w_s s + phase)`` with ``f`` one of sin, cos."""

    kind: str
    w: tuple
    w_s: float = 0.0
    amp: float = 1.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("sin", "cos"):
            raise DataError(f"unknown mode kind {self.kind!r}")
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))

    @property
    def dim(self) -> int:
        return len(self.w)

    @classmethod
    def lattice(cls, kind: str, k: Sequence[int], k_s: int = 0, amp: float = 1.0, phase: float = 0.0) -> Mode:
        return cls(kind, tuple(TWO_PI * v for v in k), TWO_PI * k_s, amp, phase)

    def _eval(self, y, s):
        arg = y @ np.asarray(self.w) + self.w_s * s + self.phase
        return self.amp * (np.sin(arg) if self.kind == "sin" else np.cos(arg))

    def _terms(self):
        w = np.array(self.w + (self.w_s,))
        e = complex(math.cos(self.phase), math.sin(self.phase))
        if self.kind == "sin":
            return [(w, self.amp * e / 2j), (-w, -self.amp * e.conjugate() / 2j)]
        return [(w, self.amp * e / 2), (-w, self.amp * e.conjugate() / 2)]

    def to_dict(self) -> dict:
        return {"mode": self.kind, "w": list(self.w), "w_s": self.w_s, "amp": self.amp, "phase": self.phase}


def _same_dim(parts: Sequence[Datum]) -> int:
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise DataError("all parts must share the same dimension")
    return dims.pop()


@dataclass(frozen=True, eq=False)
class Sum(Datum):
    parts: tuple

    def __post_init__(self) -> None:
        if not self.parts:
            raise DataError("empty sum")
        object.__setattr__(self, "parts", tuple(self.parts))
        _same_dim(self.parts)

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def _eval(self, y, s):
        return sum(p._eval(y, s) for p in self.parts)

    def _terms(self):
        return [t for p in self.parts for t in p._terms()]

    def to_dict(self) -> dict:
        return {"sum": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Product(Datum):
    parts: tuple

    def __post_init__(self) -> None:
        if not self.parts:
            raise DataError("empty product")
        object.__setattr__(self, "parts", tuple(self.parts))
        _same_dim(self.parts)

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def _eval(self, y, s):
        out = self.parts[0]._eval(y, s)
        for p in self.parts[1:]:
            out = out * p._eval(y, s)
        return out

    def _terms(self):
        acc = [(np.zeros(self.dim + 1), 1 + 0j)]
        for p in self.parts:
            acc = [(w1 + w2, a1 * a2) for w1, a1 in acc for w2, a2 in p._terms()]
        return acc

    def to_dict(self) -> dict:
        return {"product": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Shifted(Datum):
    base: Datum
    z: np.ndarray
    tau: float

    @property
    def dim(self) -> int:
        return self.base.dim

    def _eval(self, y, s):
        return self.base._eval(y + self.z, s + self.tau)

    def _terms(self):
        out = []
        for w, a in self.base._terms():
            ph = float(w[:-1] @ self.z + w[-1] * self.tau)
            out.append((w, a * complex(math.cos(ph), math.sin(ph))))
        return out

    def to_dict(self) -> dict:
        return {"shift": {"z": self.z.tolist(), "tau": self.tau, "of": self.base.to_dict()}}


_FIELDS = {
    "const": {"const"},
    "mode": {"mode", "k", "k_s", "w", "w_s", "amp", "phase"},
    "sum": {"sum"},
    "product": {"product"},
    "shift": {"shift"},
}


def parse_datum(spec, dim: int) -> Datum:
    """Build a datum from its JSON form; unknown fields raise :class:`DataError`."""
    if isinstance(spec, (int, float)):
        return Const(float(spec), dim)
    if not isinstance(spec, dict):
        raise DataError(f"datum must be a number or an object, got {type(spec).__name__}")
    heads = [k for k in _FIELDS if k in spec]
    if len(heads) != 1:
        raise DataError(f"datum needs exactly one of {sorted(_FIELDS)}, got {sorted(spec)}")
    head = heads[0]
    extra = set(spec) - _FIELDS[head]
    if extra:
        raise DataError(f"unknown datum fields {sorted(extra)}")
    if head == "const":
        return Const(float(spec["const"]), dim)
    if head == "mode":
        if ("k" in spec) == ("w" in spec):
            raise DataError("a mode needs exactly one of 'k' (lattice) or 'w' (angular)")
        amp, phase = float(spec.get("amp", 1.0)), float(spec.get("phase", 0.0))
        if "k" in spec:
            if len(spec["k"]) != dim or "w_s" in spec:
                raise DataError(f"'k' must have {dim} entries and pairs with 'k_s'")
            return Mode.lattice(spec["mode"], spec["k"], spec.get("k_s", 0), amp, phase)
        if len(spec["w"]) != dim or "k_s" in spec:
            raise DataError(f"'w' must have {dim} entries and pairs with 'w_s'")
        return Mode(spec["mode"], tuple(spec["w"]), float(spec.get("w_s", 0.0)), amp, phase)
    if head == "shift":
        sh = spec["shift"]
        if not isinstance(sh, dict) or set(sh) - {"z", "tau", "of"} or "of" not in sh:
            raise DataError("shift needs 'of' and optional 'z', 'tau'")
        z = sh.get("z", [0.0] * dim)
        return parse_datum(sh["of"], dim).shifted(z, float(sh.get("tau", 0.0)))
    parts = spec[head]
    if not isinstance(parts, list) or not parts:
        raise DataError(f"'{head}' needs a non-empty list")
    items = tuple(parse_datum(p, dim) for p in parts)
    return Sum(items) if head == "sum" else Product(items)
