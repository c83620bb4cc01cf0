"""Symmetric matrices, direction frames and uniformly elliptic operators.

An operator is evaluated as ``F(M, x, y, t, s)`` where ``(x, t)`` are the
macroscopic variables and ``(y, s)`` the fast periodic ones.  Supported
kinds are the Pucci extremal operators, finite Bellman families of linear
trace forms (maximum or minimum over members), a single linear trace form,
and user supplied ``custom`` callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OperatorError",
    "ShapeError",
    "UnsupportedLimitError",
    "SymMatrix",
    "DirectionFrame",
    "Member",
    "EllipticOperator",
    "EllipticityPair",
    "AuditReport",
    "sym_eigvals",
    "pucci_plus",
    "pucci_minus",
    "evaluate",
    "rescaled_limit",
    "ellipticity_audit",
    "heat",
    "pucci_operator",
    "linear_trace",
    "bellman",
    "rotation_frame",
    "max_trace_operator",
    "rotated_family_operator",
]

KINDS = ("pucci_plus", "pucci_minus", "bellman_max", "bellman_min", "linear_trace", "custom")

#: Coefficient callables receive ``(x, y, t, s)`` with ``x, y`` of shape ``(..., d)``.
FieldFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class OperatorError(ValueError):
    """Invalid operator or matrix argument."""


class ShapeError(OperatorError):
    """Dimension mismatch between a matrix, a frame or a point."""


class UnsupportedLimitError(OperatorError):
    """The rescaled limit is not available for this operator."""


def sym_eigvals(a11, a12, a22):
    """Closed-form eigenvalues ``(low, high)`` of ``[[a11, a12], [a12, a22]]``.

    Works elementwise on arrays.
    """
    a11 = np.asarray(a11, dtype=float)
    a12 = np.asarray(a12, dtype=float)
    a22 = np.asarray(a22, dtype=float)
    mean = 0.5 * (a11 + a22)
    rad = np.hypot(0.5 * (a11 - a22), a12)
    return mean - rad, mean + rad


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """A symmetric ``dim x dim`` matrix with ``dim`` in ``{1, 2}``."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (1, 2):
            raise ShapeError(f"expected a 1x1 or 2x2 array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise OperatorError("matrix entries must be finite")
        if a.shape[0] == 2 and a[0, 1] != a[1, 0]:
            raise OperatorError("matrix is not symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues, closed form."""
        a = self.entries
        if self.dim == 1:
            return np.array([a[0, 0]])
        lo, hi = sym_eigvals(a[0, 0], a[0, 1], a[1, 1])
        return np.array([float(lo), float(hi)])

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.entries)

    def __add__(self, other: SymMatrix) -> SymMatrix:
        return SymMatrix(self.entries + _as_sym(other).entries)

    def __neg__(self) -> SymMatrix:
        return SymMatrix(-self.entries)

    def scale(self, c: float) -> SymMatrix:
        return SymMatrix(c * self.entries)

    @classmethod
    def diag(cls, *values: float) -> SymMatrix:
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def outer(cls, v: Sequence[float]) -> SymMatrix:
        v = np.asarray(v, dtype=float)
        return cls(np.outer(v, v))


def _as_sym(M) -> SymMatrix:
    return M if isinstance(M, SymMatrix) else SymMatrix(np.asarray(M, dtype=float))


@dataclass(frozen=True, eq=False)
class DirectionFrame:
    """An orthonormal list of unit directions spanning the space."""

    directions: tuple
    label: str = ""

    def __post_init__(self) -> None:
        dirs = tuple(np.array(d, dtype=float).reshape(-1) for d in self.directions)
        if not dirs:
            raise ShapeError("a frame needs at least one direction")
        dim = dirs[0].size
        if dim not in (1, 2) or any(d.size != dim for d in dirs):
            raise ShapeError("frame directions must share a dimension in {1, 2}")
        for d in dirs:
            if abs(np.linalg.norm(d) - 1.0) > 1e-12:
                raise OperatorError(f"direction {d} is not a unit vector")
        mat = np.stack(dirs)
        if len(dirs) != dim or abs(abs(np.linalg.det(mat)) - 1.0) > 1e-12:
            raise OperatorError("frame must be an orthonormal basis")
        if dim == 2 and abs(float(dirs[0] @ dirs[1])) > 1e-12:
            raise OperatorError("frame directions must be orthogonal")
        object.__setattr__(self, "directions", dirs)

    @property
    def dim(self) -> int:
        return self.directions[0].size

    def matrix(self) -> np.ndarray:
        """Columns are the frame directions."""
        return np.stack(self.directions, axis=1)

    @classmethod
    def standard(cls, dim: int) -> DirectionFrame:
        return cls(tuple(np.eye(dim)), label="standard")


def rotation_frame(angle: float) -> DirectionFrame:
    """Frame ``(eta, nu) = ((cos a, sin a), (-sin a, cos a))``."""
    c, s = np.cos(angle), np.sin(angle)
    return DirectionFrame((np.array([c, s]), np.array([-s, c])), label=f"rot({angle:.6g})")


@dataclass(frozen=True, eq=False)
class Member:
    """One linear trace form ``sum_i a_i (e_i^T M e_i) + f``."""

    frame: DirectionFrame
    coeffs: tuple
    source: FieldFn | None = None

    def __post_init__(self) -> None:
        if len(self.coeffs) != len(self.frame.directions):
            raise ShapeError("one coefficient per frame direction is required")
        object.__setattr__(self, "coeffs", tuple(self.coeffs))

    @property
    def constant(self) -> bool:
        return all(not callable(c) for c in self.coeffs)

    def matrix(self, x, y, t, s) -> np.ndarray:
        """Coefficient matrix ``A`` broadcast over the leading shape of ``y``."""
        y = np.asarray(y, dtype=float)
        lead = y.shape[:-1]
        d = self.frame.dim
        A = np.zeros(lead + (d, d))
        for e, a in zip(self.frame.directions, self.coeffs):
            val = a(x, y, t, s) if callable(a) else a
            A += np.multiply.outer(np.broadcast_to(np.asarray(val, dtype=float), lead), np.outer(e, e))
        return A

    def source_value(self, x, y, t, s) -> np.ndarray | float:
        if self.source is None:
            return 0.0
        return self.source(x, y, t, s)


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """A uniformly elliptic operator with declared ellipticity pair ``(lam, Lam)``."""

    kind: str
    lam: float
    Lam: float
    dim: int
    members: tuple = ()
    periodic: bool = True
    func: Callable | None = None
    homogeneous_part: "EllipticOperator | None" = None
    macro_dependent: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise OperatorError(f"unknown operator kind {self.kind!r}")
        if not (self.lam > 0):
            raise OperatorError("lambda must be positive")
        if self.Lam < self.lam:
            raise OperatorError("Lambda must be at least lambda")
        if self.dim not in (1, 2):
            raise ShapeError("dimension must be 1 or 2")
        object.__setattr__(self, "members", tuple(self.members))
        if self.kind in ("bellman_max", "bellman_min", "linear_trace"):
            if not self.members:
                raise OperatorError(f"{self.kind} needs at least one member")
            if self.kind == "linear_trace" and len(self.members) != 1:
                raise OperatorError("linear_trace has exactly one member")
            for m in self.members:
                if m.frame.dim != self.dim:
                    raise ShapeError("member frame dimension differs from operator dimension")
        if self.kind == "custom" and self.func is None:
            raise OperatorError("custom operators need a callable")

    @property
    def pair(self) -> EllipticityPair:
        return EllipticityPair(self.lam, self.Lam, self.dim)

    @property
    def has_source(self) -> bool:
        return any(m.source is not None for m in self.members)

    @property
    def constant_coefficients(self) -> bool:
        """True when the operator does not depend on ``(x, y, t, s)``."""
        if self.kind in ("pucci_plus", "pucci_minus"):
            return True
        if self.kind == "custom":
            return False
        return all(m.constant and m.source is None for m in self.members)


@dataclass(frozen=True, eq=False)
class EllipticityPair:
    lam: float
    Lam: float
    d: int = 2

    def __post_init__(self) -> None:
        if not (0 < self.lam <= self.Lam):
            raise OperatorError("require 0 < lambda <= Lambda")

    @property
    def d0(self) -> float:
        return self.d * self.lam / self.Lam


def _check_pair(lam: float, Lam: float) -> None:
    if not (lam > 0) or Lam < lam:
        raise OperatorError("require 0 < lambda <= Lambda")


def pucci_plus(M, lam: float, Lam: float) -> float:
    """``Lam * (sum of positive eigenvalues) - lam * (sum of |negative eigenvalues|)``."""
    _check_pair(lam, Lam)
    ev = _as_sym(M).eigenvalues()
    return float(Lam * ev[ev > 0].sum() + lam * ev[ev < 0].sum())


def pucci_minus(M, lam: float, Lam: float) -> float:
    """``lam * (sum of positive eigenvalues) - Lam * (sum of |negative eigenvalues|)``."""
    _check_pair(lam, Lam)
    ev = _as_sym(M).eigenvalues()
    return float(lam * ev[ev > 0].sum() + Lam * ev[ev < 0].sum())


def _point(p, dim: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.shape != (dim,):
        raise ShapeError(f"{what} must have shape ({dim},), got {arr.shape}")
    return arr


def evaluate(op: EllipticOperator, M, x=None, y=None, t: float = 0.0, s: float = 0.0) -> float:
    """Evaluate ``F(M, x, y, t, s)``.

    Periodic operators reduce ``(y, s)`` modulo the unit cell first.
    """
    M = _as_sym(M)
    if M.dim != op.dim:
        raise ShapeError(f"matrix dimension {M.dim} differs from operator dimension {op.dim}")
    x = np.zeros(op.dim) if x is None else _point(x, op.dim, "x")
    y = np.zeros(op.dim) if y is None else _point(y, op.dim, "y")
    if op.periodic:
        y = np.mod(y, 1.0)
        s = float(np.mod(s, 1.0))
    if op.kind == "pucci_plus":
        return pucci_plus(M, op.lam, op.Lam)
    if op.kind == "pucci_minus":
        return pucci_minus(M, op.lam, op.Lam)
    if op.kind == "custom":
        return float(op.func(M.entries, x, y, t, s))
    vals = []
    for m in op.members:
        A = m.matrix(x, y, t, s)
        vals.append(float(np.sum(A * M.entries)) + float(m.source_value(x, y, t, s)))
    return max(vals) if op.kind == "bellman_max" else min(vals) if op.kind == "bellman_min" else vals[0]


def _freeze(fn: FieldFn, x0: np.ndarray, t0: float) -> FieldFn:
    def frozen(x, y, t, s):
        y = np.asarray(y, dtype=float)
        xb = np.broadcast_to(x0, y.shape)
        return fn(xb, y, np.full(y.shape[:-1], t0), s)

    return frozen


def rescaled_limit(op: EllipticOperator, x=None, t: float = 0.0) -> EllipticOperator:
    """Limit of ``eps * F(M / eps, ...)`` with the macroscopic slot frozen at ``(x, t)``.

    Sources are dropped and coefficient fields are evaluated at ``(x, t)``.
    """
    if op.kind == "custom":
        if op.homogeneous_part is None:
            raise UnsupportedLimitError("custom operator declares no homogeneous part")
        return rescaled_limit(op.homogeneous_part, x, t)
    if op.kind in ("pucci_plus", "pucci_minus"):
        return op
    if not op.has_source and not op.macro_dependent:
        return op
    x0 = np.zeros(op.dim) if x is None else _point(x, op.dim, "x")
    members = []
    for m in op.members:
        coeffs = tuple(_freeze(a, x0, float(t)) if callable(a) and op.macro_dependent else a for a in m.coeffs)
        members.append(Member(m.frame, coeffs, None))
    return EllipticOperator(
        kind=op.kind,
        lam=op.lam,
        Lam=op.Lam,
        dim=op.dim,
        members=tuple(members),
        periodic=op.periodic,
        macro_dependent=False,
        name=f"{op.name}|frozen" if op.name else "frozen",
        meta=dict(op.meta),
    )


@dataclass
class AuditReport:
    lower_margin: float
    upper_margin: float
    samples: int
    passed: bool
    worst: dict = field(default_factory=dict)


def ellipticity_audit(op: EllipticOperator, samples: int = 200, seed: int = 0) -> AuditReport:
    """Check ``lam tr N <= F(M+N) - F(M) <= Lam tr N`` on seeded random pairs."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    d = op.dim
    lo_worst, hi_worst = np.inf, np.inf
    worst: dict = {}
    for _ in range(samples):
        a = rng.normal(size=(d, d))
        M = SymMatrix(0.5 * (a + a.T) * rng.uniform(0.1, 10.0))
        b = rng.normal(size=(d, d))
        N_arr = b @ b.T * rng.uniform(0.01, 5.0)
        N_arr = 0.5 * (N_arr + N_arr.T)
        N = SymMatrix(N_arr)
        x, y = rng.uniform(-1, 1, d), rng.uniform(0, 1, d)
        t, s = rng.uniform(-1, 1), rng.uniform(0, 1)
        inc = evaluate(op, M + N, x, y, t, s) - evaluate(op, M, x, y, t, s)
        trN = N.trace()
        lo, hi = inc - op.lam * trN, op.Lam * trN - inc
        if lo < lo_worst:
            lo_worst = lo
            worst["lower"] = {"M": M.entries.tolist(), "N": N_arr.tolist()}
        if hi < hi_worst:
            hi_worst = hi
            worst["upper"] = {"M": M.entries.tolist(), "N": N_arr.tolist()}
    passed = lo_worst >= -1e-9 and hi_worst >= -1e-9
    return AuditReport(float(lo_worst), float(hi_worst), samples, passed, worst)


# ----------------------------------------------------------------------------
# Constructors


def pucci_operator(sign: str, lam: float, Lam: float, dim: int = 2) -> EllipticOperator:
    kind = {"+": "pucci_plus", "plus": "pucci_plus", "-": "pucci_minus", "minus": "pucci_minus"}[sign]
    return EllipticOperator(kind=kind, lam=lam, Lam=Lam, dim=dim, name=kind)


def linear_trace(
    coeffs: Sequence,
    frame: DirectionFrame | None = None,
    lam: float | None = None,
    Lam: float | None = None,
    periodic: bool = True,
    macro_dependent: bool = False,
    source: FieldFn | None = None,
    name: str = "linear_trace",
) -> EllipticOperator:
    """``sum_i a_i(x, y, t, s) e_i^T M e_i`` over an orthonormal frame.

    ``lam``/``Lam`` default to the extremes of the constant coefficients.
    """
    frame = frame or DirectionFrame.standard(len(coeffs))
    consts = [float(a) for a in coeffs if not callable(a)]
    if lam is None or Lam is None:
        if len(consts) != len(coeffs):
            raise OperatorError("declare lam/Lam for variable coefficients")
        lam = min(consts) if lam is None else lam
        Lam = max(consts) if Lam is None else Lam
    return EllipticOperator(
        kind="linear_trace",
        lam=lam,
        Lam=Lam,
        dim=frame.dim,
        members=(Member(frame, tuple(coeffs), source),),
        periodic=periodic,
        macro_dependent=macro_dependent,
        name=name,
    )


def heat(dim: int = 2) -> EllipticOperator:
    """``F(M) = tr M``."""
    return linear_trace([1.0] * dim, name="heat")


def bellman(
    members: Sequence[Member],
    lam: float,
    Lam: float,
    aggregate: str = "max",
    periodic: bool = True,
    macro_dependent: bool = False,
    name: str = "",
) -> EllipticOperator:
    members = tuple(members)
    if not members:
        raise OperatorError("a Bellman family needs members")
    kind = {"max": "bellman_max", "min": "bellman_min"}[aggregate]
    return EllipticOperator(
        kind=kind,
        lam=lam,
        Lam=Lam,
        dim=members[0].frame.dim,
        members=members,
        periodic=periodic,
        macro_dependent=macro_dependent,
        name=name or kind,
    )


def max_trace_operator(Lam: float = 2.0, dim: int = 2) -> EllipticOperator:
    """``F(M) = max{tr M, Lam tr M}``."""
    frame = DirectionFrame.standard(dim)
    members = (Member(frame, (1.0,) * dim), Member(frame, (float(Lam),) * dim))
    return bellman(members, 1.0, float(Lam), "max", name=f"max_trace(Lam={Lam:g})")


def family_angles(delta: float, K: int = 9) -> np.ndarray:
    """``K`` equally spaced angles strictly inside ``(-delta, delta)``."""
    if K < 1:
        raise OperatorError("K must be at least 1")
    k = np.arange(1, K + 1)
    return -delta + 2.0 * delta * k / (K + 1)


def rotated_family_operator(delta: float, K: int = 9, offset: float = 0.0) -> EllipticOperator:
    """``sup {tr M, 4 eta^T M eta + nu^T M nu}`` over frames rotated by angles in ``(-delta, delta)``.

    ``offset`` rotates the whole family (the frame angles become ``angle - offset``),
    which expresses the operator in coordinates turned by ``offset``.
    """
    members = [Member(DirectionFrame.standard(2), (1.0, 1.0))]
    for a in family_angles(delta, K):
        members.append(Member(rotation_frame(float(a) - offset), (4.0, 1.0)))
    op = bellman(members, 1.0, 4.0, "max", name=f"rotated_family(delta={delta:g},K={K},offset={offset:g})")
    return op
