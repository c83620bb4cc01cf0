"""Effective (homogenized) operator by the long-time slope of a torus problem."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .operators import DirectionFrame, EllipticOperator, OperatorError, SymMatrix, evaluate, linear_trace, pucci_operator
from .scheme import GridFunction, Lattice, run_until

__all__ = [
    "PreconditionError",
    "ErgodicResult",
    "ShiftReport",
    "EffectiveOperator",
    "ergodic_constant",
    "shift_invariance_check",
    "operator_key",
]


class PreconditionError(ValueError):
    pass


@dataclass
class ErgodicResult:
    value: float
    residual: float
    horizon: float
    torus_res: int


def _shifted_coords(z: np.ndarray, tau: float):
    def coords(X, t):
        return X, X + z, t, t + tau

    return coords


def ergodic_constant(
    base: EllipticOperator,
    M: SymMatrix | np.ndarray,
    torus_res: int = 32,
    horizon: float = 1.0,
    shift: tuple = (None, 0.0),
) -> ErgodicResult:
    """Slope of the mean of ``w`` for ``w_t = F(D^2 w + M, y + z, t + tau)`` on the unit torus.

    The slope is fitted on the second half of the run; the residual is the
    difference of the slopes fitted on its two halves.
    """
    if not base.periodic:
        raise PreconditionError("the ergodic constant needs a periodic operator")
    if torus_res < 16:
        raise PreconditionError("torus_res must be at least 16")
    M = M if isinstance(M, SymMatrix) else SymMatrix(np.asarray(M, dtype=float))
    d = base.dim
    z = np.zeros(d) if shift[0] is None else np.atleast_1d(np.asarray(shift[0], dtype=float))
    tau = float(shift[1])
    lat = Lattice.build((torus_res,) * d, 1.0 / torus_res, base.Lam, [("periodic", "periodic")] * d)
    times, means = [0.0], [0.0]

    def record(u: GridFunction) -> None:
        times.append(u.time)
        means.append(float(u.values.mean()))

    u0 = GridFunction(lat, np.zeros(lat.shape), 0.0)
    run_until(u0, base, None, None, horizon, coords=_shifted_coords(z, tau), M=M, callback=record)
    t, m = np.asarray(times), np.asarray(means)
    half = t >= 0.5 * horizon
    slope = float(np.polyfit(t[half], m[half], 1)[0])
    q3 = half & (t <= 0.75 * horizon)
    q4 = t >= 0.75 * horizon
    s3 = float(np.polyfit(t[q3], m[q3], 1)[0]) if q3.sum() > 2 else slope
    s4 = float(np.polyfit(t[q4], m[q4], 1)[0]) if q4.sum() > 2 else slope
    resid = max(abs(s3 - s4), 1e-12 * (1.0 + abs(slope)))
    return ErgodicResult(slope, resid, horizon, torus_res)


@dataclass
class ShiftReport:
    values: list
    residuals: list
    deviation: float
    passed: bool


def shift_invariance_check(
    base: EllipticOperator,
    M,
    shifts: Sequence[tuple],
    torus_res: int = 32,
    horizon: float = 1.0,
) -> ShiftReport:
    """Pass iff the pairwise spread of shifted ergodic constants is at most twice the fit residual."""
    if len(shifts) < 2:
        raise ValueError("at least two shifts are required")
    res = [ergodic_constant(base, M, torus_res, horizon, shift=s) for s in shifts]
    vals = [r.value for r in res]
    dev = max(abs(a - b) for a, b in itertools.combinations(vals, 2))
    return ShiftReport(vals, [r.residual for r in res], dev, dev <= 2.0 * max(r.residual for r in res))


def operator_key(op: EllipticOperator) -> str:
    """Stable hash of an operator's declared identity."""
    desc = json.dumps(
        {"kind": op.kind, "lam": op.lam, "Lam": op.Lam, "dim": op.dim, "name": op.name, "meta": op.meta},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def _mkey(M: SymMatrix) -> str:
    return json.dumps([round(v, 15) for v in M.entries.ravel().tolist()])


@dataclass
class EffectiveOperator:
    """Tabulated ``Fbar`` with degree-one interpolation along multiples of a matrix."""

    base: EllipticOperator
    torus_res: int = 32
    horizon: float = 1.0
    table: dict = field(default_factory=dict)

    def value(self, M) -> tuple[float, float]:
        M = M if isinstance(M, SymMatrix) else SymMatrix(np.asarray(M, dtype=float))
        key = _mkey(M)
        if key not in self.table:
            if self.base.constant_coefficients:
                self.table[key] = (float(evaluate(self.base, M)), 0.0)
            else:
                r = ergodic_constant(self.base, M, self.torus_res, self.horizon)
                self.table[key] = (r.value, r.residual)
        return self.table[key]

    def __call__(self, M) -> float:
        M = M if isinstance(M, SymMatrix) else SymMatrix(np.asarray(M, dtype=float))
        scale = float(np.max(np.abs(M.entries)))
        if scale == 0.0:
            return 0.0
        return scale * self.value(M.scale(1.0 / scale))[0]

    def directional(self, nu) -> tuple[float, float]:
        """``(a_plus, a_minus)`` with ``Fbar(m nu nu^T) = a_plus m_+ - a_minus m_-``."""
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        N = SymMatrix.outer(nu)
        return self.value(N)[0], -self.value(-N)[0]

    def restricted(self, nu) -> EllipticOperator:
        """One-dimensional operator ``m -> Fbar(m nu nu^T)``."""
        ap, am = self.directional(nu)
        if ap <= 0 or am <= 0:
            raise OperatorError("effective operator is not elliptic along nu")
        if abs(ap - am) <= 1e-14 * max(ap, am):
            return linear_trace([ap], name="effective_1d")
        if ap > am:
            return pucci_operator("+", am, ap, dim=1)
        return pucci_operator("-", ap, am, dim=1)

    def as_operator(self) -> EllipticOperator:
        """``Fbar`` as an operator the scheme can step.

        Constant-coefficient bases are their own homogenization; linear bases
        give the linear operator of the averaged coefficient matrix.
        """
        if self.base.constant_coefficients:
            return self.base
        if self.base.kind != "linear_trace":
            raise OperatorError("only constant-coefficient or linear bases have a steppable effective operator")
        d = self.base.dim
        A = np.zeros((d, d))
        for i in range(d):
            E = np.zeros((d, d))
            E[i, i] = 1.0
            A[i, i] = self.value(E)[0]
        if d == 2:
            E = np.array([[0.0, 1.0], [1.0, 0.0]])
            A[0, 1] = A[1, 0] = 0.5 * self.value(E)[0]
        vals, vecs = np.linalg.eigh(A)
        frame = DirectionFrame(tuple(vecs[:, k] for k in range(d)), label="effective")
        return linear_trace(list(vals), frame, name="effective_linear")

    def to_json(self) -> dict:
        return {
            "operator": operator_key(self.base),
            "torus_res": self.torus_res,
            "horizon": self.horizon,
            "table": {k: list(v) for k, v in sorted(self.table.items())},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, base: EllipticOperator, path: str | Path) -> EffectiveOperator:
        data = json.loads(Path(path).read_text())
        if data["operator"] != operator_key(base):
            raise ValueError("cached table belongs to a different operator")
        table = {k: tuple(v) for k, v in data["table"].items()}
        return cls(base, data["torus_res"], data["horizon"], table)
