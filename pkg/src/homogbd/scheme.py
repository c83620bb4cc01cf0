"""Monotone explicit finite differences for ``u_t - F(D^2 u, x, y, t, s) - b . Du = 0``.

Second derivatives use three-point differences along the lattice axes and,
in the plane, along the two lattice diagonals.  Every admissible
coefficient matrix is written as a nonnegative combination of those four
directional differences, so each update is a nondecreasing function of the
neighbouring values whenever ``dt`` respects :func:`cfl_bound`.  The
resulting discrete operator is exact on quadratics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import DirectionFrame, EllipticOperator, SymMatrix

__all__ = [
    "SchemeError",
    "CFLError",
    "StencilError",
    "ProbeError",
    "Lattice",
    "GridFunction",
    "DriftTerm",
    "DiscreteOperator",
    "ProbeRecord",
    "cfl_bound",
    "stencil_offsets",
    "directional_second_difference",
    "step",
    "run_until",
    "solve_steady",
    "solve_periodic",
    "PeriodicState",
    "residual",
    "interpolate",
    "identity_coords",
]

log = logging.getLogger(__name__)

TAGS = ("dirichlet", "periodic", "neumann_far")
SIGMA = 0.9

Coords = Callable[[np.ndarray, float], tuple]


class SchemeError(RuntimeError):
    pass


class CFLError(SchemeError):
    pass


class StencilError(SchemeError):
    pass


class ProbeError(SchemeError):
    pass


def identity_coords(X: np.ndarray, t: float) -> tuple:
    """Cell-problem convention ``(x, y, t, s) = (X, X, t, t)``."""
    return X, X, t, t


def stencil_offsets(dim: int) -> tuple[tuple[int, ...], ...]:
    if dim == 1:
        return ((1,),)
    return ((1, 0), (0, 1), (1, 1), (1, -1))


def cfl_bound(h: float, Lam: float, dim: int, drift_bound: float = 0.0) -> float:
    """Largest monotone time step: ``1 / (2 dim Lam / h^2 + |b|_1 / h)``."""
    return 1.0 / (2.0 * dim * Lam / h**2 + drift_bound / h)


@dataclass(frozen=True, eq=False)
class DriftTerm:
    """Velocity ``b`` (constant vector or callable of ``t``) with declared bound ``bmax`` on ``|b|_1``."""

    b: np.ndarray | Callable[[float], np.ndarray]
    bmax: float

    def __call__(self, t: float) -> np.ndarray:
        v = self.b(t) if callable(self.b) else self.b
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if np.sum(np.abs(v)) > self.bmax * (1 + 1e-12):
            raise SchemeError(f"drift {v} exceeds its declared bound {self.bmax}")
        return v

    @classmethod
    def zero(cls, dim: int) -> DriftTerm:
        return cls(np.zeros(dim), 0.0)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Uniform lattice ``X = origin + h * sum_k i_k axis_k`` with per-face tags."""

    shape: tuple
    h: float
    dt: float
    tags: tuple
    frame: DirectionFrame | None = None
    origin: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        shape = tuple(int(n) for n in self.shape)
        dim = len(shape)
        if dim not in (1, 2):
            raise SchemeError("lattices are 1- or 2-dimensional")
        if any(n < 3 for n in shape):
            raise SchemeError("each axis needs at least 3 nodes")
        tags = tuple(tuple(t) for t in self.tags)
        if len(tags) != dim:
            raise SchemeError("one (lo, hi) tag pair per axis is required")
        for lo, hi in tags:
            if lo not in TAGS or hi not in TAGS:
                raise SchemeError(f"unknown boundary tag in {(lo, hi)}")
            if (lo == "periodic") != (hi == "periodic"):
                raise SchemeError("periodic faces come in opposite pairs")
        if not (self.h > 0 and self.dt > 0):
            raise SchemeError("h and dt must be positive")
        frame = self.frame or DirectionFrame.standard(dim)
        if frame.dim != dim:
            raise SchemeError("frame dimension differs from lattice dimension")
        origin = np.zeros(dim) if self.origin is None else np.asarray(self.origin, dtype=float)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def build(
        cls,
        shape: Sequence[int],
        h: float,
        Lam: float,
        tags: Sequence,
        frame: DirectionFrame | None = None,
        origin=None,
        drift_bound: float = 0.0,
        sigma: float = SIGMA,
    ) -> Lattice:
        """Lattice with ``dt = sigma * cfl_bound``."""
        dt = sigma * cfl_bound(h, Lam, len(shape), drift_bound)
        return cls(tuple(shape), h, dt, tuple(tags), frame, origin)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def R(self) -> np.ndarray:
        return self.frame.matrix()

    def positions(self) -> np.ndarray:
        """Physical node positions, shape ``shape + (dim,)``."""
        if "pos" not in self._cache:
            idx = np.stack(np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij"), axis=-1)
            self._cache["pos"] = self.origin + self.h * idx @ self.R.T
        return self._cache["pos"]

    def axis_coords(self, k: int) -> np.ndarray:
        return self.h * np.arange(self.shape[k])

    def _map_axis(self, j: np.ndarray, k: int) -> np.ndarray:
        n = self.shape[k]
        lo, hi = self.tags[k]
        out = j.copy()
        below, above = j < 0, j >= n
        if lo == "periodic":
            out[below] = j[below] + n
            out[above] = j[above] - n
            return out
        out[below] = -1 if lo == "dirichlet" else -j[below]
        out[above] = -1 if hi == "dirichlet" else 2 * (n - 1) - j[above]
        return out

    def neighbours(self, offset: Sequence[int]) -> np.ndarray:
        """Flat index of ``node + offset`` for every node; ``-1`` where no rule applies."""
        key = ("nb", tuple(offset))
        if key not in self._cache:
            grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
            mapped = [self._map_axis(g + o, k) for k, (g, o) in enumerate(zip(grids, offset))]
            missing = np.zeros(self.shape, dtype=bool)
            for m in mapped:
                missing |= m < 0
            flat = np.ravel_multi_index([np.where(missing, 0, m) for m in mapped], self.shape)
            flat = np.where(missing, -1, flat).ravel()
            self._cache[key] = flat
        return self._cache[key]

    def interior_positions(self) -> np.ndarray:
        if "ipos" not in self._cache:
            self._cache["ipos"] = self.positions().reshape(-1, self.dim)[~self.dirichlet_mask()]
        return self._cache["ipos"]

    def dirichlet_mask(self) -> np.ndarray:
        if "dmask" not in self._cache:
            mask = np.zeros(self.shape, dtype=bool)
            for k, (lo, hi) in enumerate(self.tags):
                sl = [slice(None)] * self.dim
                if lo == "dirichlet":
                    sl[k] = 0
                    mask[tuple(sl)] = True
                if hi == "dirichlet":
                    sl[k] = self.shape[k] - 1
                    mask[tuple(sl)] = True
            self._cache["dmask"] = mask.ravel()
        return self._cache["dmask"]

    def with_dt(self, dt: float) -> Lattice:
        return Lattice(self.shape, self.h, dt, self.tags, self.frame, self.origin)


@dataclass(frozen=True, eq=False)
class GridFunction:
    lattice: Lattice
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(self.lattice.shape)
        if not np.all(np.isfinite(v)):
            raise SchemeError("grid function has non-finite values")
        object.__setattr__(self, "values", v)


# ----------------------------------------------------------------------------
# Discrete operator


def _weights_from_matrix(A: np.ndarray) -> list[np.ndarray]:
    """Nonnegative stencil weights with ``sum_o w_o (o^T M o) = tr(A M)``.

    ``A`` has shape ``(..., d, d)``; for ``d = 2`` the order is x, y, (1,1), (1,-1).
    """
    if A.shape[-1] == 1:
        return [A[..., 0, 0]]
    a11, a22, a12 = A[..., 0, 0], A[..., 1, 1], A[..., 0, 1]
    wp, wm = np.maximum(a12, 0.0), np.maximum(-a12, 0.0)
    return [a11 - wp - wm, a22 - wp - wm, wp, wm]


def _pucci_optimal_matrix(p, m, q, lam, Lam, sign):
    """Maximiser (``sign=+1``) or minimiser of ``tr(A [[p, m], [m, q]])`` over the Pucci class."""
    theta = 0.5 * np.arctan2(2.0 * m, p - q)
    c, s = np.cos(theta), np.sin(theta)
    top, other = (Lam, lam) if sign > 0 else (lam, Lam)
    a11 = other + (top - other) * c * c
    a22 = other + (top - other) * s * s
    a12 = (top - other) * c * s
    return a11, a12, a22


class DiscreteOperator:
    """Compiled form of an :class:`EllipticOperator` on a lattice frame.

    ``value`` maps directional second differences to ``F``; ``policy`` returns
    the linear weights and source of the optimal member at every node.
    """

    def __init__(self, op: EllipticOperator, frame: DirectionFrame | None = None, coords: Coords = identity_coords):
        if op.kind == "custom":
            raise SchemeError("custom operators have no monotone discretisation")
        self.op = op
        self.dim = op.dim
        self.R = (frame or DirectionFrame.standard(op.dim)).matrix()
        self.coords = coords
        self.offsets = stencil_offsets(self.dim)
        self.pucci = op.kind in ("pucci_plus", "pucci_minus")
        if self.pucci and self.dim == 2 and op.Lam > 3.0 * op.lam + 1e-12:
            raise StencilError("Pucci class is not representable on the 9-point stencil when Lam > 3 lam")
        self.static = op.constant_coefficients or bool(op.meta.get("time_independent"))
        self._coef_cache: dict = {}

    # -- coefficients
    def member_weights(self, X: np.ndarray, t: float) -> list[tuple[list[np.ndarray], np.ndarray]]:
        """Per member: stencil weights and source at positions ``X`` (shape ``(N, d)``)."""
        key = (id(X), X.shape, X.size and float(X.flat[-1])) if self.static else None
        if key is not None and key in self._coef_cache:
            return self._coef_cache[key]
        x, y, tt, s = self.coords(X, t)
        y = np.asarray(y, dtype=float)
        if self.op.periodic:
            y = np.mod(y, 1.0)
            s = np.mod(s, 1.0)
        out = []
        for m in self.op.members:
            A = m.matrix(x, y, tt, s)
            A = np.einsum("ki,...kl,lj->...ij", self.R, A, self.R)
            w = _weights_from_matrix(A)
            if any(np.min(wi) < -1e-12 for wi in w):
                raise StencilError("coefficient matrix is not diagonally dominant in the lattice frame")
            src = np.broadcast_to(np.asarray(m.source_value(x, y, tt, s), dtype=float), X.shape[:-1])
            out.append(([np.maximum(wi, 0.0) for wi in w], src))
        if key is not None:
            self._coef_cache = {key: out}
        return out

    def center_weight_bound(self, X: np.ndarray, t: float) -> float:
        """``max sum_o 2 w_o`` over nodes and members (in units of ``1/h^2``)."""
        if self.pucci:
            return 2.0 * self.dim * self.op.Lam
        return max(float(np.max(2.0 * sum(w))) for w, _ in self.member_weights(X, t))

    # -- evaluation
    def _pucci(self, D: list[np.ndarray], want_policy: bool):
        lam, Lam = self.op.lam, self.op.Lam
        sign = 1 if self.op.kind == "pucci_plus" else -1

        def g(x):
            return np.where(x > 0, Lam, lam) * x if sign > 0 else np.where(x > 0, lam, Lam) * x

        if self.dim == 1:
            val = g(D[0])
            if not want_policy:
                return val
            w = np.where(D[0] > 0, Lam, lam) if sign > 0 else np.where(D[0] > 0, lam, Lam)
            return val, [w]
        Dx, Dy, Dp, Dm = D
        wx0 = (np.where(Dx > 0, Lam, lam) if sign > 0 else np.where(Dx > 0, lam, Lam))
        wy0 = (np.where(Dy > 0, Lam, lam) if sign > 0 else np.where(Dy > 0, lam, Lam))
        zero = np.zeros_like(Dx)
        cands = [[wx0, wy0, zero, zero]]
        for sgn, Dd in ((1, Dp), (-1, Dm)):
            mval = sgn * (Dd - Dx - Dy) / 2.0
            a11, a12, a22 = _pucci_optimal_matrix(Dx, mval, Dy, lam, Lam, sign)
            ok = sgn * a12 >= 0
            b = np.abs(a12)
            w = [a11 - b, a22 - b, b if sgn > 0 else zero, b if sgn < 0 else zero]
            cands.append((w, ok))
        base = cands[0]
        best_val = sum(wi * di for wi, di in zip(base, D))
        best_w = [wi.copy() for wi in base]
        for w, ok in cands[1:]:
            v = sum(wi * di for wi, di in zip(w, D))
            better = ok & ((v > best_val) if sign > 0 else (v < best_val))
            best_val = np.where(better, v, best_val)
            if want_policy:
                for i in range(4):
                    best_w[i] = np.where(better, w[i], best_w[i])
        if not want_policy:
            return best_val
        return best_val, best_w

    def evaluate(self, D: list[np.ndarray], X: np.ndarray, t: float, want_policy: bool = False):
        """``F`` from the directional differences ``D`` (one array per stencil offset)."""
        if self.pucci:
            res = self._pucci(D, want_policy)
            if not want_policy:
                return res
            val, w = res
            return val, w, np.zeros_like(val)
        members = self.member_weights(X, t)
        best_val = best_w = best_src = None
        agg = self.op.kind
        for w, src in members:
            v = sum(wi * di for wi, di in zip(w, D)) + src
            if best_val is None:
                best_val, best_w, best_src = v, list(w), src
                continue
            better = v > best_val if agg == "bellman_max" else v < best_val
            best_val = np.where(better, v, best_val)
            if want_policy:
                best_w = [np.where(better, wi, bi) for wi, bi in zip(w, best_w)]
                best_src = np.where(better, src, best_src)
        if not want_policy:
            return best_val
        return best_val, [np.broadcast_to(b, best_val.shape) for b in best_w], np.broadcast_to(best_src, best_val.shape)

    def matrix_shift(self, M: SymMatrix | None) -> list[float] | None:
        """Values ``o^T M o`` in lattice coordinates, added to each difference."""
        if M is None:
            return None
        Ml = self.R.T @ M.entries @ self.R
        return [float(np.asarray(o) @ Ml @ np.asarray(o)) for o in self.offsets]


def _differences(values: np.ndarray, lat: Lattice, mask: np.ndarray | None = None) -> list[np.ndarray]:
    flat = values.ravel()
    out = []
    for o in stencil_offsets(lat.dim):
        ip, im = lat.neighbours(o), lat.neighbours(tuple(-v for v in o))
        if mask is not None:
            ip, im = ip[mask], im[mask]
            center = flat[mask]
        else:
            center = flat
        if np.any(ip < 0) or np.any(im < 0):
            raise StencilError(f"missing neighbour along offset {o} without a boundary rule")
        out.append((flat[ip] - 2.0 * center + flat[im]) / lat.h**2)
    return out


def directional_second_difference(u: GridFunction, node: Sequence[int], e) -> float:
    """``(u(node + e h_e) - 2 u(node) + u(node - e h_e)) / h_e^2`` for a lattice axis or diagonal ``e``."""
    lat = u.lattice
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    off = None
    for o in stencil_offsets(lat.dim):
        ov = np.asarray(o, dtype=float)
        for sgn in (1, -1):
            if np.allclose(sgn * ov / np.linalg.norm(ov), e, atol=1e-12):
                off = tuple(int(sgn * v) for v in o)
    if off is None:
        raise StencilError(f"{e} is neither a lattice axis nor a lattice diagonal")
    i = int(np.ravel_multi_index(tuple(node), lat.shape))
    ip = lat.neighbours(off)[i]
    im = lat.neighbours(tuple(-v for v in off))[i]
    if ip < 0 or im < 0:
        raise StencilError(f"node {tuple(node)} misses a neighbour along {off}")
    flat = u.values.ravel()
    he2 = lat.h**2 * float(np.dot(off, off))
    return float((flat[ip] - 2 * flat[i] + flat[im]) / he2)


def _upwind(values: np.ndarray, lat: Lattice, b_lat: np.ndarray, mask: np.ndarray):
    flat = values.ravel()
    center = flat[mask]
    out = np.zeros_like(center)
    for k in range(lat.dim):
        if b_lat[k] == 0.0:
            continue
        o = [0] * lat.dim
        o[k] = 1 if b_lat[k] > 0 else -1
        nb = lat.neighbours(tuple(o))[mask]
        if np.any(nb < 0):
            raise StencilError("upwind neighbour missing")
        out += abs(b_lat[k]) * (flat[nb] - center) / lat.h
    return out


BoundaryData = Callable[[np.ndarray, float], np.ndarray]


def _compile(op, lat: Lattice, coords: Coords, dop: DiscreteOperator | None) -> DiscreteOperator:
    if dop is not None:
        return dop
    return DiscreteOperator(op, lat.frame, coords)


def _check_cfl(lat: Lattice, dop: DiscreteOperator, X: np.ndarray, t: float, b_lat: np.ndarray, dt: float) -> None:
    center = dop.center_weight_bound(X, t) / lat.h**2 + float(np.sum(np.abs(b_lat))) / lat.h
    if dt * center > 1.0 + 1e-12:
        raise CFLError(f"dt={dt:.3e} exceeds the monotone bound {1.0 / center:.3e}")


def step(
    u: GridFunction,
    op: EllipticOperator,
    drift: DriftTerm | None = None,
    bc: BoundaryData | None = None,
    *,
    dt: float | None = None,
    coords: Coords = identity_coords,
    M: SymMatrix | None = None,
    dop: DiscreteOperator | None = None,
) -> GridFunction:
    """One forward-Euler step ``u + dt (F(D_h^2 u + M) + b . D_h u)``.

    Dirichlet face nodes receive ``bc(X, t + dt)``; they keep their values when
    ``bc`` is ``None``.
    """
    lat = u.lattice
    dt = lat.dt if dt is None else dt
    dop = _compile(op, lat, coords, dop)
    mask = ~lat.dirichlet_mask()
    X = lat.interior_positions()
    b = drift(u.time) if drift is not None else np.zeros(lat.dim)
    b_lat = lat.R.T @ b
    _check_cfl(lat, dop, X, u.time, b_lat, dt)
    D = _differences(u.values, lat, mask)
    shift = dop.matrix_shift(M)
    if shift is not None:
        D = [d + c for d, c in zip(D, shift)]
    F = dop.evaluate(D, X, u.time)
    inc = F + _upwind(u.values, lat, b_lat, mask) if np.any(b_lat) else F
    new = u.values.ravel().copy()
    new[mask] += dt * inc
    t_new = u.time + dt
    if bc is not None and not mask.all():
        Xd = lat.positions().reshape(-1, lat.dim)[~mask]
        new[~mask] = np.broadcast_to(bc(Xd, t_new), Xd.shape[:1])
    return GridFunction(lat, new.reshape(lat.shape), t_new)


def interpolate(u: GridFunction, X) -> float:
    """Multilinear interpolation at the physical point ``X``."""
    lat = u.lattice
    X = np.atleast_1d(np.asarray(X, dtype=float))
    xi = lat.R.T @ (X - lat.origin) / lat.h
    corners_idx, corners_w = [], []
    for k in range(lat.dim):
        n = lat.shape[k]
        per = lat.tags[k][0] == "periodic"
        v = xi[k] % n if per else xi[k]
        if not per and (v < -1e-9 or v > n - 1 + 1e-9):
            raise ProbeError(f"point {X} lies outside the lattice")
        v = min(max(v, 0.0), n - 1.0) if not per else v
        i0 = int(math.floor(v))
        f = v - i0
        i1 = (i0 + 1) % n if per else min(i0 + 1, n - 1)
        i0 = i0 % n if per else i0
        corners_idx.append((i0, i1))
        corners_w.append((1.0 - f, f))
    val = 0.0
    for bits in np.ndindex(*([2] * lat.dim)):
        w = np.prod([corners_w[k][b] for k, b in enumerate(bits)])
        if w:
            val += w * u.values[tuple(corners_idx[k][b] for k, b in enumerate(bits))]
    return float(val)


@dataclass
class ProbeRecord:
    run_id: str
    x: tuple
    t: float
    value: float
    error: str = ""


def run_until(
    u0: GridFunction,
    op: EllipticOperator,
    drift: DriftTerm | None,
    bc: BoundaryData | None,
    t_end: float,
    probes: Sequence[tuple] = (),
    *,
    coords: Coords = identity_coords,
    M: SymMatrix | None = None,
    run_id: str = "run",
    callback: Callable[[GridFunction], None] | None = None,
) -> tuple[GridFunction, list[ProbeRecord]]:
    """Step to ``t_end``; the last step is shortened to land on ``t_end``.

    Each probe ``(X, t)`` is sampled at the time level nearest to ``t``.
    """
    if t_end < u0.time:
        raise SchemeError("t_end precedes the initial time")
    lat = u0.lattice
    dop = DiscreteOperator(op, lat.frame, coords)
    pending = sorted(((float(t), tuple(np.atleast_1d(X).tolist())) for X, t in probes), key=lambda p: p[0])
    records: list[ProbeRecord] = []

    def sample(u: GridFunction, final: bool) -> None:
        while pending and (pending[0][0] <= u.time + 0.5 * lat.dt or final):
            t, X = pending.pop(0)
            try:
                records.append(ProbeRecord(run_id, X, t, interpolate(u, X)))
            except ProbeError as exc:
                records.append(ProbeRecord(run_id, X, t, float("nan"), str(exc)))

    u = u0
    sample(u, False)
    while u.time < t_end - 1e-14 * max(1.0, abs(t_end)):
        dt = min(lat.dt, t_end - u.time)
        u = step(u, op, drift, bc, dt=dt, coords=coords, M=M, dop=dop)
        if callback is not None:
            callback(u)
        sample(u, False)
    sample(u, True)
    return u, records


class _Assembler:
    """Sparse generator ``u -> F_policy(D_h^2 u) + b . D_h u`` at interior nodes, frozen at a policy."""

    def __init__(self, lat: Lattice, op: EllipticOperator, drift: DriftTerm | None, coords: Coords, t: float):
        self.lat = lat
        self.dop = DiscreteOperator(op, lat.frame, coords)
        self.mask = ~lat.dirichlet_mask()
        self.interior = np.flatnonzero(self.mask)
        self.bnodes = np.flatnonzero(~self.mask)
        self.X = lat.interior_positions()
        offs = stencil_offsets(lat.dim)
        self.nbp = [lat.neighbours(o)[self.mask] for o in offs]
        self.nbm = [lat.neighbours(tuple(-v for v in o))[self.mask] for o in offs]
        if any(np.any(a < 0) for a in self.nbp + self.nbm):
            raise StencilError("interior node misses a neighbour")
        self.set_time(drift, t)

    def set_time(self, drift: DriftTerm | None, t: float) -> None:
        lat, interior = self.lat, self.interior
        self.t = t
        b = drift(t) if drift is not None else np.zeros(lat.dim)
        self.b_lat = lat.R.T @ b
        self.drows, self.dcols, self.ddata = [], [], []
        for k in range(lat.dim):
            if self.b_lat[k] == 0.0:
                continue
            o = [0] * lat.dim
            o[k] = 1 if self.b_lat[k] > 0 else -1
            nb = lat.neighbours(tuple(o))[self.mask]
            c = abs(self.b_lat[k]) / lat.h
            self.drows += [interior, interior]
            self.dcols += [nb, interior]
            self.ddata += [np.full(interior.size, c), np.full(interior.size, -c)]

    def policy(self, u: np.ndarray):
        D = _differences(u.reshape(self.lat.shape), self.lat, self.mask)
        _, w, src = self.dop.evaluate(D, self.X, self.t, want_policy=True)
        return w, src

    def matrix(self, w, boundary_rows: float = 1.0) -> sp.csr_matrix:
        """Generator with rows ``boundary_rows * e_i`` at Dirichlet nodes."""
        lat, interior = self.lat, self.interior
        h2 = lat.h**2
        rows = [interior] * (2 * len(self.nbp) + 1) + self.drows + [self.bnodes]
        cols = self.nbp + self.nbm + [interior] + self.dcols + [self.bnodes]
        diag = -2.0 * sum(w) / h2
        data = [wi / h2 for wi in w] * 2 + [diag] + self.ddata + [np.full(self.bnodes.size, boundary_rows)]
        return sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(lat.size, lat.size)
        )

    def increment(self, u: np.ndarray) -> np.ndarray:
        D = _differences(u.reshape(self.lat.shape), self.lat, self.mask)
        F = self.dop.evaluate(D, self.X, self.t)
        return F + _upwind(u.reshape(self.lat.shape), self.lat, self.b_lat, self.mask) if np.any(self.b_lat) else F


def solve_steady(
    u0: GridFunction,
    op: EllipticOperator,
    drift: DriftTerm | None = None,
    bc: BoundaryData | None = None,
    *,
    coords: Coords = identity_coords,
    t: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 60,
) -> tuple[GridFunction, dict]:
    """Fixed point of :func:`step` for time-independent data by policy iteration.

    Returns the grid function and a report with iteration count and the
    explicit-step residual ``max |F(D_h^2 u) + b . D_h u|`` at interior nodes.
    """
    lat = u0.lattice
    t = u0.time if t is None else t
    asm = _Assembler(lat, op, drift, coords, t)
    if asm.bnodes.size == 0:
        raise SchemeError("steady problem without Dirichlet nodes is singular")
    u = u0.values.ravel().copy()
    if bc is not None:
        Xd = lat.positions().reshape(-1, lat.dim)[asm.bnodes]
        u[asm.bnodes] = np.broadcast_to(bc(Xd, t), Xd.shape[:1])
    it = 0
    prev_policy = None
    for it in range(1, max_iter + 1):
        w, src = asm.policy(u)
        A = asm.matrix(w)
        rhs = np.zeros(lat.size)
        rhs[asm.interior] = -src
        rhs[asm.bnodes] = u[asm.bnodes]
        u_new = spla.spsolve(A.tocsc(), rhs)
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        policy = np.concatenate([np.ravel(wi) for wi in w])
        if change <= tol * max(1.0, float(np.max(np.abs(u)))):
            break
        if prev_policy is not None and np.array_equal(policy, prev_policy) and change < 1e-9:
            break
        prev_policy = policy
    res = asm.increment(u)
    report = {"iterations": it, "residual": float(np.max(np.abs(res))) if res.size else 0.0}
    return GridFunction(lat, u.reshape(lat.shape), u0.time), report


@dataclass
class PeriodicState:
    final: GridFunction
    window: list
    periods: int
    changes: list
    relaxed: bool


def solve_periodic(
    u0: GridFunction,
    op: EllipticOperator,
    drift: DriftTerm | None,
    bc: BoundaryData | None,
    period: float,
    *,
    coords: Coords = identity_coords,
    tol: float = 1e-7,
    max_periods: int = 60,
    snapshots: int = 16,
) -> PeriodicState:
    """Time-periodic regime of the explicit scheme under forcing of period ``period``.

    Each period is stepped explicitly; slow modes of the period map are then
    removed by ``u <- u_T - (T A)^{-1} (u_T - u_0)`` with ``A`` the generator at
    the current policy. Convergence is declared when one period changes no
    interior value by more than ``tol``. The window holds ``snapshots`` levels
    spread over one further period.
    """
    if not period > 0:
        raise SchemeError("period must be positive")
    lat = u0.lattice
    asm = _Assembler(lat, op, drift, coords, u0.time)
    u = u0
    changes: list = []
    relaxed = False
    k = 0
    for k in range(1, max_periods + 1):
        u_end, _ = run_until(u, op, drift, bc, u.time + period, coords=coords)
        delta = (u_end.values - u.values).ravel()
        change = float(np.max(np.abs(delta[asm.interior]))) if asm.interior.size else 0.0
        changes.append(change)
        u = u_end
        if change <= tol:
            relaxed = True
            break
        if asm.bnodes.size == 0:
            continue
        asm.set_time(drift, u.time)
        w, _ = asm.policy(u.values.ravel())
        A = asm.matrix(w, boundary_rows=1.0 / period) * period
        rhs = delta.copy()
        rhs[asm.bnodes] = 0.0
        corr = spla.spsolve(A.tocsc(), rhs)
        u = GridFunction(lat, (u.values.ravel() - corr).reshape(lat.shape), u.time)
    window = []
    t0 = u.time
    for j in range(1, snapshots + 1):
        u, _ = run_until(u, op, drift, bc, t0 + period * j / snapshots, coords=coords)
        window.append(u)
    return PeriodicState(u, window, k, changes, relaxed)


def residual(
    phi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    op: EllipticOperator,
    drift: DriftTerm | Callable | None,
    sample_nodes: Sequence,
    *,
    h: float = 1e-2,
    dt: float = 1e-4,
    frame: DirectionFrame | None = None,
    coords: Coords = identity_coords,
) -> np.ndarray:
    """``phi_t - F(D_h^2 phi) - b . D phi`` at sample points ``(X, t)``.

    ``phi(X, t)`` is vectorised over ``X`` of shape ``(N, d)``.  The time
    derivative and the drift gradient use centred differences.
    """
    dim = op.dim
    dop = DiscreteOperator(op, frame, coords)
    R = dop.R
    pts = [(np.atleast_1d(np.asarray(X, dtype=float)), float(t)) for X, t in sample_nodes]
    out = np.empty(len(pts))
    by_time: dict[float, list[int]] = {}
    for i, (_, t) in enumerate(pts):
        by_time.setdefault(t, []).append(i)
    for t, idx in by_time.items():
        X = np.stack([pts[i][0] for i in idx])
        p0 = phi(X, t)
        D = []
        for o in stencil_offsets(dim):
            v = h * (R @ np.asarray(o, dtype=float))
            D.append((phi(X + v, t) - 2.0 * p0 + phi(X - v, t)) / h**2)
        F = dop.evaluate(D, X, t)
        pt = (phi(X, t + dt) - phi(X, t - dt)) / (2.0 * dt)
        res = pt - F
        if drift is not None:
            b = np.atleast_1d(drift(t))
            grad = np.stack(
                [(phi(X + h * e, t) - phi(X - h * e, t)) / (2.0 * h) for e in np.eye(dim)], axis=-1
            )
            res = res - grad @ b
        out[idx] = res
    return out
