"""The plant: linear dynamics under piecewise-constant inputs and supervisory feedback.

``reach`` is segment-exact: over a segment of length ``h`` with constant
value ``v`` the state maps as ``x -> E x + G v`` where ``E = exp(A h)`` and
``G = int_0^h exp(A s) ds B`` both come out of one exponential of the
augmented block matrix ``[[A, B], [0, 0]]``. This stays valid for singular A.

The supervisory law ``u_{y,x}(t) = u(t) + C (y(t) - x(t))`` makes the tracking
error obey ``e' = (A + BC) e``, so ``e(t) = exp((A+BC) t) e(0)`` exactly.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import AlignmentError, CoverageError, DimensionError, DomainError
from .linalg import as_matrix, mat_exp, vec_norm
from .trimming import OpenBox, contains_all

DEFAULT_H = 0.01
DEFAULT_DT = 1e-3
_ALIGN_RTOL = 1e-12
_LEVEL_DECIMALS = 12


@dataclass(frozen=True)
class InputGrid:
    """Finite per-dimension input levels, strictly increasing."""

    levels: tuple

    def __post_init__(self):
        lv = tuple(tuple(float(v) for v in dim) for dim in self.levels)
        if not lv:
            raise DimensionError("input grid needs at least one dimension")
        for dim in lv:
            if not dim:
                raise DomainError("every input dimension needs at least one level")
            if any(b <= a for a, b in zip(dim, dim[1:])):
                raise DomainError("grid levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def regular(cls, box: OpenBox, step: float, offset: float = 0.0) -> "InputGrid":
        """Levels ``offset + k*step`` lying strictly inside ``box`` in every dimension."""
        if step <= 0:
            raise DomainError("grid step must be positive")
        dims = []
        for lo, hi in zip(box.lower, box.upper):
            k0 = math.floor((lo - offset) / step) - 1
            k1 = math.ceil((hi - offset) / step) + 1
            vals = [round(offset + k * step, _LEVEL_DECIMALS) for k in range(k0, k1 + 1)]
            dims.append(tuple(v for v in vals if lo < v < hi))
        return cls(tuple(dims))

    @property
    def dim(self) -> int:
        return len(self.levels)

    def nearest(self, value) -> np.ndarray:
        """Per-dimension nearest level; exact midpoints go to the lower level."""
        value = np.asarray(value, dtype=float).reshape(-1)
        out = np.empty(self.dim)
        for i, lv in enumerate(self.levels):
            arr = np.asarray(lv)
            j = int(np.searchsorted(arr, value[i]))
            if j == 0:
                out[i] = arr[0]
            elif j == len(arr):
                out[i] = arr[-1]
            else:
                lower, upper = arr[j - 1], arr[j]
                out[i] = upper if (upper - value[i]) < (value[i] - lower) else lower
        return out

    def restricted(self, box: OpenBox) -> "InputGrid | None":
        """Levels inside ``box`` per dimension, or None if any dimension empties."""
        if box.empty:
            return None
        dims = []
        for i, lv in enumerate(self.levels):
            kept = tuple(v for v in lv if box.lower[i] < v < box.upper[i])
            if not kept:
                return None
            dims.append(kept)
        return InputGrid(tuple(dims))

    def contains_level(self, value) -> bool:
        value = np.asarray(value, dtype=float).reshape(-1)
        return all(any(abs(v - l) <= 1e-9 for l in lv) for v, lv in zip(value, self.levels))

    def points(self) -> np.ndarray:
        """Cartesian product of levels, lexicographic order, shape (N, m)."""
        mesh = np.meshgrid(*[np.asarray(l) for l in self.levels], indexing="ij")
        return np.stack([g.reshape(-1) for g in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantInput:
    """Input holding ``values[k]`` on ``[k h, (k+1) h)``."""

    h: float
    values: np.ndarray

    def __post_init__(self):
        if not self.h > 0:
            raise DomainError("segment length must be positive")
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if vals.ndim != 2 or vals.shape[0] == 0:
            raise DimensionError("values must be a non-empty (segments, m) array")
        vals.setflags(write=False)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, duration: float, h: float | None = None) -> "PiecewiseConstantInput":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if h is None:
            return cls(duration, value.reshape(1, -1))
        n = _segments(duration, h)
        return cls(h, np.tile(value, (n, 1)))

    @property
    def duration(self) -> float:
        return self.h * self.values.shape[0]

    @property
    def segments(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        k = min(int(math.floor(t / self.h + 1e-9)), self.segments - 1)
        return self.values[max(k, 0)]

    def key(self) -> tuple:
        """Hashable identity used for catalog deduplication and ordering."""
        return ("pc", round(self.h, 12)) + tuple(round(float(v), 12) for v in self.values.reshape(-1))

    def __eq__(self, other):
        return isinstance(other, PiecewiseConstantInput) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True, eq=False)
class TrajectoryTrace:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if not (len(t) == len(self.states) == len(self.inputs)):
            raise DimensionError("trace arrays must have equal lengths")
        if len(t) and (t[0] != 0.0 or np.any(np.diff(t) <= 0)):
            raise DomainError("trace times must start at 0 and increase strictly")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for t, x, u in zip(self.times, self.states, self.inputs):
            buf.write(",".join("%.9g" % v for v in (t, *x, *u)) + "\n")
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    input_box: OpenBox
    quantized_inputs: InputGrid
    h: float = DEFAULT_H

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise DimensionError("B must have as many rows as A")
        if self.input_box.dim != B.shape[1]:
            raise DimensionError("input box dimension must equal the column count of B")
        if self.input_box.empty:
            raise DomainError("input box must be non-empty")
        if self.quantized_inputs.dim != B.shape[1]:
            raise DimensionError("input grid dimension must equal the column count of B")
        for i, lv in enumerate(self.quantized_inputs.levels):
            if not all(self.input_box.lower[i] < v < self.input_box.upper[i] for v in lv):
                raise DomainError("every quantized input level must lie inside the input box")
        if not self.h > 0:
            raise DomainError("segment length h must be positive")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def closed_loop(self, C) -> np.ndarray:
        C = as_matrix(C, "C")
        if C.shape != (self.m, self.n):
            raise DimensionError(f"C must be {self.m}x{self.n}, got {C.shape}")
        return self.A + self.B @ C


def _segments(tau: float, h: float) -> int:
    k = round(tau / h)
    if k < 1 or abs(k * h - tau) > _ALIGN_RTOL * max(abs(tau), h):
        raise AlignmentError(f"horizon {tau} is not an integer multiple of {h}")
    return int(k)


@lru_cache(maxsize=256)
def _discretize_cached(Ab: bytes, Bb: bytes, n: int, m: int, h: float):
    A = np.frombuffer(Ab).reshape(n, n)
    B = np.frombuffer(Bb).reshape(n, m)
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    F = mat_exp(aug, h)
    E = F[:n, :n].copy()
    G = F[:n, n:].copy()
    E.setflags(write=False)
    G.setflags(write=False)
    return E, G


def discretize(A, B, h: float):
    """Return ``(exp(A h), int_0^h exp(A s) ds B)`` for a zero-order hold of length h."""
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    return _discretize_cached(A.tobytes(), B.tobytes(), A.shape[0], B.shape[1], float(h))


def reach(sys: LinearSystem, x0, u: PiecewiseConstantInput, tau: float) -> np.ndarray:
    """State reached at time ``tau`` from ``x0`` under ``u``, segment-exact."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise DimensionError("initial state has the wrong dimension")
    if u.m != sys.m:
        raise DimensionError("input has the wrong dimension")
    if not tau > 0:
        raise DomainError("horizon must be positive")
    if tau > u.duration * (1 + _ALIGN_RTOL) + 1e-15:
        raise CoverageError(f"input covers {u.duration}, horizon {tau} requested")
    k = _segments(tau, u.h)
    E, G = discretize(sys.A, sys.B, u.h)
    for v in u.values[:k]:
        x = E @ x + G @ v
    return x


def reach_many(sys: LinearSystem, x0s, u, tau: float) -> np.ndarray:
    """``reach`` for every row of ``x0s`` under the same input."""
    X = np.atleast_2d(np.asarray(x0s, dtype=float))
    if isinstance(u, SupervisoryInput):
        return u.endpoints(sys, X, tau)
    k = _segments(tau, u.h)
    if tau > u.duration * (1 + _ALIGN_RTOL) + 1e-15:
        raise CoverageError(f"input covers {u.duration}, horizon {tau} requested")
    E, G = discretize(sys.A, sys.B, u.h)
    drift = np.zeros(sys.n)
    Ek = np.eye(sys.n)
    for v in u.values[:k]:
        drift = E @ drift + G @ v
        Ek = E @ Ek
    return X @ Ek.T + drift


@dataclass(frozen=True, eq=False)
class SupervisoryRun:
    """Co-simulated reference ``x`` (driven by u) and tracker ``y`` (driven by u_{y,x})."""

    y: TrajectoryTrace
    x: TrajectoryTrace
    closed_loop: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.y.times

    @property
    def supervisory(self) -> np.ndarray:
        return self.y.inputs

    @property
    def error(self) -> np.ndarray:
        return self.y.states - self.x.states

    def max_displacement(self) -> float:
        return float(np.max(np.abs(self.y.inputs - self.x.inputs)))


def _sample_grid(tau: float, dt: float, h: float):
    if not dt > 0:
        raise DomainError("dt must be positive")
    if dt > h * (1 + 1e-12):
        raise DomainError(f"dt={dt} must not exceed the segment length {h}")
    ratio = round(h / dt)
    if abs(ratio * dt - h) > 1e-9 * h:
        raise AlignmentError(f"segment length {h} is not a multiple of dt={dt}")
    K = _segments(tau, dt)
    seg = np.arange(K + 1) // ratio
    return K, seg


def simulate_supervisory(sys: LinearSystem, C, y0, x0, u: PiecewiseConstantInput,
                         tau: float, dt: float = DEFAULT_DT) -> SupervisoryRun:
    C = as_matrix(C, "C")
    M = sys.closed_loop(C)
    K, seg = _sample_grid(tau, dt, u.h)
    if tau > u.duration * (1 + _ALIGN_RTOL) + 1e-15:
        raise CoverageError(f"input covers {u.duration}, horizon {tau} requested")
    seg = np.minimum(seg, u.segments - 1)
    E, G = discretize(sys.A, sys.B, dt)
    P = mat_exp(M, dt)
    xs = np.empty((K + 1, sys.n))
    es = np.empty((K + 1, sys.n))
    xs[0] = np.asarray(x0, dtype=float).reshape(-1)
    es[0] = np.asarray(y0, dtype=float).reshape(-1) - xs[0]
    uref = u.values[seg]
    for k in range(K):
        xs[k + 1] = E @ xs[k] + G @ uref[k]
        es[k + 1] = P @ es[k]
    usup = uref + es @ C.T
    times = np.arange(K + 1) * dt
    return SupervisoryRun(
        y=TrajectoryTrace(times, xs + es, usup),
        x=TrajectoryTrace(times, xs, uref.copy()),
        closed_loop=M,
    )


@dataclass(frozen=True, eq=False)
class SupervisoryInput:
    """Analog supervisory input ``u(t) + C exp((A+BC) t) e0`` driving a tracker.

    ``e0`` is tracker minus reference at time 0. ``values`` holds the input
    sampled every ``h`` (used for trimmed-set membership); endpoints are
    computed exactly from the error propagation, not from the samples.
    """

    base: PiecewiseConstantInput
    C: np.ndarray
    e0: np.ndarray
    closed_loop: np.ndarray
    h: float
    values: np.ndarray

    @classmethod
    def track(cls, sys: LinearSystem, C, base: PiecewiseConstantInput, e0, tau: float,
              dt: float = DEFAULT_DT, ce=None) -> "SupervisoryInput":
        C = as_matrix(C, "C")
        e0 = np.asarray(e0, dtype=float).reshape(-1)
        K, seg = _sample_grid(tau, dt, base.h)
        if ce is None:
            ce = displacement_stack(sys, C, tau, dt)
        seg = np.minimum(seg, base.segments - 1)
        vals = base.values[seg] + ce @ e0
        vals.setflags(write=False)
        return cls(base, C, e0, sys.closed_loop(C), float(dt), vals)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def key(self) -> tuple:
        return ("sup", round(self.h, 12)) + self.base.key() + tuple(
            round(float(v), 12) for v in self.e0)

    def endpoints(self, sys: LinearSystem, y0s, tau: float) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(y0s, dtype=float))
        ref = reach_many(sys, Y - self.e0, self.base, tau)
        return ref + mat_exp(self.closed_loop, tau) @ self.e0

    def __eq__(self, other):
        return isinstance(other, SupervisoryInput) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


@dataclass(frozen=True)
class BoundsVerdict:
    ok: bool
    first_violation: float | None = None

    def __bool__(self):
        return self.ok


def supervisory_in_bounds(sys: LinearSystem, C, y0, x0, u: PiecewiseConstantInput,
                          tau: float, dt: float = DEFAULT_DT) -> BoundsVerdict:
    """Whether every sampled supervisory value stays inside the open input box."""
    run = simulate_supervisory(sys, C, y0, x0, u, tau, dt)
    box = sys.input_box
    bad = np.any((run.supervisory <= box.lo) | (run.supervisory >= box.hi), axis=1)
    if not bad.any():
        return BoundsVerdict(True)
    return BoundsVerdict(False, float(run.times[int(np.argmax(bad))]))


def displacement_stack(sys: LinearSystem, C, tau: float, dt: float) -> np.ndarray:
    """``C exp((A+BC) t_k)`` for ``t_k = k dt``, shape (K+1, m, n)."""
    C = as_matrix(C, "C")
    M = sys.closed_loop(C)
    K = _segments(tau, dt)
    P = mat_exp(M, dt)
    out = np.empty((K + 1, sys.m, sys.n))
    Phi = np.eye(sys.n)
    for k in range(K + 1):
        out[k] = C @ Phi
        Phi = P @ Phi
    return out


def supervisory_exit_batch(sys: LinearSystem, C, e0s, inputs, pair_input, tau: float,
                           dt: float = DEFAULT_DT, ce=None):
    """First exit time (or NaN) and max displacement for many (error, input) pairs.

    ``inputs`` is a list of PiecewiseConstantInput sharing one segment length;
    ``pair_input[p]`` selects the input driving pair ``p`` with initial error
    ``e0s[p]``.
    """
    hs = {u.h for u in inputs}
    if len(hs) != 1:
        raise DomainError("batched inputs must share a segment length")
    h = hs.pop()
    K, seg = _sample_grid(tau, dt, h)
    nseg = max(u.segments for u in inputs)
    U = np.empty((len(inputs), nseg, sys.m))
    for i, u in enumerate(inputs):
        U[i, :u.segments] = u.values
        U[i, u.segments:] = u.values[-1]
    seg = np.minimum(seg, nseg - 1)
    if ce is None:
        ce = displacement_stack(sys, C, tau, dt)
    first, disp = _kernels.supervisory_sweep(
        ce, U, seg, np.atleast_2d(e0s), np.asarray(pair_input), sys.input_box.lo, sys.input_box.hi)
    exit_t = np.where(first >= 0, first * dt, np.nan)
    return exit_t, disp


def quantize_feedback(trace, grid: InputGrid, h: float) -> PiecewiseConstantInput:
    """Sample-and-hold the supervisory values at segment starts, snapped to the grid.

    ``trace`` is a TrajectoryTrace (its ``inputs`` are quantized) or a
    SupervisoryRun (its supervisory values are used).
    """
    if isinstance(trace, SupervisoryRun):
        trace = trace.y
    times = np.asarray(trace.times)
    duration = float(times[-1])
    nseg = _segments(duration, h)
    values = []
    for k in range(nseg):
        idx = int(np.argmin(np.abs(times - k * h)))
        values.append(grid.nearest(trace.inputs[idx]))
    return PiecewiseConstantInput(h, np.array(values))


def proximity(a, b) -> float:
    return vec_norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def inputs_within(u: PiecewiseConstantInput, box: OpenBox) -> bool:
    return contains_all(box, u.values)


def simulate(sys: LinearSystem, x0, u: PiecewiseConstantInput, tau: float,
             dt: float = DEFAULT_DT) -> TrajectoryTrace:
    """Open-loop trace sampled every ``dt``, exact within each step."""
    K, seg = _sample_grid(tau, dt, u.h)
    if tau > u.duration * (1 + _ALIGN_RTOL) + 1e-15:
        raise CoverageError(f"input covers {u.duration}, horizon {tau} requested")
    seg = np.minimum(seg, u.segments - 1)
    E, G = discretize(sys.A, sys.B, dt)
    uu = u.values[seg]
    xs = np.empty((K + 1, sys.n))
    xs[0] = np.asarray(x0, dtype=float).reshape(-1)
    for k in range(K):
        xs[k + 1] = E @ xs[k] + G @ uu[k]
    return TrajectoryTrace(np.arange(K + 1) * dt, xs, uu)
