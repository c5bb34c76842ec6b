"""
Value types for the delay phase space.

A state of a delay system is a history segment ``u -> x(t + u)`` on ``[-r, 0]``.
Segments are stored as uniform samples and evaluated between samples by linear
interpolation.  Sample arrays have shape ``(n_samples, *batch, d)`` so the same
type carries a single history or an ensemble of histories; the time axis always
comes first.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Inputs have incompatible shapes."""


class RangeError(ValueError):
    """A requested time lies outside the sampled window."""


class NumericError(ArithmeticError):
    """An iterative numerical procedure failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def steps_between(a: float, b: float, dt: float, what: str = "time") -> int:
    """Number of whole steps of size `dt` from `a` to `b`; raises if not aligned."""
    q = (b - a) / dt
    k = int(round(q))
    if abs(q - k) > 1e-7 * max(1.0, abs(q)):
        raise RangeError(f"{what} {b!r} is not on the grid {a!r} + k*{dt!r}")
    return k


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")

    def time(self, k):
        # index arithmetic only, never running sums; an origin on the dt
        # lattice is folded into the index so that t = k dt exactly
        i0 = round(self.t0 / self.dt)
        if i0 * self.dt == self.t0:
            return (i0 + np.asarray(k)) * self.dt
        return self.t0 + np.asarray(k) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.time(np.arange(self.n_steps + 1))

    @property
    def t_end(self) -> float:
        return float(self.time(self.n_steps))

    def index(self, t: float) -> int:
        k = steps_between(self.t0, t, self.dt)
        if k < 0 or k > self.n_steps:
            raise RangeError(f"time {t!r} outside [{self.t0!r}, {self.t_end!r}]")
        return k


@dataclass(frozen=True)
class Trajectory:
    """Grid-sampled path; ``values`` has shape ``(n_steps + 1, *batch, d)``.

    Nodes after a blow-up are NaN for the affected ensemble members.
    """

    grid: TimeGrid
    values: np.ndarray
    blowup: object = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2:
            raise ShapeError("values must have shape (n_steps + 1, ..., d)")
        if v.shape[0] != self.grid.n_steps + 1:
            raise ShapeError(
                f"expected {self.grid.n_steps + 1} values, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not np.any(self.blowup) and not np.all(np.isfinite(v)):
            raise ValueError("non-finite trajectory values without blow-up flag")

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t):
        """Linear interpolation of the path at time(s) `t`."""
        t = np.asarray(t, dtype=float)
        q = (t - self.grid.t0) / self.grid.dt
        eps = 1e-9 * max(1.0, self.grid.n_steps)
        if np.any(q < -eps) or np.any(q > self.grid.n_steps + eps):
            raise RangeError("interpolation time outside the trajectory window")
        return _interp_rows(self.values, q)


def _interp_rows(values: np.ndarray, q) -> np.ndarray:
    """Evaluate the piecewise-linear interpolant of ``values`` (time axis 0) at
    fractional indices `q`.  Integral `q` return stored rows exactly."""
    q = np.asarray(q, dtype=float)
    n = values.shape[0] - 1
    qr = np.round(q)
    on_node = np.abs(q - qr) <= 1e-9
    q = np.where(on_node, qr, np.clip(q, 0, n))
    lo = np.clip(np.floor(q).astype(int), 0, max(n - 1, 0))
    w = q - lo
    if n == 0:
        return values[np.zeros_like(lo)]
    a = values[lo]
    b = values[np.minimum(lo + 1, n)]
    w = w.reshape(w.shape + (1,) * (values.ndim - 1))
    out = a + w * (b - a)
    # exact node values; the formula above can lose a bit when w == 0
    mask = on_node.reshape(on_node.shape + (1,) * (values.ndim - 1))
    idx = np.clip(qr.astype(int), 0, n)
    return np.where(mask, values[idx], out)


@dataclass(frozen=True)
class Segment:
    """A history on ``[-delay, 0]`` sampled at ``n`` uniform nodes.

    ``samples`` has shape ``(n, *batch, d)``; ``samples[-1]`` is the value at
    ``u = 0``.
    """

    delay: float
    samples: np.ndarray
    _spacing: float = field(init=False, repr=False)

    def __post_init__(self):
        if not self.delay > 0:
            raise ValueError("delay must be positive")
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 2:
            raise ShapeError("a segment needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("segment samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "_spacing", self.delay / (s.shape[0] - 1))

    @classmethod
    def view(cls, delay: float, samples: np.ndarray) -> "Segment":
        """Wrap an existing sample buffer without copying or validating it."""
        seg = object.__new__(cls)
        v = samples.view()
        v.setflags(write=False)
        object.__setattr__(seg, "delay", delay)
        object.__setattr__(seg, "samples", v)
        object.__setattr__(seg, "_spacing", delay / (samples.shape[0] - 1))
        return seg

    @classmethod
    def constant(cls, value, delay: float, n_samples: int = 2) -> "Segment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(delay, np.broadcast_to(value, (n_samples,) + value.shape))

    @classmethod
    def from_function(cls, fn, delay: float, n_samples: int) -> "Segment":
        """Sample ``fn(u)`` (returning a d-vector) on the uniform node grid."""
        u = -delay + np.arange(n_samples) * (delay / (n_samples - 1))
        return cls(delay, np.stack([np.atleast_1d(fn(x)) for x in u]))

    @property
    def dim(self) -> int:
        return self.samples.shape[-1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def batch_shape(self) -> tuple:
        return self.samples.shape[1:-1]

    @property
    def spacing(self) -> float:
        return self._spacing

    @property
    def nodes(self) -> np.ndarray:
        return -self.delay + np.arange(self.n_samples) * self._spacing

    @property
    def now(self) -> np.ndarray:
        """The endpoint value at ``u = 0``."""
        return self.samples[-1]

    def at(self, u):
        """Value(s) at lag(s) ``u`` in ``[-delay, 0]`` (linear interpolation)."""
        u = np.asarray(u, dtype=float)
        q = (u + self.delay) / self._spacing
        if np.any(q < -1e-9) or np.any(q > self.n_samples - 1 + 1e-9):
            raise RangeError("lag outside [-delay, 0]")
        return _interp_rows(self.samples, q)

    __call__ = at

    def resample(self, n_samples: int) -> "Segment":
        return Segment(self.delay, self.at(-self.delay + np.arange(n_samples)
                                           * (self.delay / (n_samples - 1))))

    def member(self, idx) -> "Segment":
        """Pick one ensemble member (index into the batch axes)."""
        idx = idx if isinstance(idx, tuple) else (idx,)
        return Segment(self.delay, self.samples[(slice(None),) + idx])


class OrderFlag(enum.Enum):
    LEQ = "LEQ"
    STRICT = "STRICT"
    STRONG = "STRONG"
    INCOMPARABLE = "INCOMPARABLE"

    def implies_leq(self) -> bool:
        return self is not OrderFlag.INCOMPARABLE


def _check_compatible(a: Segment, b: Segment):
    if a.samples.shape != b.samples.shape:
        raise ShapeError(f"segment shapes differ: {a.samples.shape} vs {b.samples.shape}")
    if a.delay != b.delay:
        raise ShapeError(f"segment delays differ: {a.delay} vs {b.delay}")


def compare_segments(a: Segment, b: Segment) -> OrderFlag:
    """Order of `a` relative to `b` in the pointwise cone order.

    Returns the strongest flag that holds: STRONG (``a << b``), STRICT
    (``a < b``), LEQ (``a == b``), or INCOMPARABLE.  Comparison is exact.
    """
    _check_compatible(a, b)
    if not np.all(a.samples <= b.samples):
        return OrderFlag.INCOMPARABLE
    if np.all(a.samples < b.samples):
        return OrderFlag.STRONG
    if np.array_equal(a.samples, b.samples):
        return OrderFlag.LEQ
    return OrderFlag.STRICT


def segment_sup_norm(a: Segment) -> float:
    return float(np.max(np.abs(a.samples)))


def segment_at(traj: Trajectory, t: float, r: float, n_samples: int | None = None) -> Segment:
    """The history segment ``u -> traj(t + u)``, ``u`` in ``[-r, 0]``.

    With `n_samples` omitted the segment is sampled on the trajectory grid,
    which requires `r` to be a whole number of steps.
    """
    g = traj.grid
    lo = t - r
    eps = 1e-9 * max(1.0, abs(t))
    if lo < g.t0 - eps or t > g.t_end + eps:
        raise RangeError(f"segment [{lo!r}, {t!r}] outside [{g.t0!r}, {g.t_end!r}]")
    if n_samples is None:
        n_samples = steps_between(0.0, r, g.dt, "delay") + 1
    u = -r + np.arange(n_samples) * (r / (n_samples - 1))
    q = (t - g.t0 + u) / g.dt
    return Segment(r, _interp_rows(traj.values, q))
