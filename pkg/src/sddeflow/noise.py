"""
Two-sided Brownian paths with counter-based Gaussian increments.

The increment over the global step ``k`` for driver ``j`` is a pure function of
``(seed, k, j)``: it is produced from one Philox block whose counter encodes
``k`` and ``j``.  Any window of any path is therefore reproducible without
generating the rest of the path, and shifted paths reuse the very same draws.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import RangeError, TimeGrid, _interp_rows, steps_between

_COUNTER_OFFSET = 1 << 62
_TWO_M53 = 2.0 ** -53


def standard_normals(seed: int, k0: int, n: int, m: int) -> np.ndarray:
    """Standard normal draws for global steps ``k0 .. k0+n-1``, shape ``(n, m)``."""
    out = np.empty((n, m))
    if n == 0:
        return out
    for j in range(m):
        # Philox emits the block for counter+1 first
        bitgen = np.random.Philox(key=int(seed) & ((1 << 64) - 1),
                                  counter=[_COUNTER_OFFSET + k0 - 1, j, 0, 0])
        raw = bitgen.random_raw(4 * n).reshape(n, 4)
        u1 = ((raw[:, 0] >> np.uint64(11)).astype(float) + 1.0) * _TWO_M53
        u2 = (raw[:, 1] >> np.uint64(11)).astype(float) * _TWO_M53
        out[:, j] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return out


def _integrate(increments: np.ndarray, base: int) -> np.ndarray:
    n, m = increments.shape
    w = np.zeros((n + 1, m))
    if base < n:
        w[base + 1:] = np.cumsum(increments[base:], axis=0)
    if base > 0:
        w[:base] = -np.cumsum(increments[base - 1::-1], axis=0)[::-1]
    return w


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """An ``m``-dimensional Wiener path sampled on ``grid``, pinned to 0 at t=0.

    ``increments[k]`` is the increment over ``[grid.time(k), grid.time(k+1)]``;
    it is the primary data, ``values`` is its running sum from the origin.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int | None = None
    base_offset: int = 0
    step0: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.grid.n_steps:
            raise ValueError("increments must have shape (n_steps, m)")
        if not 0 <= self.base_offset <= self.grid.n_steps:
            raise RangeError("time 0 must be a node of the path grid")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        vals = _integrate(inc, self.base_offset)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, values, dt: float, base_offset: int = 0) -> "BrownianPath":
        """Build a path from explicit node values (``values[base_offset]`` must be 0)."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if np.any(v[base_offset] != 0.0):
            raise ValueError("path must vanish at its origin")
        grid = TimeGrid(-base_offset * dt, dt, v.shape[0] - 1)
        return cls(grid, np.diff(v, axis=0), None, base_offset)

    @property
    def m(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def t_minus(self) -> float:
        return self.base_offset * self.grid.dt

    @property
    def t_plus(self) -> float:
        return (self.grid.n_steps - self.base_offset) * self.grid.dt

    def index_of(self, t: float) -> int:
        """Grid index of time `t` (relative to the path's own origin)."""
        k = steps_between(0.0, t, self.grid.dt) + self.base_offset
        if not 0 <= k <= self.grid.n_steps:
            raise RangeError(f"time {t!r} outside path window "
                             f"[{-self.t_minus!r}, {self.t_plus!r}]")
        return k

    def at(self, t):
        """W(t) with linear interpolation between nodes."""
        t = np.asarray(t, dtype=float)
        q = t / self.grid.dt + self.base_offset
        if np.any(q < -1e-9) or np.any(q > self.grid.n_steps + 1e-9):
            raise RangeError("time outside path window")
        return _interp_rows(self.values, q)

    def increments_from(self, t: float, n: int, q: int = 1) -> np.ndarray:
        """``n`` increments over steps of ``q`` path steps starting at time `t`.

        With ``q == 1`` the stored draws are returned unchanged.
        """
        k = self.index_of(t)
        if k + n * q > self.grid.n_steps:
            raise RangeError(
                f"path window ends at {self.t_plus!r}, need "
                f"{t + n * q * self.grid.dt!r}")
        block = self.increments[k:k + n * q]
        if q == 1:
            return block
        return block.reshape(n, q, self.m).sum(axis=1)

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"W{j + 1}" for j in range(self.m)])
        for k in range(self.grid.n_steps + 1):
            t = (k - self.base_offset) * self.grid.dt
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in self.values[k]])


def sample_path(seed: int, grid: TimeGrid, m: int, step0: int = 0) -> BrownianPath:
    """Sample a path on `grid`, which must contain time 0 as a node.

    `step0` is the global counter index of the step starting at time 0; it
    defaults to 0 so that ``sample_path(seed, ...)`` over different windows
    agree exactly on their overlap.
    """
    base = steps_between(grid.t0, 0.0, grid.dt, "time 0")
    if not 0 <= base <= grid.n_steps:
        raise RangeError("path grid must contain time 0")
    z = standard_normals(seed, step0 - base, grid.n_steps, m)
    return BrownianPath(grid, z * np.sqrt(grid.dt), seed, base, step0)


def window_grid(t_minus: float, t_plus: float, dt: float) -> TimeGrid:
    """Grid over ``[-t_minus, t_plus]`` with 0 as a node."""
    n_minus = steps_between(0.0, t_minus, dt, "t_minus")
    n_plus = steps_between(0.0, t_plus, dt, "t_plus")
    return TimeGrid(-n_minus * dt, dt, n_minus + n_plus)


def wiener_shift(path: BrownianPath, k: int) -> BrownianPath:
    """The shifted path ``t -> W(t + k dt) - W(k dt)``.

    The shifted path reuses the same increment draws, so the group law holds
    exactly: ``wiener_shift(wiener_shift(p, a), b)`` is ``wiener_shift(p, a + b)``.
    """
    k = int(k)
    base = path.base_offset + k
    if not 0 <= base <= path.grid.n_steps:
        raise RangeError(f"shift by {k} steps leaves the sampled window")
    grid = TimeGrid(-base * path.grid.dt, path.grid.dt, path.grid.n_steps)
    return BrownianPath(grid, path.increments, path.seed, base, path.step0 + k)
