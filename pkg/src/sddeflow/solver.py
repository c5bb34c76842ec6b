"""
Euler solvers for stochastic delay equations

    dx(t) = [H(t, x_t) + b(t, x(t))] dt + sum_j m_j(x(t)) dW_j(t),   x_s = eta.

``solve_direct`` discretizes the equation as written.  ``solve_conjugated``
integrates the pathwise equation for ``zeta(t) = xi(t, x(t))`` obtained by
conjugating with the flow ``Psi`` of the non-delay part, then maps back with
``x(t) = Psi(t, zeta(t))``.  It contains no stochastic integral.

Both solvers read the driving noise by grid index, so on a common path they
see the identical increments.  A list of paths runs an ensemble: member ``i``
of the batch is driven by ``paths[i]``.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import RangeError, Segment, ShapeError, TimeGrid, Trajectory, segment_at, steps_between
from .flow import (BLOWUP_BOUND, ClosedFormFlow, DiffusionSpec, DriftSpec, euler_update,
                   flow_evolve, flow_inverse, stratonovich_to_ito)
from .noise import BrownianPath
from .report import Status, VerificationReport


class SolverId(str, enum.Enum):
    DIRECT = "DIRECT"
    CONJUGATED = "CONJUGATED"


class FlowMode(str, enum.Enum):
    ANALYTIC = "ANALYTIC"
    NUMERIC = "NUMERIC"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        return None


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Drift decomposition ``G = H + b`` with diffusion.

    ``H(t, seg)`` receives a :class:`Segment` whose samples have shape
    ``(n, *batch, d)`` and returns ``(*batch, d)``.
    """

    dim: int
    delay: float
    H: Callable
    b: DriftSpec
    diffusion: DiffusionSpec
    name: str = ""
    time_dependent: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "diffusion", self.diffusion.with_dim(self.dim))

    @property
    def ito_drift(self) -> DriftSpec:
        return stratonovich_to_ito(self.b, self.diffusion)

    def G(self, t, seg: Segment) -> np.ndarray:
        """Full Itô drift ``H(t, seg) + b_ito(t, seg(0))``."""
        return self.H(t, seg) + self.ito_drift(t, seg.now)


def zero_H(t, seg):
    return np.zeros(seg.samples.shape[1:])


@dataclass(frozen=True, eq=False)
class SddeRun:
    trajectory: Trajectory
    initial: Segment
    start: float
    blowup: object
    solver_id: SolverId
    dt: float
    seeds: tuple = ()

    @property
    def n_history(self) -> int:
        return steps_between(0.0, self.initial.delay, self.dt, "delay")

    @property
    def path(self) -> np.ndarray:
        """Values on ``[start, end]`` (history nodes dropped)."""
        return self.trajectory.values[self.n_history:]

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    def segment(self, t: float) -> Segment:
        return segment_at(self.trajectory, t, self.initial.delay)

    def metadata(self) -> dict:
        bl = np.asarray(self.blowup)
        return {
            "solver_id": self.solver_id.value,
            "dt": self.dt,
            "start": self.start,
            "seed": list(self.seeds) if len(self.seeds) != 1 else self.seeds[0],
            "blowup": bool(bl.any()) if bl.ndim == 0 else bl.tolist(),
        }

    def to_csv(self, fh, member=None):
        """Write ``time, x1..xd``; `member` selects an ensemble member."""
        v = self.trajectory.values
        if member is not None:
            v = v[(slice(None),) + (member if isinstance(member, tuple) else (member,))]
        if v.ndim != 2:
            raise ShapeError("select an ensemble member to export")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"x{i + 1}" for i in range(v.shape[1])])
        for t, row in zip(self.trajectory.times, v):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True)


class _Noise:
    """Increments and path values for one path or a list of paths."""

    def __init__(self, path, s: float, n: int, dt: float):
        paths = list(path) if isinstance(path, (list, tuple)) else [path]
        self.batched = isinstance(path, (list, tuple))
        self.paths = paths
        p0 = paths[0]
        self.q = steps_between(0.0, dt, p0.dt, "solver dt")
        if self.q < 1:
            raise RangeError("solver dt must be a positive multiple of the path dt")
        for p in paths[1:]:
            if p.dt != p0.dt or p.m != p0.m:
                raise ShapeError("ensemble paths must share dt and driver count")
        self.k0 = [p.index_of(s) for p in paths]
        self.m = p0.m
        self.path_dt = p0.dt
        self.kstart = steps_between(0.0, s, p0.dt, "start time")
        incs = [p.increments_from(s, n, self.q) for p in paths]
        self.inc = np.stack(incs, axis=1) if self.batched else incs[0]
        self.seeds = tuple(p.seed for p in paths)

    def time(self, step: int) -> float:
        return (self.kstart + step * self.q) * self.path_dt

    def w(self, step: int) -> np.ndarray:
        vals = [p.values[k + step * self.q] for p, k in zip(self.paths, self.k0)]
        return np.stack(vals) if self.batched else vals[0]


def _prepare(sys: SystemSpec, eta: Segment, dt: float):
    if eta.delay != sys.delay:
        raise ShapeError(f"segment delay {eta.delay} != system delay {sys.delay}")
    if eta.dim != sys.dim:
        raise ShapeError(f"segment dim {eta.dim} != system dim {sys.dim}")
    p = steps_between(0.0, eta.spacing, dt, "segment spacing")
    if p < 1:
        raise RangeError("dt must divide the segment sample spacing")
    return p * (eta.n_samples - 1)


def _allocate(eta: Segment, n_lag: int, n: int, batch_shape: tuple):
    d = eta.dim
    values = np.full((n_lag + n + 1,) + batch_shape + (d,), np.nan)
    u = -eta.delay + np.arange(n_lag + 1) * (eta.delay / n_lag)
    # the time axis leads, so missing batch axes go right after it
    pad = (1,) * (len(batch_shape) - len(eta.batch_shape)) + eta.batch_shape + (d,)
    values[: n_lag + 1] = eta.at(u).reshape((n_lag + 1,) + pad)
    # exact pinning at the segment's own nodes
    p = n_lag // (eta.n_samples - 1)
    values[: n_lag + 1: p] = eta.samples.reshape((eta.n_samples,) + pad)
    return values


def _batch_shape(eta: Segment, noise: _Noise):
    nb = (len(noise.paths),) if noise.batched else ()
    try:
        return np.broadcast_shapes(eta.batch_shape, nb)
    except ValueError as exc:
        raise ShapeError(f"segment batch {eta.batch_shape} vs {len(noise.paths)} paths") from exc


def _finish(sys, eta, s, dt, values, n_lag, blown_at, solver_id, noise) -> SddeRun:
    n_total = values.shape[0] - 1
    blow = blown_at >= 0
    if values.ndim == 2 and blow:
        # single run: truncate after the first non-finite node
        n_total = n_lag + int(blown_at) - 1
        values = values[: n_total + 1]
    grid = TimeGrid(s - eta.delay, dt, n_total)
    blowup = bool(blow) if np.ndim(blow) == 0 else blow
    traj = Trajectory(grid, values, blowup)
    return SddeRun(traj, eta, s, blowup, solver_id, dt, noise.seeds)


def solve_direct(sys: SystemSpec, path, s: float, eta: Segment, T: float, dt: float) -> SddeRun:
    """Euler--Maruyama on the delay equation.

    ``x_{n+1} = x_n + [H(t_n, x_{t_n}) + b_ito(t_n, x_n)] dt + sum_j m_j(x_n) dW_{j,n}``.
    """
    n_lag = _prepare(sys, eta, dt)
    n = steps_between(0.0, T, dt, "horizon")
    noise = _Noise(path, s, n, dt)
    batch = _batch_shape(eta, noise)
    values = _allocate(eta, n_lag, n, batch)
    ito = sys.ito_drift
    diff = sys.diffusion
    r = sys.delay
    blown_at = np.full(batch, -1)
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n):
            tn = noise.time(k)
            seg = Segment.view(r, values[k: k + n_lag + 1])
            x = values[k + n_lag]
            drift = sys.H(tn, seg) + ito(tn, x)
            x_new = euler_update(x, drift, diff(x), noise.inc[k], dt)
            bad = ~np.all(np.abs(x_new) <= BLOWUP_BOUND, axis=-1)
            if np.any(bad):
                fresh = bad & (blown_at < 0)
                blown_at = np.where(fresh, k + 1, blown_at)
                x_new = np.where((blown_at >= 0)[..., None], np.nan, x_new)
                values[k + n_lag + 1] = x_new
                if np.all(blown_at >= 0):
                    break
                continue
            values[k + n_lag + 1] = x_new
    return _finish(sys, eta, s, dt, values, n_lag, blown_at, SolverId.DIRECT, noise)


def solve_conjugated(sys: SystemSpec, path, s: float, eta: Segment, T: float, dt: float,
                     flow_mode: FlowMode | str = FlowMode.ANALYTIC) -> SddeRun:
    """Solve through the pathwise conjugated equation.

    ``zeta' = (D Psi(t, zeta))^{-1} H(t, x_t)``, ``zeta(s) = xi(s, eta(0))``,
    ``x(t) = Psi(t, zeta(t))``, with ``Psi(t, .) = Psi_{0,t}``.  ANALYTIC mode
    uses the closed-form flow; NUMERIC mode uses :func:`flow_evolve` and
    :func:`flow_inverse` along the same path (cost quadratic in the number of
    steps, single path only).
    """
    flow_mode = FlowMode(flow_mode)
    n_lag = _prepare(sys, eta, dt)
    n = steps_between(0.0, T, dt, "horizon")
    noise = _Noise(path, s, n, dt)
    batch = _batch_shape(eta, noise)
    values = _allocate(eta, n_lag, n, batch)
    r = sys.delay
    blown_at = np.full(batch, -1)
    if flow_mode is FlowMode.ANALYTIC:
        flow = ClosedFormFlow(sys.b, sys.diffusion, sys.dim)
        zeta = flow.xi(noise.time(0), noise.w(0), values[n_lag])
        step_fn = None
    else:
        if noise.batched:
            raise ShapeError("NUMERIC flow mode runs a single path")
        if s < 0:
            raise RangeError("NUMERIC flow mode needs s >= 0")
        p = noise.paths[0]
        zeta = flow_inverse(sys.b, sys.diffusion, p, s, values[n_lag], dt)
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n):
            tn = noise.time(k)
            seg = Segment.view(r, values[k: k + n_lag + 1])
            h = sys.H(tn, seg)
            if flow_mode is FlowMode.ANALYTIC:
                f = flow.inv_jac_times(tn, noise.w(k), h)
                zeta = zeta + dt * f
                x_new = flow.psi(noise.time(k + 1), noise.w(k + 1), zeta)
            else:
                xk = values[k + n_lag]
                z = flow_inverse(sys.b, sys.diffusion, p, tn, xk, dt)
                jac = flow_evolve(sys.b, sys.diffusion, p, 0.0, tn, z, dt).jacobian_matrix
                f = np.linalg.solve(jac, h[..., None])[..., 0]
                zeta = zeta + dt * f
                x_new = flow_evolve(sys.b, sys.diffusion, p, 0.0, noise.time(k + 1),
                                    zeta, dt).point
            bad = ~np.all(np.abs(x_new) <= BLOWUP_BOUND, axis=-1)
            if np.any(bad):
                fresh = bad & (blown_at < 0)
                blown_at = np.where(fresh, k + 1, blown_at)
                x_new = np.where((blown_at >= 0)[..., None], np.nan, x_new)
                values[k + n_lag + 1] = x_new
                if np.all(blown_at >= 0):
                    break
                continue
            values[k + n_lag + 1] = x_new
    return _finish(sys, eta, s, dt, values, n_lag, blown_at, SolverId.CONJUGATED, noise)


def max_node_deviation(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def check_semiflow(sys: SystemSpec, path, s: float, t: float, u: float, eta: Segment,
                   dt: float) -> VerificationReport:
    """Solving over ``[s, u]`` must equal restarting at ``t`` from ``x_t``, bitwise."""
    if not s <= t <= u:
        raise ValueError("need s <= t <= u")
    full = solve_direct(sys, path, s, eta, u - s, dt)
    stats = {"s": s, "t": t, "u": u, "dt": dt}
    if np.any(full.blowup):
        return VerificationReport("semiflow", Status.FAIL, {"deviation": 0.0}, [],
                                  stats, ["blow-up before u"])
    restart_seg = full.segment(t)
    part = solve_direct(sys, path, t, restart_seg, u - t, dt)
    off = steps_between(s, t, dt)
    a = full.trajectory.values[off:]
    b = part.trajectory.values
    equal = a.shape == b.shape and np.array_equal(a, b)
    dev = max_node_deviation(a, b) if a.shape == b.shape else float("inf")
    stats.update(max_deviation=dev, shared_nodes=int(b.shape[0]))
    cex = []
    if not equal:
        idx = np.unravel_index(np.argmax(np.abs(a - b)), a.shape)
        cex.append({"input": {"node": int(idx[0]), "time": float(full.times[off + idx[0]])},
                    "value": dev})
    return VerificationReport("semiflow", Status.PASS if equal else Status.FAIL,
                              {"deviation": 0.0}, cex, stats)


def random_segments(rng: np.random.Generator, n: int, dim: int, delay: float,
                    n_nodes: int, radius: float) -> Segment:
    """``n`` random segments with sup-norm exactly `radius`."""
    x = rng.standard_normal((n_nodes, n, dim))
    scale = np.max(np.abs(x), axis=(0, 2))
    return Segment(delay, x * (radius / scale)[None, :, None])


def check_growth_condition(H: Callable, gamma: float, samples: int = 200,
                           radii: Sequence[float] = (1e1, 1e2, 1e3, 1e4), *, dim: int = 1,
                           delay: float = 1.0, n_nodes: int = 11, seed: int = 0,
                           slack: float = 0.1) -> VerificationReport:
    """Empirical exponent of ``max |H|`` against the sup-norm radius.

    A sampled heuristic for the sublinear growth bound ``|H| <= c (1 + |eta|^gamma)``:
    WARN, not FAIL, when the fitted exponent exceeds ``gamma + slack``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    maxima = []
    for R in radii:
        seg = random_segments(rng, samples, dim, delay, n_nodes, R)
        vals = np.asarray(H(0.0, seg))
        maxima.append(float(np.max(np.linalg.norm(vals, axis=-1))))
    maxima = np.array(maxima)
    if np.all(maxima <= 1e-300):
        exponent = 0.0
    else:
        exponent = float(np.polyfit(np.log(radii), np.log(np.maximum(maxima, 1e-300)), 1)[0])
    status = Status.PASS if exponent <= gamma + slack else Status.WARN
    return VerificationReport(
        "growth_condition", status, {"gamma": gamma, "slack": slack, "samples": samples},
        [] if status is Status.PASS else [{"input": {"radii": list(radii)},
                                           "value": maxima.tolist()}],
        {"exponent": exponent, "radii": list(radii), "max_norm": maxima.tolist()},
        ["sampled diagnostic, not a proof of global existence"])
