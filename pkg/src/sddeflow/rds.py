"""
Random dynamical system layer.

A :class:`Cocycle` fixes one Brownian path per base seed.  ``phi(t, theta_k w)``
is evaluated by solving on the path shifted by ``k`` grid steps, so every
application with the same seed replays the same increments by index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .core import NumericError, OrderFlag, RangeError, Segment, compare_segments, steps_between
from .domains import DomainSpec
from .noise import BrownianPath, sample_path, wiener_shift, window_grid
from .order import check_quasimonotone, sample_ordered_pairs
from .report import Status, VerificationReport
from .solver import SystemSpec, random_segments, solve_direct
from .systems import BiochemParams


class TruncationError(NumericError):
    """The truncated improper integral has a tail above tolerance."""


def check_autonomous(sys: SystemSpec, n: int = 16, seed: int = 0,
                     times=(0.0, 1.7)) -> bool:
    """Sampled test that ``H`` and ``b`` do not depend on time."""
    if sys.time_dependent:
        return False
    rng = np.random.default_rng(seed)
    seg = random_segments(rng, n, sys.dim, sys.delay, 5, 1.0)
    seg = Segment(sys.delay, np.abs(seg.samples))
    h = [np.asarray(sys.H(t, seg)) for t in times]
    b = [np.asarray(sys.b(t, seg.now)) * np.ones_like(seg.now) for t in times]
    return all(np.array_equal(h[0], x) for x in h[1:]) and \
        all(np.array_equal(b[0], x) for x in b[1:])


@dataclass(frozen=True, eq=False)
class Cocycle:
    sys: SystemSpec
    base_seed: int
    window: tuple
    dt: float
    path: BrownianPath = field(init=False, repr=False)

    def __post_init__(self):
        if not check_autonomous(self.sys):
            raise ValueError("the cocycle needs an autonomous system")
        t_minus, t_plus = self.window
        grid = window_grid(t_minus, t_plus, self.dt)
        object.__setattr__(self, "path",
                           sample_path(self.base_seed, grid, self.sys.diffusion.m))

    @property
    def n_out(self) -> int:
        return steps_between(0.0, self.sys.delay, self.dt, "delay") + 1


def _on_grid(c: Cocycle, eta: Segment) -> Segment:
    n = c.n_out
    if eta.n_samples == n:
        return eta
    return eta.resample(n)


def cocycle_apply(c: Cocycle, t: float, shift: int, eta: Segment) -> Segment:
    """``phi(t, theta_shift w) eta`` sampled on the cocycle grid.

    For ``t < r`` the output contains the initial history on ``[-r, -t]``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = steps_between(0.0, t, c.dt, "t")
    if n == 0:
        return eta
    p = wiener_shift(c.path, shift) if shift else c.path
    if p.t_plus < t - 1e-12 * max(1.0, t):
        raise RangeError(f"shifted window ends at {p.t_plus}, need {t}")
    run = solve_direct(c.sys, p, 0.0, _on_grid(c, eta), t, c.dt)
    if np.any(run.blowup):
        raise NumericError("blow-up while applying the cocycle", {"t": t, "shift": shift})
    return run.segment(t)


def _stack(etas) -> Segment:
    if isinstance(etas, Segment):
        return etas
    etas = list(etas)
    return Segment(etas[0].delay, np.stack([e.samples for e in etas], axis=1))


def check_cocycle_property(c: Cocycle, t: float, s: float, etas) -> VerificationReport:
    """``phi(t + s, w) = phi(t, theta_s w) phi(s, w)`` bitwise at all nodes."""
    eta = _on_grid(c, _stack(etas))
    ks = steps_between(0.0, s, c.dt, "s")
    left = cocycle_apply(c, t + s, 0, eta)
    right = cocycle_apply(c, t, ks, cocycle_apply(c, s, 0, eta))
    a, b = left.samples, right.samples
    dev = float(np.max(np.abs(a - b)))
    equal = np.array_equal(a, b)
    return VerificationReport("cocycle", Status.PASS if equal else Status.FAIL,
                              {"deviation": 0.0},
                              [] if equal else [{"input": {"t": t, "s": s}, "value": dev}],
                              {"t": t, "s": s, "max_deviation": dev,
                               "n_segments": int(np.prod(eta.batch_shape))})


def check_order_preserving(c: Cocycle, t: float, n_pairs: int = 20, *,
                           dom: DomainSpec | None = None, seed: int = 0,
                           disc_tol: float = 1e-2, shift: int = 0, n_nodes: int | None = None,
                           scale: float = 2.0, gate: bool = True) -> VerificationReport:
    """Ordered pairs must stay ordered, up to `disc_tol`, under ``phi(t, w)``."""
    sys = c.sys
    dom = dom if dom is not None else sys.meta.get("domain")
    box = sys.meta.get("sample_box", (-2.0, 2.0))
    if dom is None:
        dom = DomainSpec.box(np.full(sys.dim, box[0]), np.full(sys.dim, box[1]))
    tols = {"disc_tol": disc_tol, "n_pairs": n_pairs}
    if gate:
        qm = check_quasimonotone(sys.G, dom, 200, delay=sys.delay, seed=seed, scale=scale)
        if qm.status is Status.FAIL:
            return VerificationReport("order_preserving", Status.FAIL, tols,
                                      qm.counterexamples[:3], qm.statistics,
                                      ["drift is not quasimonotone"])
    rng = np.random.default_rng(seed)
    lo, hi = sample_ordered_pairs(dom, rng, n_pairs, sys.dim, sys.delay, n_nodes or c.n_out,
                                  scale)
    out_lo = cocycle_apply(c, t, shift, lo).samples
    out_hi = cocycle_apply(c, t, shift, hi).samples
    gap = np.max(out_lo - out_hi, axis=(0, 2))
    bad = np.flatnonzero(gap > disc_tol)
    cex = [{"input": {"pair": int(k)}, "value": float(gap[k])} for k in bad]
    return VerificationReport("order_preserving", Status.FAIL if bad.size else Status.PASS,
                              tols, cex,
                              {"max_violation": float(max(gap.max(), 0.0)), "t": t,
                               "seed": c.base_seed})


@dataclass(frozen=True, eq=False)
class AttractorEstimate:
    lower_env: Segment
    upper_env: Segment
    diameter_history: list
    converged: bool


def pullback_estimate(c: Cocycle, initial_family, pullback_times, *,
                      diam_tol: float = 1e-3) -> AttractorEstimate:
    """Images ``phi(t, theta_{-t} w) D`` of an initial family as ``t`` grows.

    `converged` is set when the last three diameters do not increase and the
    final one is below `diam_tol`.
    """
    fam = _on_grid(c, _stack(initial_family))
    hist = []
    lower = upper = None
    times = list(pullback_times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("pullback times must increase")
    for t in times:
        k = steps_between(0.0, t, c.dt, "pullback time")
        if k > c.path.base_offset:
            raise RangeError(f"window starts at {-c.path.t_minus}, need {-t}")
        img = cocycle_apply(c, t, -k, fam).samples
        ax = tuple(range(1, img.ndim - 1))
        lower, upper = img.min(axis=ax), img.max(axis=ax)
        hist.append((t, float(np.max(upper - lower))))
    d = [h[1] for h in hist]
    tail = d[-3:]
    converged = len(tail) == 3 and all(b <= a for a, b in zip(tail, tail[1:])) \
        and tail[-1] < diam_tol
    return AttractorEstimate(Segment(fam.delay, lower), Segment(fam.delay, upper), hist,
                             converged)


# -- equilibrium of the biochemical circuit --------------------------------------------

@dataclass(frozen=True, eq=False)
class EquilibriumProcess:
    """``u -> v(theta_u w)`` on the grid ``L0 + k dt``."""

    times: np.ndarray
    values: np.ndarray
    dt: float
    delay: float
    T_trunc: float
    tail_estimate: float

    def index(self, t: float) -> int:
        return steps_between(self.times[0], t, self.dt)

    def segment(self, t: float = 0.0) -> Segment:
        """The segment ``tau -> v(theta_{t + tau} w)``, ``tau`` in ``[-r, 0]``."""
        k = self.index(t)
        n = steps_between(0.0, self.delay, self.dt, "delay")
        if k - n < 0 or k >= self.values.shape[0]:
            raise RangeError(f"time {t} outside the computed equilibrium window")
        return Segment(self.delay, self.values[k - n:k + 1])

    def metadata(self) -> dict:
        return {"dt": self.dt, "T_trunc": self.T_trunc, "tail_estimate": self.tail_estimate,
                "t_start": float(self.times[0]), "t_end": float(self.times[-1])}


def _shifted(v: np.ndarray, lag_steps: np.ndarray, lag_frac: np.ndarray):
    """``v(u + lag)`` on the grid with zero before the start."""
    n = v.size
    idx = np.arange(n)
    out = np.zeros(n)
    for k, f in zip(lag_steps, lag_frac):
        j = idx + k
        lo = np.where(j >= 0, v[np.clip(j, 0, n - 1)], 0.0)
        if f:
            hi = np.where(j + 1 >= 0, v[np.clip(j + 1, 0, n - 1)], 0.0)
            lo = lo + f * (hi - lo)
        out += lo
    return out


def biochem_equilibrium_process(p: BiochemParams, path: BrownianPath, T_trunc: float | None = None,
                                dt: float | None = None, *, t_end: float = 0.0,
                                quad_tol: float = 1e-6,
                                delay: float | None = None) -> EquilibriumProcess:
    """Equilibrium of the affine circuit with input ``b_const``.

    ``v_j(u) = e^{-alpha_j u + sigma_j W_j(u)} int_{L0}^u f_j(s)
    e^{alpha_j s - sigma_j W_j(s)} ds`` with ``f_1 = b_const`` and
    ``f_j = L_{j-1} v_{j-1}``, ``L0 = -T_trunc - r``; trapezoid quadrature on
    the grid of step `dt` (a multiple of the path step).
    """
    if p.a != 0:
        raise ValueError("the equilibrium construction needs a = 0")
    d = p.dim
    r = p.delay if delay is None else delay
    T_trunc = 40.0 / float(p.alpha.min()) if T_trunc is None else T_trunc
    dt = path.dt if dt is None else dt
    q = steps_between(0.0, dt, path.dt, "dt")
    n_lo = steps_between(0.0, T_trunc + r, dt, "T_trunc + delay")
    n_hi = steps_between(0.0, t_end, dt, "t_end")
    k0 = path.index_of(-n_lo * dt)
    k1 = path.index_of(n_hi * dt)
    if path.m < d:
        raise ValueError(f"need {d} drivers, path has {path.m}")
    W = path.values[k0:k1 + 1:q, :d]
    u = (np.arange(n_lo + n_hi + 1) - n_lo) * dt
    V = np.zeros((u.size, d))
    tails = []
    f = np.full(u.size, float(p.b_const))
    span = np.ptp(W, axis=0)
    for j in range(d):
        if j > 0:
            m = p.measures[j - 1]
            qlag = np.asarray(m.lags) / dt
            ks = np.floor(qlag + 1e-9).astype(int)
            frac = np.where(np.abs(qlag - np.round(qlag)) <= 1e-9, 0.0, qlag - ks)
            f = np.zeros(u.size)
            for lag_k, fr, w in zip(ks, frac, m.weights):
                f += w * _shifted(V[:, j - 1], [lag_k], [fr])
        a, s = p.alpha[j], p.sigma[j]
        # factor out the value at the left end to keep exponents small
        e = a * (u - u[0]) - s * (W[:, j] - W[0, j])
        integral = cumulative_trapezoid(f * np.exp(e - e.max()), u, initial=0.0)
        V[:, j] = integral * np.exp(e.max() - e)
        # tail beyond L0: |f| e^{alpha (L0 - u)} scaled by the realized path span
        out = u >= -r
        tail = float(np.max(np.abs(f))) / a * float(np.max(
            np.exp(-a * (u[out] - u[0]) + 2.0 * s * span[j])))
        tails.append(tail)
    tail = max(tails)
    if tail > quad_tol:
        raise TruncationError(
            f"tail estimate {tail:.3g} exceeds {quad_tol:.3g}; try T_trunc >= {2 * T_trunc:g}",
            {"tail_estimate": tail, "suggested_T_trunc": 2 * T_trunc})
    return EquilibriumProcess(u, V, dt, r, T_trunc, tail)


def biochem_equilibrium(p: BiochemParams, path: BrownianPath, T_trunc: float | None = None,
                        dt: float | None = None, **kw) -> Segment:
    """The equilibrium segment ``tau -> v(theta_tau w)`` on ``[-r, 0]``."""
    return biochem_equilibrium_process(p, path, T_trunc, dt, **kw).segment(0.0)


def check_super_equilibrium(c: Cocycle, v: EquilibriumProcess, lam: float, t: float, *,
                            disc_tol: float = 1e-3) -> VerificationReport:
    """``phi(t, w)(lam v(w)) <= lam v(theta_t w)`` node-wise within `disc_tol`."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    if v.dt != c.dt:
        raise ValueError("equilibrium and cocycle must share dt")
    start = Segment(v.delay, lam * v.segment(0.0).samples)
    img = cocycle_apply(c, t, 0, start).samples
    ref = lam * v.segment(t).samples
    excess = img - ref
    worst = float(excess.max())
    bad = worst > disc_tol
    cex = []
    if bad:
        k, i = np.unravel_index(np.argmax(excess), excess.shape)
        cex.append({"input": {"node": int(k), "coordinate": int(i)}, "value": worst})
    return VerificationReport("super_equilibrium", Status.FAIL if bad else Status.PASS,
                              {"disc_tol": disc_tol, "lambda": lam}, cex,
                              {"max_excess": worst, "min_margin": float(-excess.max()),
                               "mean_margin": float(-excess.mean()), "t": t,
                               "tail_estimate": v.tail_estimate},
                              ["initial data are bounded deterministic segments; "
                               "temperedness is not checked"])
