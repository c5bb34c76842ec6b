"""
Quasimonotonicity diagnostics and common-noise comparison of two systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import OrderFlag, Segment, ShapeError, compare_segments
from .domains import DomainSpec, sample_points, sample_segments, signed_distance
from .flow import UnsupportedSystemError
from .report import Status, VerificationReport
from .solver import SddeRun, SystemSpec, solve_direct
from .systems import LVParams, lv_box, lv_lower, lv_upper


def disc_tol(K: float, dt: float) -> float:
    """Discretization tolerance ``K sqrt(dt)``."""
    return K * np.sqrt(dt)


def _sampling_domain(dom: DomainSpec | None, dim: int, box=(-2.0, 2.0)) -> DomainSpec:
    if dom is not None:
        return dom
    return DomainSpec.box(np.full(dim, box[0]), np.full(dim, box[1]))


def sample_ordered_pairs(dom: DomainSpec | None, rng: np.random.Generator, n: int, dim: int,
                         delay: float, n_nodes: int = 5, scale: float = 2.0,
                         near_boundary: float = 0.5, step: float = 1.0):
    """Pairs ``lower <= upper`` with every node in the domain.

    A fraction `near_boundary` of the lower segments has its endpoint on the
    boundary and receives only a small upward perturbation.
    """
    dom = _sampling_domain(dom, dim)
    n_b = int(round(near_boundary * n))
    lo_int, _ = sample_segments(dom, rng, n - n_b, delay, n_nodes, scale)
    parts = [lo_int.samples]
    if n_b:
        lo_b, _ = sample_segments(dom, rng, n_b, delay, n_nodes, scale, boundary_endpoint=True)
        parts.append(lo_b.samples)
    lower = np.concatenate(parts, axis=1)
    frac = np.r_[np.full(n - n_b, step), np.full(n_b, 0.01 * step)]
    lo_box, hi_box = dom.bounding_box(scale)
    delta = rng.random(lower.shape) * (hi_box - lo_box) * frac[None, :, None]
    upper = lower + delta
    # pull back toward lower until every node is inside (convexity)
    for _ in range(60):
        out = np.any(signed_distance(dom, upper) > 0, axis=0)
        if not np.any(out):
            break
        delta[:, out] *= 0.5
        upper = lower + delta
    else:
        upper = np.where(np.any(signed_distance(dom, upper) > 0, axis=0)[None, :, None],
                         lower, upper)
    return Segment(delay, lower), Segment(delay, upper)


def check_quasimonotone(G, dom: DomainSpec | None, n_pairs: int = 400, *, dim: int | None = None,
                        delay: float = 1.0, n_nodes: int = 5, seed: int = 0,
                        scale: float = 2.0, tol: float = 1e-9,
                        t: float = 0.0) -> VerificationReport:
    """Sampled test of: ``eta >= eta*`` and ``eta^i(0) = eta*^i(0)`` imply
    ``G^i(eta) >= G^i(eta*)``."""
    dim = dom.dim if dom is not None else dim
    if dim is None:
        raise ValueError("dimension needed when no domain is given")
    rng = np.random.default_rng(seed)
    low, up = sample_ordered_pairs(dom, rng, n_pairs, dim, delay, n_nodes, scale)
    coord = rng.integers(0, dim, n_pairs)
    s = np.array(up.samples)
    s[-1, np.arange(n_pairs), coord] = low.samples[-1, np.arange(n_pairs), coord]
    up = Segment(delay, s)
    g_up = np.asarray(G(t, up))
    g_lo = np.asarray(G(t, low))
    margin = g_up[np.arange(n_pairs), coord] - g_lo[np.arange(n_pairs), coord]
    bad = np.flatnonzero(margin < -tol)
    cex = [{"input": {"coordinate": int(coord[k]), "eta": up.samples[:, k],
                      "eta_star": low.samples[:, k]},
            "value": float(margin[k])} for k in bad[:10]]
    return VerificationReport("quasimonotone", Status.FAIL if bad.size else Status.PASS,
                              {"tol": tol, "n_pairs": n_pairs}, cex,
                              {"worst_margin": float(margin.min()), "violations": int(bad.size)})


@dataclass(frozen=True, eq=False)
class OrderedPair:
    lower: SddeRun
    upper: SddeRun
    violation: float
    first_violation_node: int | None
    per_member: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def within(self, tol: float) -> bool:
        return self.violation <= tol

    def summary(self) -> dict:
        return {"violation": self.violation, "first_violation_node": self.first_violation_node,
                "warnings": self.warnings,
                "per_member": None if self.per_member is None else self.per_member.tolist()}


def _violation(lower: np.ndarray, upper: np.ndarray):
    gap = np.nan_to_num(lower - upper, nan=0.0)
    pos = np.maximum(gap, 0.0)
    per_node = pos.reshape(pos.shape[0], -1).max(axis=1)
    hit = np.flatnonzero(per_node > 0)
    per_member = pos.max(axis=(0, -1)) if pos.ndim > 2 else None
    return float(per_node.max(initial=0.0)), (int(hit[0]) if hit.size else None), per_member


def _same_coefficients(a: SystemSpec, b: SystemSpec, rng, n=64) -> bool:
    if a.b is b.b and a.diffusion is b.diffusion:
        return True
    x = 2.0 * rng.standard_normal((n, a.dim))
    return bool(np.allclose(a.diffusion(x), b.diffusion(x), rtol=0, atol=1e-14)
                and np.allclose(a.ito_drift(0.0, x), b.ito_drift(0.0, x), rtol=0, atol=1e-14))


def check_drift_dominance(sysG: SystemSpec, sysGbar: SystemSpec, dom: DomainSpec | None = None,
                          n: int = 200, *, seed: int = 0, n_nodes: int = 5,
                          scale: float = 2.0, tol: float = 0.0) -> VerificationReport:
    """Sampled ``G(eta) <= Gbar(eta)`` componentwise."""
    rng = np.random.default_rng(seed)
    seg, _ = sample_segments(_sampling_domain(dom, sysG.dim), rng, n, sysG.delay, n_nodes, scale)
    gap = np.asarray(sysG.G(0.0, seg)) - np.asarray(sysGbar.G(0.0, seg))
    bad = np.flatnonzero(np.any(gap > tol, axis=-1))
    cex = [{"input": {"eta": seg.samples[:, k]}, "value": float(gap[k].max())} for k in bad[:5]]
    return VerificationReport("drift_dominance", Status.WARN if bad.size else Status.PASS,
                              {"tol": tol, "n": n}, cex,
                              {"max_excess": float(gap.max()), "violations": int(bad.size)})


def compare_systems(sysG: SystemSpec, sysGbar: SystemSpec, eta: Segment, eta_star: Segment,
                    path, T: float, dt: float, *, dom: DomainSpec | None = None,
                    n_dominance: int = 200, gate_dominance: bool = False,
                    seed: int = 0, s: float = 0.0) -> OrderedPair:
    """Run both systems on the same increments and measure ``max (x - y)^+``."""
    if compare_segments(eta, eta_star) is OrderFlag.INCOMPARABLE:
        raise ValueError("initial segments are not ordered: need eta <= eta_star")
    for sy in (sysG, sysGbar):
        if not sy.diffusion.diagonal:
            raise UnsupportedSystemError(f"system {sy.name!r} has non-diagonal diffusion")
    rng = np.random.default_rng(seed)
    if not _same_coefficients(sysG, sysGbar, rng):
        raise ValueError("both systems must share b and the diffusion")
    warnings = []
    if n_dominance:
        dom_rep = check_drift_dominance(sysG, sysGbar, dom, n_dominance, seed=seed)
        if dom_rep.status is not Status.PASS:
            if gate_dominance:
                raise ValueError("sampled drift dominance G <= Gbar violated")
            warnings.append(f"drift dominance violated on {dom_rep.statistics['violations']} "
                            f"of {n_dominance} samples")
    lower = solve_direct(sysG, path, s, eta, T, dt)
    upper = solve_direct(sysGbar, path, s, eta_star, T, dt)
    v, first, per_member = _violation(lower.trajectory.values, upper.trajectory.values)
    return OrderedPair(lower, upper, v, first, per_member, warnings)


@dataclass(frozen=True, eq=False)
class Envelope:
    lower: SddeRun
    mid: SddeRun
    upper: SddeRun
    lower_mid: OrderedPair
    mid_upper: OrderedPair

    def __iter__(self):
        return iter((self.lower, self.mid, self.upper))

    @property
    def violation(self) -> float:
        return max(self.lower_mid.violation, self.mid_upper.violation)


def lotka_volterra_envelope(params: LVParams, eta: Segment, path, T: float,
                            dt: float) -> Envelope:
    """Sandwich the delayed Lotka--Volterra system between its two envelopes.

    The lower system starts from the coordinate-wise minimum of `eta`, the
    upper one from the maximum; all three share the noise.
    """
    if not isinstance(params, LVParams):
        raise ValueError("params must be LVParams")
    mid = lv_box(params)
    lo_sys, up_sys = lv_lower(params), lv_upper(params)
    mn = eta.samples.min(axis=0)
    mx = eta.samples.max(axis=0)
    eta_lo = Segment(eta.delay, np.broadcast_to(mn, eta.samples.shape))
    eta_hi = Segment(eta.delay, np.broadcast_to(mx, eta.samples.shape))
    lm = compare_systems(lo_sys, mid, eta_lo, eta, path, T, dt, n_dominance=0)
    mu = compare_systems(mid, up_sys, eta, eta_hi, path, T, dt, n_dominance=0)
    return Envelope(lm.lower, lm.upper, mu.upper, lm, mu)
