"""
Convex domains and invariance diagnostics.

Supported kinds are the nonnegative orthant, axis-aligned boxes, polyhedra
``{x : <a_q, x> <= gamma_q}`` and closed balls.  Checkers sample segments with
values in the domain and endpoints on its boundary, then test the boundary
conditions that make the domain forward invariant.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import Segment, steps_between
from .flow import DiffusionSpec, DriftSpec, ito_to_stratonovich
from .report import Status, VerificationReport

TOL_NAGUMO = 1e-7
TOL_FACET = 1e-7
H_SCHEDULE = (1e-2, 1e-3, 1e-4)


def tol_boundary(x) -> np.ndarray:
    return 1e-9 * (1.0 + np.linalg.norm(np.asarray(x, dtype=float), axis=-1))


class DomainKind(str, enum.Enum):
    ORTHANT = "ORTHANT"
    BOX = "BOX"
    POLYHEDRON = "POLYHEDRON"
    BALL = "BALL"


class UnsupportedDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DomainSpec:
    kind: DomainKind
    dim: int
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    A: np.ndarray | None = None
    gamma: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None
    convex: bool = True
    _interior: np.ndarray = field(default=None, repr=False)

    # constructors -------------------------------------------------------------
    @classmethod
    def orthant(cls, d: int) -> "DomainSpec":
        return cls(DomainKind.ORTHANT, d, _interior=np.ones(d))

    @classmethod
    def box(cls, lo, hi) -> "DomainSpec":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ValueError("box needs lo < hi in every coordinate")
        return cls(DomainKind.BOX, lo.size, lo=lo, hi=hi, _interior=0.5 * (lo + hi))

    @classmethod
    def polyhedron(cls, A, gamma) -> "DomainSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        if A.shape[0] != gamma.size:
            raise ValueError("one gamma per constraint row")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ValueError("constraint rows must be nonzero")
        e = _chebyshev_center(A, gamma)
        return cls(DomainKind.POLYHEDRON, A.shape[1], A=A, gamma=gamma, _interior=e)

    @classmethod
    def simplex(cls, b) -> "DomainSpec":
        """``{x >= 0, <b, x> <= 1}``."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d = b.size
        return cls.polyhedron(np.vstack([-np.eye(d), b]), np.r_[np.zeros(d), 1.0])

    @classmethod
    def ball(cls, center, radius: float) -> "DomainSpec":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if not radius > 0:
            raise ValueError("radius must be positive")
        return cls(DomainKind.BALL, c.size, center=c, radius=float(radius), _interior=c.copy())

    @classmethod
    def ball_complement(cls, center, radius: float) -> "DomainSpec":
        """``{|x - c| >= R}``; representable but rejected by the checkers."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(DomainKind.BALL, c.size, center=c, radius=float(radius), convex=False,
                   _interior=c + 2.0 * radius)

    # geometry -----------------------------------------------------------------
    def halfspaces(self):
        """``(A, gamma)`` with ``D = {A x <= gamma}`` for the flat-faced kinds."""
        d = self.dim
        if self.kind is DomainKind.ORTHANT:
            return -np.eye(d), np.zeros(d)
        if self.kind is DomainKind.BOX:
            return np.vstack([-np.eye(d), np.eye(d)]), np.r_[-self.lo, self.hi]
        if self.kind is DomainKind.POLYHEDRON:
            return self.A, self.gamma
        raise UnsupportedDomainError("a ball has no facets")

    @property
    def interior_point(self) -> np.ndarray:
        return self._interior.copy()

    def contains(self, x, tol=0.0) -> np.ndarray:
        return signed_distance(self, x) <= tol

    def is_interior(self, x) -> bool:
        return bool(np.all(signed_distance(self, x) < -tol_boundary(x)))

    def bounding_box(self, scale: float = 1.0):
        """Finite sampling box containing the domain (clipped for unbounded kinds)."""
        d = self.dim
        if self.kind is DomainKind.ORTHANT:
            return np.zeros(d), np.full(d, scale)
        if self.kind is DomainKind.BOX:
            return self.lo.copy(), self.hi.copy()
        if self.kind is DomainKind.BALL:
            return self.center - self.radius, self.center + self.radius
        lo, hi = np.empty(d), np.empty(d)
        for i in range(d):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(d)
                c[i] = sign
                res = linprog(c, A_ub=self.A, b_ub=self.gamma, bounds=[(None, None)] * d)
                if res.status == 0:
                    out[i] = res.x[i]
                else:
                    out[i] = self._interior[i] - sign * scale
        return lo, hi

    def outer_normals(self, x, tol=None) -> list:
        """Unit outer normals active at the boundary point `x`."""
        x = np.asarray(x, dtype=float)
        tol = tol_boundary(x) if tol is None else tol
        if self.kind is DomainKind.BALL:
            v = x - self.center
            return [v / np.linalg.norm(v)]
        A, g = self.halfspaces()
        norms = np.linalg.norm(A, axis=1)
        active = np.abs(A @ x - g) / norms <= tol
        return [A[q] / norms[q] for q in np.flatnonzero(active)]


@dataclass(frozen=True, eq=False)
class BoundaryProbe:
    point: np.ndarray
    normals: list
    facet: int | None = None


def _chebyshev_center(A, gamma):
    d = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, norms[:, None]])
    bounds = [(None, None)] * d + [(0, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=gamma, bounds=bounds)
    if res.status != 0 or res.x[-1] <= 1e-9:
        raise ValueError("polyhedron has empty interior")
    return res.x[:d]


def signed_distance(dom: DomainSpec, x) -> np.ndarray:
    """Signed distance to the boundary, ``<= 0`` inside.

    Exact for orthants, boxes and balls.  For polyhedra the value is the
    facet surrogate ``max_q (<a_q, x> - gamma_q) / |a_q|``, exact inside and a
    lower bound on the distance outside.
    """
    x = np.asarray(x, dtype=float)
    k = dom.kind
    if k is DomainKind.BALL:
        r = np.linalg.norm(x - dom.center, axis=-1) - dom.radius
        return r if dom.convex else -r
    if k is DomainKind.ORTHANT:
        lo = np.zeros(dom.dim)
        below = np.maximum(lo - x, 0.0)
        out = np.linalg.norm(below, axis=-1)
        return np.where(out > 0, out, -np.min(x, axis=-1))
    if k is DomainKind.BOX:
        gap = np.maximum(np.maximum(dom.lo - x, x - dom.hi), 0.0)
        out = np.linalg.norm(gap, axis=-1)
        inside = np.minimum(np.min(x - dom.lo, axis=-1), np.min(dom.hi - x, axis=-1))
        return np.where(out > 0, out, -inside)
    A, g = dom.halfspaces()
    return np.max((x @ A.T - g) / np.linalg.norm(A, axis=1), axis=-1)


def _require_convex(dom: DomainSpec):
    if not dom.convex:
        raise UnsupportedDomainError("only convex domains are supported")


# -- sampling --------------------------------------------------------------------------

def sample_points(dom: DomainSpec, rng: np.random.Generator, n: int, scale: float = 2.0):
    """``n`` points drawn uniformly from the domain (clipped to a box of side
    `scale` when unbounded)."""
    d = dom.dim
    if dom.kind is DomainKind.BALL:
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = dom.radius * rng.random(n) ** (1.0 / d)
        return dom.center + rad[:, None] * u
    lo, hi = dom.bounding_box(scale)
    if dom.kind in (DomainKind.ORTHANT, DomainKind.BOX):
        return lo + (hi - lo) * rng.random((n, d))
    out = np.empty((0, d))
    for _ in range(1000):
        cand = lo + (hi - lo) * rng.random((max(4 * n, 64), d))
        cand = cand[signed_distance(dom, cand) <= 0]
        out = np.vstack([out, cand])
        if out.shape[0] >= n:
            return out[:n]
    raise RuntimeError("rejection sampling failed; domain too thin")


def sample_boundary(dom: DomainSpec, rng: np.random.Generator, n: int,
                    scale: float = 2.0) -> list:
    """Boundary probes, stratified round-robin over facets for flat-faced kinds."""
    _require_convex(dom)
    d = dom.dim
    probes = []
    if dom.kind is DomainKind.BALL:
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        for p in dom.center + dom.radius * u:
            probes.append(BoundaryProbe(p, dom.outer_normals(p)))
        return probes
    A, g = dom.halfspaces()
    Q = A.shape[0]
    for k in range(n):
        q = k % Q
        p = _point_on_facet(dom, rng, q, scale)
        probes.append(BoundaryProbe(p, dom.outer_normals(p), q))
    return probes


def _point_on_facet(dom, rng, q, scale):
    d = dom.dim
    if dom.kind in (DomainKind.ORTHANT, DomainKind.BOX):
        lo, hi = dom.bounding_box(scale)
        p = lo + (hi - lo) * rng.random(d)
        i = q % d
        p[i] = lo[i] if q < d else hi[i]
        return p
    # polyhedron: shoot rays from interior points until facet q is hit
    A, g = dom.A, dom.gamma
    aq = A[q] / np.linalg.norm(A[q])
    for _ in range(10_000):
        x0 = sample_points(dom, rng, 1, scale)[0]
        v = aq + 0.5 * rng.standard_normal(d)
        rate = A @ v
        with np.errstate(divide="ignore", invalid="ignore"):
            tq = np.where(rate > 0, (g - A @ x0) / rate, np.inf)
        if np.argmin(tq) == q and np.isfinite(tq[q]):
            p = x0 + tq[q] * v
            # project exactly onto the facet hyperplane
            return p - (A[q] @ p - g[q]) / (A[q] @ A[q]) * A[q]
    raise RuntimeError(f"could not hit facet {q}")


def _nodes_per_spacing(delay, n_nodes):
    return -delay + np.arange(n_nodes) * (delay / (n_nodes - 1))


def sample_segments(dom: DomainSpec, rng: np.random.Generator, n: int, delay: float,
                    n_nodes: int = 5, scale: float = 2.0, boundary_endpoint: bool = False):
    """Segments with every node in the domain; optionally the endpoint on the
    boundary.  Returns ``(segment, probes)`` with ``probes`` None unless
    `boundary_endpoint`."""
    _require_convex(dom)
    pts = sample_points(dom, rng, n * n_nodes, scale).reshape(n_nodes, n, dom.dim)
    probes = None
    if boundary_endpoint:
        probes = sample_boundary(dom, rng, n, scale)
        pts[-1] = np.stack([p.point for p in probes])
    return Segment(delay, pts), probes


# -- checkers --------------------------------------------------------------------------

def _eval(H, t, seg):
    return np.asarray(H(t, seg), dtype=float)


def check_nagumo(H, dom: DomainSpec, n_samples: int = 200, h_schedule=H_SCHEDULE, *,
                 delay: float = 1.0, n_nodes: int = 5, seed: int = 0, scale: float = 2.0,
                 tol: float = TOL_NAGUMO, t: float = 0.0) -> VerificationReport:
    """Sub-tangency of ``H`` on boundary samples.

    For the orthant the exact sign test ``H^i >= -tol`` on ``{eta^i(0) = 0}``
    is used.  Otherwise ``e(h) = dist(eta(0) + h H, D) / h`` is evaluated on
    `h_schedule` and the two smallest steps are extrapolated linearly to
    ``h = 0``.
    """
    _require_convex(dom)
    rng = np.random.default_rng(seed)
    seg, probes = sample_segments(dom, rng, n_samples, delay, n_nodes, scale, True)
    hv = _eval(H, t, seg)
    x0 = seg.now
    cex = []
    tols = {"tol_nagumo": tol, "h_schedule": list(h_schedule), "n_samples": n_samples}
    if dom.kind is DomainKind.ORTHANT:
        on_facet = x0 == 0.0
        margin = np.where(on_facet, hv, np.inf)
        worst = float(np.min(margin))
        for k in np.flatnonzero(np.any(on_facet & (hv < -tol), axis=1)):
            i = int(np.flatnonzero(on_facet[k] & (hv[k] < -tol))[0])
            cex.append({"input": {"eta0": x0[k], "coordinate": i, "H": hv[k]},
                        "value": float(hv[k, i])})
        status = Status.FAIL if cex else Status.PASS
        return VerificationReport("nagumo", status, tols, cex,
                                  {"method": "orthant_sign_test", "min_facet_H": worst,
                                   "violations": len(cex)})
    hs = sorted(h_schedule, reverse=True)
    est = np.stack([np.maximum(signed_distance(dom, x0 + h * hv), 0.0) / h for h in hs])
    h1, h2 = hs[-2], hs[-1]
    limit = np.maximum((h1 * est[-1] - h2 * est[-2]) / (h1 - h2), 0.0)
    bad = np.flatnonzero(limit > tol)
    for k in bad:
        cex.append({"input": {"eta0": x0[k], "H": hv[k], "facet": probes[k].facet},
                    "value": float(limit[k])})
    status = Status.FAIL if cex else Status.PASS
    return VerificationReport("nagumo", status, tols, cex,
                              {"method": "distance_quotient", "max_limit_estimate":
                               float(limit.max()), "max_estimate_smallest_h":
                               float(est[-1].max()), "violations": len(cex)})


def check_polyhedral_facets(H, dom: DomainSpec, n_samples: int = 200, *, delay: float = 1.0,
                            n_nodes: int = 5, seed: int = 0, scale: float = 2.0,
                            tol: float = TOL_FACET, t: float = 0.0) -> VerificationReport:
    """``<a_q, H> <= tol`` on samples with ``eta(0)`` on facet ``q``."""
    _require_convex(dom)
    A, g = dom.halfspaces()
    rng = np.random.default_rng(seed)
    seg, probes = sample_segments(dom, rng, n_samples, delay, n_nodes, scale, True)
    hv = _eval(H, t, seg)
    vals = np.einsum("kd,kd->k", A[[p.facet for p in probes]], hv)
    per_facet = {}
    cex = []
    for k, p in enumerate(probes):
        per_facet[p.facet] = max(per_facet.get(p.facet, -np.inf), float(vals[k]))
        if vals[k] > tol:
            cex.append({"input": {"eta0": p.point, "facet": p.facet, "H": hv[k]},
                        "value": float(vals[k])})
    status = Status.FAIL if cex else Status.PASS
    return VerificationReport("polyhedral_facets", status,
                              {"tol_facet": tol, "n_samples": n_samples}, cex,
                              {"max_facet_derivative": {str(q): v for q, v in
                                                        sorted(per_facet.items())},
                               "violations": len(cex)})


def check_diffusion_tangency(drift: DriftSpec, diff: DiffusionSpec, dom: DomainSpec,
                             n_boundary: int = 200, two_sided: bool = False, *,
                             seed: int = 0, scale: float = 2.0, tol: float = TOL_NAGUMO,
                             t: float = 0.0) -> VerificationReport:
    """Boundary conditions on the Stratonovich drift and the diffusion columns:
    ``<nu, b_strat> <= tol`` (``|.| <= tol`` when `two_sided`) and
    ``|<nu, m_j>| <= tol`` for every active outer normal ``nu``."""
    _require_convex(dom)
    rng = np.random.default_rng(seed)
    probes = sample_boundary(dom, rng, n_boundary, scale)
    diff = diff.with_dim(dom.dim)
    strat = ito_to_stratonovich(drift, diff)
    pts = np.stack([p.point for p in probes])
    bt = np.asarray(strat(t, pts), dtype=float) * np.ones_like(pts)
    S = np.asarray(diff(pts), dtype=float)
    cex = []
    worst_b, worst_m = -np.inf, 0.0
    for k, p in enumerate(probes):
        for nu in p.normals:
            nb = float(nu @ bt[k])
            nm = np.abs(nu @ S[k])
            worst_b = max(worst_b, abs(nb) if two_sided else nb)
            worst_m = max(worst_m, float(nm.max()))
            bad_b = abs(nb) > tol if two_sided else nb > tol
            if bad_b or np.any(nm > tol):
                cex.append({"input": {"point": p.point, "normal": nu},
                            "value": {"normal_drift": nb, "normal_diffusion": nm}})
    status = Status.FAIL if cex else Status.PASS
    return VerificationReport("diffusion_tangency", status,
                              {"tol": tol, "two_sided": two_sided, "n_boundary": n_boundary},
                              cex, {"max_normal_drift": worst_b,
                                    "max_normal_diffusion": worst_m, "violations": len(cex)})


def perturb_inward(H, e, eps: float, dom: DomainSpec):
    """``H_eps(t, eta) = H(t, eta) - eps (eta(0) - e)`` for an interior point `e`."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if e.shape != (dom.dim,) or not dom.is_interior(e):
        raise ValueError(f"{e} is not an interior point of the domain")

    def H_eps(t, seg):
        return H(t, seg) - eps * (seg.now - e)

    return H_eps


def facet_margin_shift(dom: DomainSpec, e, eps: float) -> np.ndarray:
    """Exact decrease of ``<a_q, H>`` caused by :func:`perturb_inward` at points
    of facet ``q``: ``eps (gamma_q - <a_q, e>)``."""
    A, g = dom.halfspaces()
    return eps * (g - A @ np.asarray(e, dtype=float))


# -- Monte Carlo invariance ------------------------------------------------------------

def default_n_nodes(delay: float, dt: float, max_nodes: int = 11) -> int:
    """Largest node count <= `max_nodes` whose spacing is a multiple of `dt`."""
    for n in range(max_nodes, 1, -1):
        try:
            p = steps_between(0.0, delay / (n - 1), dt)
        except ValueError:
            continue
        if p >= 1:
            return n
    raise ValueError(f"delay {delay} is not a multiple of dt {dt}")


def verify_invariance_mc(sys, dom: DomainSpec, n_paths: int = 50, n_initials: int = 4,
                         T: float = 5.0, dt_schedule=(1e-2, 5e-3, 2.5e-3, 1.25e-3), *,
                         seed: int = 0, viol_tol=None, ratio: float = 1.5,
                         floor: float = 1e-12, scale: float = 2.0,
                         n_nodes: int | None = None) -> VerificationReport:
    """Monte Carlo check that Euler paths started in ``C_D`` stay in ``D``.

    Every (path, initial) pair is run at each step size on the same Brownian
    paths.  The violation ``max(signed_distance, 0)`` must stay below
    ``viol_tol(dt)`` and, where it is measurable (above `floor`), shrink by
    at least `ratio` per halving on average over seeds.
    """
    from .noise import sample_path, window_grid
    from .solver import solve_direct

    _require_convex(dom)
    dts = sorted(dt_schedule, reverse=True)
    if viol_tol is None:
        viol_tol = lambda dt: 0.5 * np.sqrt(dt)  # noqa: E731
    elif np.isscalar(viol_tol):
        vt = float(viol_tol)
        viol_tol = lambda dt: vt  # noqa: E731
    n_nodes = n_nodes or default_n_nodes(sys.delay, dts[0])
    rng = np.random.default_rng(seed)
    seg, _ = sample_segments(dom, rng, n_initials, sys.delay, n_nodes, scale)
    # batch layout: (path, initial)
    eta = Segment(sys.delay, np.broadcast_to(seg.samples[:, None],
                                             (n_nodes, n_paths, n_initials, sys.dim)))
    grid = window_grid(0.0, T, dts[-1])
    m = sys.diffusion.m
    paths = [sample_path(seed * 100_003 + k, grid, m) for k in range(n_paths)]
    per_dt = []
    cex = []
    blown = 0
    for dt in dts:
        run = _run_ensemble(solve_direct, sys, paths, eta, T, dt, n_initials)
        vals = run.trajectory.values[run.n_history:]
        blown += int(np.sum(np.asarray(run.blowup)))
        sd = np.maximum(signed_distance(dom, np.nan_to_num(vals, nan=0.0)), 0.0)
        v = sd.max(axis=(0, 2))  # per path
        per_dt.append(v)
        if v.max() > viol_tol(dt):
            k = int(np.argmax(v))
            cex.append({"input": {"dt": dt, "path": k, "seed": paths[k].seed},
                        "value": float(v[k])})
    per_dt = np.array(per_dt)
    ratios = []
    for a, b in zip(per_dt[:-1], per_dt[1:]):
        meas = a > floor
        if np.any(meas):
            ratios.append(float(np.mean(a[meas] / np.maximum(b[meas], floor))))
    trend_ok = all(r >= ratio for r in ratios)
    status = Status.PASS
    notes = []
    if blown:
        status = Status.FAIL
        notes.append(f"{blown} runs blew up")
    if cex:
        status = Status.FAIL
    if not trend_ok:
        status = Status.FAIL
        notes.append("violation does not shrink under dt halving")
    if not ratios:
        notes.append("no measurable violation at any step size")
    return VerificationReport(
        "invariance_mc", status,
        {"viol_tol": {str(dt): float(viol_tol(dt)) for dt in dts}, "ratio": ratio,
         "floor": floor},
        cex,
        {"dt": dts, "max_violation": per_dt.max(axis=1).tolist(),
         "mean_violation": per_dt.mean(axis=1).tolist(), "halving_ratios": ratios,
         "n_paths": n_paths, "n_initials": n_initials, "T": T, "blowups": blown},
        notes)


def _run_ensemble(solver, sys, paths, eta, T, dt, n_initials):
    # the solver batches over one axis of paths; repeat each path per initial
    seg = Segment.view(eta.delay, eta.samples.reshape((eta.n_samples, -1, eta.dim)))
    flat_paths = [p for p in paths for _ in range(n_initials)]
    run = solver(sys, flat_paths, 0.0, seg, T, dt)
    v = run.trajectory.values.reshape(run.trajectory.values.shape[:1]
                                      + (len(paths), n_initials, eta.dim))
    from .core import Trajectory
    from .solver import SddeRun
    bl = np.asarray(run.blowup).reshape(len(paths), n_initials) if np.ndim(run.blowup) \
        else run.blowup
    traj = Trajectory(run.trajectory.grid, v, bl)
    return SddeRun(traj, eta, run.start, bl, run.solver_id, run.dt, run.seeds)


def check_invariance_consistency(mc: VerificationReport, tangency: VerificationReport,
                                 nagumo: VerificationReport,
                                 disc_tol: float = 0.0) -> VerificationReport:
    """A domain that is invariant in simulation with tangent diffusion must not
    fail the Nagumo check by more than the discretization tolerance."""
    notes = []
    status = Status.PASS
    if mc.status is Status.PASS and tangency.status is Status.PASS \
            and nagumo.status is Status.FAIL:
        worst = max((c["value"] for c in nagumo.counterexamples), default=0.0)
        if worst > disc_tol:
            status = Status.FAIL
            notes.append("simulation invariant but drift not sub-tangent")
    return VerificationReport("invariance_consistency", status, {"disc_tol": disc_tol}, [],
                              {"mc": mc.status.value, "tangency": tangency.status.value,
                               "nagumo": nagumo.status.value}, notes)
