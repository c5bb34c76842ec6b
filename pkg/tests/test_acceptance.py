"""
Acceptance criteria, one test each.

Every test records a ``[PASS]`` or ``[FAIL]`` line with the measured numbers;
the lines are printed in the pytest terminal summary (see ``conftest.py``) and
when the file is run directly with ``python tests/test_acceptance.py``.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from sddeflow import calibration
from sddeflow.cli import main as cli_main
from sddeflow.core import Segment
from sddeflow.domains import (DomainSpec, check_diffusion_tangency, check_nagumo,
                              verify_invariance_mc)
from sddeflow.flow import DiffusionSpec, DriftSpec
from sddeflow.noise import sample_path, window_grid
from sddeflow.order import compare_systems, disc_tol, lotka_volterra_envelope
from sddeflow.rds import (Cocycle, biochem_equilibrium, biochem_equilibrium_process,
                          check_cocycle_property, check_order_preserving,
                          check_super_equilibrium, pullback_estimate)
from sddeflow.report import Status
from sddeflow.solver import SystemSpec, check_semiflow, solve_direct, zero_H
from sddeflow.systems import (BUILTINS, BiochemParams, biochem, builtin,
                              default_biochem_params, default_lv_params, frozen, lv_box)

RESULTS = []
SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def record(tag, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail} ({elapsed:.1f} s, limit {limit:.0f} s)")
    return ok


# -- AC1 ---------------------------------------------------------------------------------

def test_ac1_gbm_strong_order():
    t0 = time.perf_counter()
    mu, sigma, T, n_paths = 0.1, 0.5, 1.0, 1000
    dts = [2.0 ** -k for k in range(6, 11)]
    sys = SystemSpec(1, dts[0], zero_H, DriftSpec.linear([mu]), DiffusionSpec.linear([sigma]))
    grid = window_grid(0.0, T, dts[-1])
    paths = [sample_path(50_000 + s, grid, 1) for s in range(n_paths)]
    w_T = np.array([p.at(T)[0] for p in paths])
    exact = np.exp((mu - 0.5 * sigma ** 2) * T + sigma * w_T)
    eta = Segment.constant([1.0], dts[0])
    errs = []
    for dt in dts:
        x_T = solve_direct(sys, paths, 0.0, eta, T, dt).path[-1, :, 0]
        errs.append(float(np.mean(np.abs(x_T - exact))))
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    ok = 0.35 <= order <= 0.65
    assert record("AC1 strong order", ok, f"order {order:.3f} in [0.35, 0.65], errors "
                  + ", ".join(f"{e:.2e}" for e in errs), time.perf_counter() - t0, 30)


# -- AC2 ---------------------------------------------------------------------------------

def test_ac2_solver_equivalence():
    t0 = time.perf_counter()
    bound = calibration.constant("equivalence", "bound")
    dts = (1e-3, 5e-4, 2.5e-4, 1.25e-4)
    gaps = calibration.equivalence_discrepancy(range(20), dts)
    means = [float(np.mean(gaps[dt])) for dt in dts]
    ratios = [a / b for a, b in zip(means, means[1:])]
    ok = means[0] < bound and all(r >= 1.3 for r in ratios)
    assert record("AC2 solver equivalence", ok,
                  f"mean gap {means[0]:.2e} < bound {bound:.2e} at dt=1e-3, halving ratios "
                  + ", ".join(f"{r:.2f}" for r in ratios) + " (need >= 1.3), 20 seeds",
                  time.perf_counter() - t0, 60)


# -- AC3 ---------------------------------------------------------------------------------

def test_ac3_semiflow_and_cocycle_exact():
    t0 = time.perf_counter()
    names = sorted(BUILTINS) + ["frozen"]
    worst, failures = 0.0, []
    for name in names:
        sys = frozen(2) if name == "frozen" else builtin(name)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            c = Cocycle(sys, seed, (0.0, 2.0), 0.01)
            eta = Segment(sys.delay, 0.2 + rng.random((c.n_out, sys.dim)))
            sf = check_semiflow(sys, c.path, 0.0, 0.7, 2.0, eta, 0.01)
            cc = check_cocycle_property(c, 1.0, 1.0, [eta])
            for rep in (sf, cc):
                worst = max(worst, rep.statistics["max_deviation"])
                if rep.status is not Status.PASS:
                    failures.append((name, seed, rep.check))
    ok = not failures and worst == 0.0
    assert record("AC3 semiflow/cocycle", ok,
                  f"max deviation {worst:g} over {len(names)} systems x 5 seeds"
                  + (f", failures {failures}" if failures else ""),
                  time.perf_counter() - t0, 30)


# -- AC4 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["lv-simplex", "lv-box", "biochem"])
def test_ac4_invariance(name):
    t0 = time.perf_counter()
    sys = builtin(name)
    K = calibration.constant("invariance")
    rep = verify_invariance_mc(sys, sys.meta["domain"], n_paths=50, n_initials=4, T=5.0,
                               dt_schedule=(1e-2, 5e-3, 2.5e-3, 1.25e-3), seed=1,
                               viol_tol=lambda dt: disc_tol(K, dt), ratio=1.5)
    v = rep.statistics["max_violation"]
    ratios = rep.statistics["halving_ratios"]
    if ratios:
        trend = "halving ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (need >= 1.5)"
    else:
        # nothing above the 1e-12 floor: there is no trend left to measure
        trend = "violation identically 0 at every dt, ratio test vacuous"
    ok = rep.status is Status.PASS
    assert record(f"AC4 invariance {name}", ok,
                  "max violation " + ", ".join(f"{x:.1e}" for x in v) + f"; {trend}",
                  time.perf_counter() - t0, 120)


# -- AC5 ---------------------------------------------------------------------------------

def test_ac5_tangency_nagumo():
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in ("kolmogorov", "lv-simplex", "lv-box", "biochem"):
        sys = builtin(name)
        dom = sys.meta["domain"]
        nag = check_nagumo(sys.H, dom, delay=sys.delay, seed=5)
        tan = check_diffusion_tangency(sys.b, sys.diffusion, dom, seed=5)
        ok &= nag.status is Status.PASS and tan.status is Status.PASS
        lines.append(f"{name} {nag.status.value}/{tan.status.value}")
    orth = DomainSpec.orthant(2)
    outward = check_nagumo(lambda t, s: np.full_like(s.now, -1.0), orth, seed=5)
    constant = check_diffusion_tangency(DriftSpec.zero(), DiffusionSpec.additive([0.3, 0.3]),
                                        orth, seed=5)
    ok &= outward.status is Status.FAIL and bool(outward.counterexamples)
    ok &= constant.status is Status.FAIL and bool(constant.counterexamples)
    lines.append(f"controls outward-drift {outward.status.value} "
                 f"({len(outward.counterexamples)} cex), constant-diffusion "
                 f"{constant.status.value} ({len(constant.counterexamples)} cex)")
    assert record("AC5 Nagumo/tangency", ok, "; ".join(lines), time.perf_counter() - t0, 30)


# -- AC6 ---------------------------------------------------------------------------------

def test_ac6_lotka_volterra_sandwich():
    t0 = time.perf_counter()
    p = default_lv_params()
    T, dt = 5.0, 1e-3
    K = calibration.constant("lv-envelope")
    tol = disc_tol(K, dt)
    rng = np.random.default_rng(7)
    eta = Segment(p.delay, 0.1 + 1.5 * rng.random((11, p.dim)))
    paths = [sample_path(s, window_grid(0.0, T, dt), p.dim) for s in range(50)]
    env = lotka_volterra_envelope(p, eta, paths, T, dt)
    mid = lv_box(p)
    refl = compare_systems(mid, mid, eta, eta, paths, T, dt, n_dominance=0).violation
    v = env.violation
    ok = v <= tol and v <= 10 * tol and refl == 0.0
    assert record("AC6 LV sandwich", ok,
                  f"violation {v:.2e} <= K sqrt(dt) = {tol:.2e} (K={K:g}, hard cap {10 * tol:.2e}); "
                  f"reflexive {refl:g}; 50 seeds", time.perf_counter() - t0, 120)


# -- AC7 ---------------------------------------------------------------------------------

def test_ac7_order_preserving():
    t0 = time.perf_counter()
    dt, t = 1e-2, 5.0
    K = calibration.constant("order-preserving")
    tol = disc_tol(K, dt)
    parts, ok = [], True
    for name in ("biochem", "cooperative", "scalar-delay"):
        sys = builtin(name)
        worst = 0.0
        for seed in range(10):
            c = Cocycle(sys, seed, (0.0, t), dt)
            rep = check_order_preserving(c, t, 20, seed=seed, disc_tol=tol)
            ok &= rep.status is Status.PASS
            worst = max(worst, rep.statistics.get("max_violation", np.inf))
        parts.append(f"{name} {worst:.1e}")
    assert record("AC7 order preserving", ok,
                  f"max violation {', '.join(parts)} within disc_tol {tol:.1e}; 20 pairs x 10 seeds",
                  time.perf_counter() - t0, 120)


# -- AC8 ---------------------------------------------------------------------------------

def test_ac8_equilibrium():
    t0 = time.perf_counter()
    K = calibration.constant("super-equilibrium")
    # deterministic fixed point
    det = BiochemParams(alpha=(1.0, 2.0, 4.0), sigma=(0.0, 0.0, 0.0), b_const=1.0)
    path = sample_path(0, window_grid(45.0, 2.0, 1e-3), 3)
    v = biochem_equilibrium(det, path)
    expect = np.array([1.0, 0.5, 0.125])
    err_det = float(np.max(np.abs(v.samples - expect)))
    # stochastic quadrature under refinement of dt and truncation; sampling W
    # on a grid of step h limits any quadrature to about sigma h / sqrt(12)
    sto = default_biochem_params()
    fine = sample_path(3, window_grid(65.0, 0.0, 2.5e-4), 3)
    coarse = biochem_equilibrium(sto, fine, T_trunc=40.0, dt=5e-4)
    refined = biochem_equilibrium(sto, fine, T_trunc=60.0, dt=2.5e-4)
    err_sto = float(np.max(np.abs(coarse.samples - refined.samples[::2])))
    # super-equilibrium checks
    checks = []
    for params, lam, seed in ((BiochemParams(sto.alpha, np.zeros(3), 1.0,
                                             measures=sto.measures), 1.0, 0),
                              (BiochemParams(sto.alpha, np.zeros(3), 1.0,
                                             measures=sto.measures), 2.0, 0),
                              (sto, 2.0, 11)):
        dt = 1e-3
        c = Cocycle(biochem(params), seed, (45.0, 2.0), dt)
        proc = biochem_equilibrium_process(params, c.path, dt=dt, t_end=2.0)
        rep = check_super_equilibrium(c, proc, lam, 2.0, disc_tol=disc_tol(K, dt))
        checks.append((lam, "stochastic" if params.sigma.any() else "deterministic",
                       rep.status, rep.statistics["max_excess"]))
    ok = err_det <= 1e-6 and err_sto <= 1e-4 and all(s is Status.PASS for _, _, s, _ in checks)
    sup = "; ".join(f"lambda={lam:g} {kind} {s.value} (max excess {e:.1e})"
                    for lam, kind, s, e in checks)
    assert record("AC8 equilibrium", ok,
                  f"deterministic error {err_det:.1e} <= 1e-6; quadrature self-consistency "
                  f"{err_sto:.1e} <= 1e-4; {sup}", time.perf_counter() - t0, 60)


# -- AC9 ---------------------------------------------------------------------------------

def test_ac9_pullback_synchronization():
    t0 = time.perf_counter()
    sys = builtin("scalar-delay")
    dt = 1e-2
    times = [30.0, 40.0, 50.0]
    finals = []
    for seed in range(20):
        c = Cocycle(sys, seed, (50.0, 0.0), dt)
        fam = [Segment.constant([v], sys.delay, c.n_out) for v in (-3.0, -1.5, 0.0, 1.5, 3.0)]
        finals.append(pullback_estimate(c, fam, times).diameter_history[-1][1])
    frac = float(np.mean(np.array(finals) < 1e-3))
    c = Cocycle(frozen(), 0, (50.0, 0.0), dt)
    fam = [Segment.constant([v], 1.0, c.n_out) for v in (-3.0, -1.5, 0.0, 1.5, 3.0)]
    ctrl = [d for _, d in pullback_estimate(c, fam, [10.0, 30.0, 50.0]).diameter_history]
    ok = frac >= 0.9 and all(d >= 6.0 for d in ctrl)
    assert record("AC9 pullback", ok,
                  f"{frac:.0%} of 20 seeds below 1e-3 at t=50 (max {max(finals):.1e}); "
                  f"frozen control diameters {ctrl}", time.perf_counter() - t0, 120)


# -- AC10 --------------------------------------------------------------------------------

def test_ac10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    differing = []
    scenarios = sorted(SCENARIOS.iterdir())
    for sc in scenarios:
        a, b = tmp_path / sc.stem / "a", tmp_path / sc.stem / "b"
        cli_main(["run", str(sc), "--out", str(a)])
        cli_main(["run", str(sc), "--out", str(b), "--workers", "2"])
        fa = {p.name: p.read_bytes() for p in a.iterdir()}
        fb = {p.name: p.read_bytes() for p in b.iterdir()}
        if not fa or fa != fb:
            differing.append(sc.name)
    ok = not differing
    assert record("AC10 reproducibility", ok,
                  f"{len(scenarios)} scenarios re-run (1 and 2 workers) byte-identical"
                  + (f"; differing {differing}" if differing else ""),
                  time.perf_counter() - t0, 600)


if __name__ == "__main__":
    import sys
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
