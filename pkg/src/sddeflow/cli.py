"""
Command-line front end.

    sddeflow run SCENARIO [--out DIR] [--workers N]
    sddeflow list [--json]
    sddeflow calibrate SCENARIO [--out DIR]

Exit codes: 0 on PASS or a completed simulation, 1 on FAIL, 2 on a
configuration error.  The worker count defaults to ``$SDDEFLOW_WORKERS``.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import calibration
from .core import RangeError, Segment, ShapeError
from .domains import (DomainKind, DomainSpec, check_diffusion_tangency, check_nagumo,
                      check_polyhedral_facets, verify_invariance_mc)
from .noise import sample_path, window_grid
from .order import check_quasimonotone, compare_systems, disc_tol, lotka_volterra_envelope
from .rds import (Cocycle, TruncationError, biochem_equilibrium_process,
                  check_cocycle_property, check_super_equilibrium, pullback_estimate)
from .report import Status, dumps, worst
from .scenario import Action, Scenario, ScenarioError, _Ctx, _build_system, build, load
from .scenario import initial_segment
from .solver import FlowMode, check_semiflow, solve_conjugated, solve_direct
from .systems import BUILTINS, BiochemParams, LVParams

WORKERS_ENV = "SDDEFLOW_WORKERS"


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


# -- helpers ------------------------------------------------------------------------------

def _p(sc: Scenario, key, default=None, *, required=False):
    if key in sc.params:
        return sc.params[key]
    if required:
        raise sc.error(f"missing required parameter params.{key}", "params")
    return default


def _num(sc, key, default=None, *, required=False, positive=False):
    v = _p(sc, key, default, required=required)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise sc.error(f"params.{key} must be a number", "params", key)
    if positive and not v > 0:
        raise sc.error(f"params.{key} must be positive", "params", key)
    return float(v)


def _dt(sc):
    dt = _num(sc, "dt", sc.noise.get("dt"), positive=True)
    if dt is None:
        raise sc.error("a step size is needed in params.dt or noise.dt", "params")
    return dt


def _path_dt(sc, dt):
    return float(sc.noise.get("dt", dt))


def _window(sc, t_minus, t_plus):
    w = sc.noise.get("window")
    if w is None:
        return float(t_minus), float(t_plus)
    if w[0] < t_minus - 1e-12 or w[1] < t_plus - 1e-12:
        raise sc.error(f"noise.window {w} must cover [-{t_minus}, {t_plus}]", "noise", "window")
    return float(w[0]), float(w[1])


def _m(sc):
    m = int(sc.noise.get("m", sc.system.diffusion.m))
    if m != sc.system.diffusion.m:
        raise sc.error(f"noise.m = {m} but the system has {sc.system.diffusion.m} drivers",
                       "noise", "m")
    return m


def _K(sc, key, cal_key):
    v = sc.tolerances.get(key)
    return float(v) if v is not None else calibration.constant(cal_key)


# -- per-seed jobs --------------------------------------------------------------------------

def _job_simulate(sc: Scenario, seed: int):
    T = _num(sc, "T", required=True, positive=True)
    dt = _dt(sc)
    s = _num(sc, "s", 0.0)
    eta = initial_segment(sc, _p(sc, "initial"))
    solver = str(_p(sc, "solver", "DIRECT")).upper()
    w = _window(sc, max(0.0, -s), s + T)
    path = sample_path(seed, window_grid(*w, _path_dt(sc, dt)), _m(sc))
    if solver == "DIRECT":
        run = solve_direct(sc.system, path, s, eta, T, dt)
    elif solver == "CONJUGATED":
        run = solve_conjugated(sc.system, path, s, eta, T, dt,
                               FlowMode(str(_p(sc, "flow_mode", "ANALYTIC")).upper()))
    else:
        raise sc.error(f"unknown solver {solver!r}", "params", "solver")
    v = run.trajectory.values
    rows = [[t, *x] for t, x in zip(run.times, v)]
    return {"seed": seed, "metadata": run.metadata(), "final": v[-1],
            "n_nodes": int(v.shape[0]),
            "_csv": {f"trajectory_seed{seed}": (["time"] + [f"x{i + 1}" for i in
                                                         range(v.shape[1])], rows)},
            "_status": Status.WARN if np.any(run.blowup) else Status.PASS}


def _job_invariance(sc: Scenario, seed: int):
    if sc.domain is None:
        raise sc.error("CHECK_INVARIANCE needs a domain", "domain")
    K = _K(sc, "viol_K", "invariance")
    sched = [float(x) for x in _p(sc, "dt_schedule", [1e-2, 5e-3, 2.5e-3, 1.25e-3])]
    rep = verify_invariance_mc(sc.system, sc.domain, int(_p(sc, "n_paths", 50)),
                               int(_p(sc, "n_initials", 4)), _num(sc, "T", 5.0), sched,
                               seed=seed, viol_tol=lambda dt: K * np.sqrt(dt),
                               ratio=sc.tolerances["ratio"], floor=sc.tolerances["floor"])
    reps = [rep]
    if _p(sc, "include_conditions", True) and seed == sc.seeds[0]:
        d = sc.system
        reps.append(check_nagumo(d.H, sc.domain, delay=d.delay, seed=seed,
                                 tol=sc.tolerances["nagumo"]))
        reps.append(check_diffusion_tangency(d.b, d.diffusion, sc.domain, seed=seed,
                                             tol=sc.tolerances["nagumo"]))
        if sc.domain.kind is not DomainKind.BALL:
            reps.append(check_polyhedral_facets(d.H, sc.domain, delay=d.delay, seed=seed,
                                                tol=sc.tolerances["facet"]))
    return {"seed": seed, "reports": [r.as_dict() for r in reps],
            "_status": worst(*(r.status for r in reps))}


def _job_comparison(sc: Scenario, seed: int):
    up = _p(sc, "upper_system", required=True)
    ctx = _Ctx(sc.lines, sc.source)
    sys_up = _build_system(ctx, up)
    T = _num(sc, "T", required=True, positive=True)
    dt = _dt(sc)
    lo = initial_segment(sc, _p(sc, "initial"), ("params", "initial"))
    hi = initial_segment(sc, _p(sc, "initial_upper", _p(sc, "initial")),
                         ("params", "initial_upper"))
    path = sample_path(seed, window_grid(*_window(sc, 0.0, T), _path_dt(sc, dt)), _m(sc))
    pair = compare_systems(sc.system, sys_up, lo, hi, path, T, dt, dom=sc.domain,
                           gate_dominance=bool(_p(sc, "gate_dominance", False)), seed=seed)
    return {"seed": seed, **pair.summary(), "_violation": pair.violation}


def _job_envelope(sc: Scenario, seed: int):
    p = sc.system.meta.get("params")
    if not isinstance(p, LVParams):
        raise sc.error("ENVELOPE needs the 'lv-box' system", "system")
    T = _num(sc, "T", 5.0, positive=True)
    dt = _dt(sc)
    eta = initial_segment(sc, _p(sc, "initial"))
    path = sample_path(seed, window_grid(*_window(sc, 0.0, T), _path_dt(sc, dt)), p.dim)
    env = lotka_volterra_envelope(p, eta, path, T, dt)
    out = {"seed": seed, "lower_mid": env.lower_mid.summary(),
           "mid_upper": env.mid_upper.summary(), "_violation": env.violation}
    if seed == sc.seeds[0]:
        d = p.dim
        head = ["time"] + [f"{n}{i + 1}" for n in ("lower", "mid", "upper") for i in range(d)]
        rows = [[t, *a, *b, *c] for t, a, b, c in zip(env.mid.times,
                                                       env.lower.trajectory.values,
                                                       env.mid.trajectory.values,
                                                       env.upper.trajectory.values)]
        out["_csv"] = {f"envelope_seed{seed}": (head, rows)}
    return out


def _job_cocycle(sc: Scenario, seed: int):
    t = _num(sc, "t", 1.0)
    s = _num(sc, "s", 1.0)
    dt = _dt(sc)
    n = int(_p(sc, "n_segments", 5))
    sys_ = sc.system
    c = Cocycle(sys_, seed, _window(sc, 0.0, t + s), dt)
    rng = np.random.default_rng(seed)
    dom = sc.domain
    if dom is None:
        lo, hi = sys_.meta.get("sample_box", (-2.0, 2.0))
        dom = DomainSpec.box(np.full(sys_.dim, lo), np.full(sys_.dim, hi))
    from .domains import sample_segments
    seg, _ = sample_segments(dom, rng, n, sys_.delay, c.n_out)
    rep_c = check_cocycle_property(c, t, s, seg)
    rep_s = check_semiflow(sys_, c.path, 0.0, s, s + t, seg, dt)
    return {"seed": seed, "reports": [rep_c.as_dict(), rep_s.as_dict()],
            "_status": worst(rep_c.status, rep_s.status)}


def _job_pullback(sc: Scenario, seed: int):
    times = [float(x) for x in _p(sc, "times", [10.0, 20.0, 30.0, 40.0, 50.0])]
    dt = _dt(sc)
    fam_spec = _p(sc, "family")
    r = sc.system.delay
    if fam_spec is None:
        fam = [Segment.constant(np.full(sc.system.dim, v), r) for v in (-2, -1, 0, 1, 2)]
    else:
        fam = [Segment.constant(np.atleast_1d(np.asarray(v, dtype=float)), r) for v in fam_spec]
    c = Cocycle(sc.system, seed, _window(sc, max(times), 0.0), dt)
    est = pullback_estimate(c, fam, times, diam_tol=sc.tolerances["diam_tol"])
    return {"seed": seed, "converged": est.converged, "diameters": est.diameter_history,
            "lower_env": est.lower_env.samples, "upper_env": est.upper_env.samples,
            "_status": Status.PASS if est.converged else Status.WARN}


def _job_equilibrium(sc: Scenario, seed: int):
    p = sc.system.meta.get("params")
    if not isinstance(p, BiochemParams):
        raise sc.error("EQUILIBRIUM needs the 'biochem' system", "system")
    dt = _dt(sc)
    T_trunc = _num(sc, "T_trunc", 40.0 / float(p.alpha.min()), positive=True)
    t = _num(sc, "t", 1.0)
    lambdas = [float(x) for x in _p(sc, "lambdas", [1.0, 2.0])]
    r = sc.system.delay
    affine = BiochemParams(p.alpha, p.sigma, p.b_const, 0.0, None, p.measures)
    w = _window(sc, T_trunc + r, t)
    c = Cocycle(sc.system, seed, w, dt)
    try:
        v = biochem_equilibrium_process(affine, c.path, T_trunc, dt, t_end=t,
                                        quad_tol=sc.tolerances["quad_tol"], delay=r)
    except TruncationError as exc:
        return {"seed": seed, "error": str(exc), "diagnostics": exc.diagnostics,
                "_status": Status.FAIL}
    K = _K(sc, "disc_K", "super-equilibrium")
    reps = [check_super_equilibrium(c, v, lam, t, disc_tol=K * np.sqrt(dt)) for lam in lambdas]
    return {"seed": seed, "equilibrium": v.segment(0.0).samples[-1],
            "equilibrium_segment": v.segment(0.0).samples, "quadrature": v.metadata(),
            "reports": [x.as_dict() for x in reps],
            "_status": worst(*(x.status for x in reps))}


JOBS = {
    Action.SIMULATE: _job_simulate,
    Action.CHECK_INVARIANCE: _job_invariance,
    Action.CHECK_COMPARISON: _job_comparison,
    Action.ENVELOPE: _job_envelope,
    Action.CHECK_COCYCLE: _job_cocycle,
    Action.PULLBACK: _job_pullback,
    Action.EQUILIBRIUM: _job_equilibrium,
}


def _remote(raw, source, base_dir, seed):
    sc = build(raw, None, source, Path(base_dir))
    return JOBS[sc.action](sc, seed)


def _map_seeds(sc: Scenario, workers: int):
    fn = JOBS[sc.action]
    if workers <= 1 or len(sc.seeds) == 1:
        return [fn(sc, s) for s in sc.seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_remote, sc.raw, sc.source, str(sc.base_dir), s) for s in sc.seeds]
        return [f.result() for f in futs]


# -- driver ---------------------------------------------------------------------------------

def execute(sc: Scenario, workers: int = 1) -> tuple[Status, dict, dict]:
    """Run a scenario; returns ``(status, report, csv_tables)``."""
    tol = dict(sc.tolerances)
    csvs = {}
    if sc.action is Action.CHECK_QUASIMONOTONE:
        dom = sc.domain
        if dom is None:
            lo, hi = sc.system.meta.get("sample_box", (-2.0, 2.0))
            dom = DomainSpec.box(np.full(sc.system.dim, lo), np.full(sc.system.dim, hi))
        rep = check_quasimonotone(sc.system.G, dom, int(_p(sc, "n_pairs", 400)),
                                  delay=sc.system.delay, seed=sc.seeds[0],
                                  tol=tol["quasimonotone"])
        results = [{"seed": sc.seeds[0], "reports": [rep.as_dict()]}]
        status = rep.status
        expect = _p(sc, "expect")
        if expect is not None:
            status = Status.PASS if rep.status.value == str(expect).upper() else Status.FAIL
    else:
        results = _map_seeds(sc, workers)
        for r in results:
            csvs.update(r.pop("_csv", {}))
        if sc.action in (Action.CHECK_COMPARISON, Action.ENVELOPE):
            dt = _dt(sc)
            K = _K(sc, "disc_K", "lv-envelope")
            tol["disc_K"] = K
            dtol = disc_tol(K, dt)
            viol = [r.pop("_violation") for r in results]
            status = Status.PASS if max(viol) <= dtol else Status.FAIL
            results.append({"summary": {"max_violation": max(viol), "disc_tol": dtol,
                                        "hard_cap": 10 * dtol,
                                        "hard_cap_exceeded": max(viol) > 10 * dtol}})
            csvs["violations"] = (["seed", "violation"],
                                  [[str(s), v] for s, v in zip(sc.seeds, viol)])
        elif sc.action is Action.PULLBACK:
            frac = float(np.mean([r["converged"] for r in results]))
            need = _num(sc, "min_converged_fraction")
            status = Status.PASS if need is None or frac >= need else Status.FAIL
            if need is None:
                status = worst(*(r.pop("_status") for r in results))
            else:
                for r in results:
                    r.pop("_status")
            results.append({"summary": {"converged_fraction": frac}})
            csvs["diameters"] = (["seed", "pullback_time", "diameter"],
                                 [[str(r["seed"]), t, d] for r in results if "seed" in r
                                  for t, d in r["diameters"]])
        else:
            status = worst(*(r.pop("_status") for r in results))
    if sc.action is Action.CHECK_INVARIANCE and tol.get("viol_K") is None:
        tol["viol_K"] = calibration.constant("invariance")
    if sc.action is Action.EQUILIBRIUM and tol.get("disc_K") is None:
        tol["disc_K"] = calibration.constant("super-equilibrium")
    if sc.action is Action.SIMULATE and status is Status.WARN:
        status_out = "COMPLETE_WITH_BLOWUP"
    elif sc.action is Action.SIMULATE:
        status_out = "COMPLETE"
    else:
        status_out = status.value
    report = {"scenario": Path(sc.source).name, "action": sc.action.value,
              "system": sc.system.name, "status": status_out, "seeds": sc.seeds,
              "tolerances": tol, "results": results}
    return status, report, csvs


def write_outputs(sc: Scenario, report: dict, csvs: dict, out_dir: Path | None = None) -> list:
    out = Path(out_dir) if out_dir is not None else Path(sc.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    prefix = sc.output["prefix"]
    written = []
    for name in sorted(csvs):
        head, rows = csvs[name]
        p = out / f"{prefix}_{name}.csv"
        write_csv(p, head, rows)
        written.append(p)
    p = out / f"{prefix}_report.json"
    p.write_text(dumps(report), encoding="utf-8")
    written.append(p)
    return written


def run_scenario(path, out_dir=None, workers: int = 1) -> int:
    try:
        sc = load(path)
        status, report, csvs = execute(sc, workers)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ShapeError, RangeError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2
    files = write_outputs(sc, report, csvs, out_dir)
    for f in files:
        print(f)
    print(f"status: {report['status']}")
    return 1 if status is Status.FAIL else 0


# -- list / calibrate ----------------------------------------------------------------------

def list_builtins(as_json: bool = False) -> str:
    if as_json:
        data = {k: {f: v for f, v in e.items() if f != "factory"} for k, e in BUILTINS.items()}
        return dumps(data)
    lines = [f"{'name':<14}{'domain':<34}{'diagonal':<10}{'quasimonotone':<15}parameters"]
    for name in sorted(BUILTINS):
        e = BUILTINS[name]
        params = ", ".join(f"{k}: {v}" for k, v in sorted(e["schema"].items()))
        lines.append(f"{name:<14}{e['domain']:<34}{str(e['diagonal']).lower():<10}"
                     f"{str(e['quasimonotone']).lower():<15}{params}")
    return "\n".join(lines) + "\n"


def calibrate(path, out_dir=None, safety: float = calibration.SAFETY) -> int:
    """Fit ``K`` in ``tol(dt) = K sqrt(dt)`` for the scenario's check over a
    dt-halving schedule (``params.calibration_dts``)."""
    try:
        sc = load(path)
        key = {Action.CHECK_COMPARISON: "disc_K", Action.ENVELOPE: "disc_K",
               Action.CHECK_INVARIANCE: "viol_K", Action.EQUILIBRIUM: "disc_K"}.get(sc.action)
        if key is None:
            raise sc.error(f"nothing to calibrate for action {sc.action.value}", "action")
        dts = [float(x) for x in _p(sc, "calibration_dts", [1e-2, 5e-3, 2.5e-3])]
        observed = {}
        # one path resolution for the whole schedule so runs share noise
        sc.noise["dt"] = min(dts)
        for dt in dts:
            sc.params["dt"] = dt
            if sc.action is Action.CHECK_INVARIANCE:
                sc.params["dt_schedule"] = [dt]
                sc.tolerances["viol_K"] = float("inf")
                res = [_job_invariance(sc, s) for s in sc.seeds]
                observed[dt] = max(r["reports"][0]["statistics"]["max_violation"][0]
                                   for r in res)
            elif sc.action is Action.EQUILIBRIUM:
                sc.tolerances["disc_K"] = float("inf")
                res = [_job_equilibrium(sc, s) for s in sc.seeds]
                observed[dt] = max(max(x["statistics"]["max_excess"], 0.0)
                                   for r in res for x in r.get("reports", []))
            else:
                res = [JOBS[sc.action](sc, s) for s in sc.seeds]
                observed[dt] = max(r["_violation"] for r in res)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ShapeError, RangeError) as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return 2
    fit = calibration.fit_K(observed, safety)
    result = {"scenario": Path(sc.source).name, "tolerance": key, **fit}
    out = Path(out_dir) if out_dir is not None else Path(sc.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    p = out / f"{sc.output['prefix']}_calibration.json"
    p.write_text(dumps(result), encoding="utf-8")
    print(p)
    print(f"{key}: {fit['K']:.17g}")
    return 0


def _workers(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sddeflow", description=__doc__.strip().splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="execute a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p_run.add_argument("--workers", type=int, default=None,
                       help=f"seed-parallel worker processes (default ${WORKERS_ENV} or 1)")
    p_list = sub.add_parser("list", help="list built-in systems")
    p_list.add_argument("--json", action="store_true", help="machine-readable output")
    p_cal = sub.add_parser("calibrate", help="fit K sqrt(dt) tolerances for a scenario")
    p_cal.add_argument("scenario")
    p_cal.add_argument("--out", default=None)
    p_cal.add_argument("--safety", type=float, default=calibration.SAFETY)
    args = ap.parse_args(argv)
    if args.cmd == "run":
        return run_scenario(args.scenario, args.out, _workers(args.workers))
    if args.cmd == "list":
        sys.stdout.write(list_builtins(args.json))
        return 0
    return calibrate(args.scenario, args.out, args.safety)


if __name__ == "__main__":
    sys.exit(main())
