import io
import json

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sddeflow.core import RangeError, Segment, ShapeError
from sddeflow.flow import DiffusionSpec, DriftSpec, Interpretation
from sddeflow.noise import sample_path, window_grid
from sddeflow.report import Status
from sddeflow.solver import (FlowMode, SolverId, SystemSpec, check_growth_condition,
                             check_semiflow, solve_conjugated, solve_direct, zero_H)

STRAT = Interpretation.STRATONOVICH


def lagged(t, seg):
    return seg.at(-seg.delay)


def det_delay():
    return SystemSpec(1, 1.0, lagged, DriftSpec.zero(), DiffusionSpec.zero(1))


def path(seed=0, T=3.0, dt=1e-3, m=1):
    return sample_path(seed, window_grid(0.0, T, dt), m)


def test_delay_euler_exact_on_first_interval():
    # dx = x(t-1) dt with x = 1 on [-1, 0] gives x(t) = 1 + t on [0, 1]
    run = solve_direct(det_delay(), path(), 0.0, Segment.constant([1.0], 1.0), 1.0, 1e-3)
    t = run.times[run.n_history:]
    np.testing.assert_allclose(run.path[:, 0], 1.0 + t, atol=1e-12)
    assert run.path[-1, 0] == pytest.approx(2.0, abs=1e-12)


def test_delay_euler_against_method_of_steps():
    # second interval: x' = t, so x(t) = 1.5 + t^2/2; compare with an ODE oracle
    run = solve_direct(det_delay(), path(), 0.0, Segment.constant([1.0], 1.0), 2.0, 1e-3)
    ref = solve_ivp(lambda t, y: [1.0 + (t - 1.0)], (1.0, 2.0), [2.0], rtol=1e-12, atol=1e-12)
    assert abs(run.path[-1, 0] - ref.y[0, -1]) < 2e-3
    assert ref.y[0, -1] == pytest.approx(3.5, abs=1e-10)


def test_initial_segment_is_kept():
    eta = Segment.from_function(lambda u: [np.cos(u)], 1.0, 11)
    run = solve_direct(det_delay(), path(), 0.0, eta, 0.5, 1e-2)
    np.testing.assert_array_equal(run.trajectory.values[:101:10], eta.samples)
    with pytest.raises(ShapeError):
        solve_direct(det_delay(), path(), 0.0, Segment.constant([1.0], 2.0), 0.5, 1e-2)
    with pytest.raises(RangeError):
        solve_direct(det_delay(), path(), 0.0, eta, 0.5, 0.03)


def test_blowup_truncates_single_run():
    sys = SystemSpec(1, 1.0, lambda t, seg: seg.now ** 2, DriftSpec.zero(), DiffusionSpec.zero(1))
    run = solve_direct(sys, path(), 0.0, Segment.constant([10.0], 1.0), 1.0, 1e-2)
    assert run.blowup is True
    assert np.all(np.isfinite(run.trajectory.values))
    assert run.times[-1] < 1.0
    assert run.metadata()["blowup"] is True


def test_blowup_in_ensemble_marks_members():
    sys = SystemSpec(1, 1.0, lambda t, seg: seg.now ** 2, DriftSpec.zero(), DiffusionSpec.zero(1))
    eta = Segment(1.0, np.array([[[10.0], [0.0]]] * 3))
    run = solve_direct(sys, [path(0), path(1)], 0.0, eta, 1.0, 1e-2)
    assert list(run.blowup) == [True, False]
    assert np.isnan(run.path[-1, 0, 0]) and run.path[-1, 1, 0] == 0.0


def gbm_delay(sigma=0.3):
    return SystemSpec(1, 1.0, lambda t, seg: -0.5 * seg.at(-1.0),
                      DriftSpec.linear([0.0], STRAT), DiffusionSpec.linear([sigma]))


def test_ensemble_matches_single_runs_bitwise():
    sys = gbm_delay()
    paths = [path(s, T=1.0) for s in range(3)]
    eta = Segment.constant([1.0], 1.0)
    batch = solve_direct(sys, paths, 0.0, eta, 1.0, 1e-2)
    for i, p in enumerate(paths):
        single = solve_direct(sys, p, 0.0, eta, 1.0, 1e-2)
        np.testing.assert_array_equal(batch.trajectory.values[:, i], single.trajectory.values)
    assert batch.metadata()["seed"] == [0, 1, 2]


def test_conjugated_equals_direct_without_flow():
    sys = det_delay()
    eta = Segment.from_function(lambda u: [1 + u * u], 1.0, 5)
    a = solve_direct(sys, path(), 0.0, eta, 2.0, 1e-2)
    b = solve_conjugated(sys, path(), 0.0, eta, 2.0, 1e-2)
    np.testing.assert_array_equal(a.trajectory.values, b.trajectory.values)
    assert b.solver_id is SolverId.CONJUGATED


def test_conjugated_and_direct_agree_in_the_limit():
    sys = gbm_delay()
    eta = Segment.constant([1.0], 1.0)
    gaps = []
    for dt in (1e-2, 1e-3):
        g = [abs(solve_direct(sys, path(s, T=1.0), 0.0, eta, 1.0, dt).path[-1, 0]
                 - solve_conjugated(sys, path(s, T=1.0), 0.0, eta, 1.0, dt).path[-1, 0])
             for s in range(20)]
        gaps.append(np.mean(g))
    assert gaps[1] < gaps[0] / 2 and gaps[1] < 1e-2


def test_numeric_flow_mode_tracks_analytic():
    sys = gbm_delay()
    eta = Segment.constant([1.0], 1.0)
    p = path(7, T=1.0, dt=1e-2)
    a = solve_conjugated(sys, p, 0.0, eta, 1.0, 1e-2, FlowMode.ANALYTIC)
    n = solve_conjugated(sys, p, 0.0, eta, 1.0, 1e-2, "numeric")
    assert np.max(np.abs(a.path - n.path)) < 2e-2
    with pytest.raises(ShapeError):
        solve_conjugated(sys, [p, p], 0.0, eta, 1.0, 1e-2, FlowMode.NUMERIC)


def test_semiflow_is_bitwise():
    sys = gbm_delay()
    eta = Segment.from_function(lambda u: [1.0 + 0.1 * u], 1.0, 11)
    rep = check_semiflow(sys, path(2), 0.0, 1.3, 2.5, eta, 1e-2)
    assert rep.status is Status.PASS
    assert rep.statistics["max_deviation"] == 0.0
    with pytest.raises(ValueError):
        check_semiflow(sys, path(2), 1.0, 0.5, 2.0, eta, 1e-2)


def test_growth_condition_heuristic():
    ok = check_growth_condition(lambda t, seg: np.sqrt(np.abs(seg.at(-1.0))), 0.5)
    assert ok.status is Status.PASS
    bad = check_growth_condition(lambda t, seg: seg.now ** 2, 1.0)
    assert bad.status is Status.WARN
    assert bad.statistics["exponent"] == pytest.approx(2.0, abs=0.05)
    zero = check_growth_condition(zero_H, 0.0)
    assert zero.status is Status.PASS


def test_csv_and_metadata():
    run = solve_direct(det_delay(), path(5), 0.0, Segment.constant([1.0], 1.0), 0.02, 1e-2)
    buf = io.StringIO()
    run.to_csv(buf)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "time,x1"
    assert rows[-1] == "0.02,1.02"
    meta = json.loads(run.metadata_json())
    assert meta == {"blowup": False, "dt": 0.01, "seed": 5, "solver_id": "DIRECT", "start": 0.0}
