import numpy as np
import pytest

from sddeflow.core import NumericError, RangeError, Segment
from sddeflow.flow import DiffusionSpec, DriftSpec
from sddeflow.noise import sample_path, window_grid
from sddeflow.rds import (Cocycle, TruncationError, biochem_equilibrium,
                          biochem_equilibrium_process, check_autonomous, check_cocycle_property,
                          check_order_preserving, check_super_equilibrium, cocycle_apply,
                          pullback_estimate)
from sddeflow.report import Status
from sddeflow.solver import SystemSpec
from sddeflow.systems import BiochemParams, biochem, builtin, default_biochem_params, frozen


def test_autonomy_required():
    sys = builtin("scalar-delay")
    assert check_autonomous(sys)
    timed = SystemSpec(1, 1.0, lambda t, s: np.sin(t) + 0 * s.now, sys.b, sys.diffusion)
    assert not check_autonomous(timed)
    with pytest.raises(ValueError):
        Cocycle(timed, 0, (1.0, 1.0), 0.01)
    flagged = SystemSpec(1, 1.0, sys.H, sys.b, sys.diffusion, time_dependent=True)
    assert not check_autonomous(flagged)


def test_cocycle_time_branches():
    c = Cocycle(builtin("scalar-delay"), 4, (0.0, 3.0), 0.01)
    eta = Segment.from_function(lambda u: [np.sin(3 * u)], 1.0, c.n_out)
    assert cocycle_apply(c, 0.0, 0, eta) is eta
    half = cocycle_apply(c, 0.5, 0, eta)
    # the first half of the window is still the initial history
    np.testing.assert_array_equal(half.samples[:51], eta.samples[50:])
    full = cocycle_apply(c, 1.0, 0, eta)
    assert full.samples.shape == eta.samples.shape
    np.testing.assert_array_equal(full.samples[0], eta.samples[-1])
    np.testing.assert_array_equal(full.samples[50], half.samples[-1])
    with pytest.raises(RangeError):
        cocycle_apply(c, 4.0, 0, eta)
    with pytest.raises(ValueError):
        cocycle_apply(c, -1.0, 0, eta)


def test_cocycle_resamples_coarse_input():
    c = Cocycle(builtin("scalar-delay"), 4, (0.0, 2.0), 0.01)
    out = cocycle_apply(c, 1.0, 0, Segment.constant([0.5], 1.0, n_samples=3))
    assert out.n_samples == c.n_out


@pytest.mark.parametrize("name", ["scalar-delay", "cooperative", "biochem", "lv-box"])
def test_cocycle_property_bitwise(name):
    sys = builtin(name)
    c = Cocycle(sys, 11, (0.0, 2.5), 0.01)
    rng = np.random.default_rng(0)
    etas = [Segment(sys.delay, 0.5 + 0.3 * rng.random((c.n_out, sys.dim))) for _ in range(3)]
    rep = check_cocycle_property(c, 1.3, 0.7, etas)
    assert rep.status is Status.PASS
    assert rep.statistics["max_deviation"] == 0.0


def test_blowup_in_cocycle_raises():
    sys = SystemSpec(1, 1.0, lambda t, s: s.now ** 2, DriftSpec.zero(), DiffusionSpec.zero(1))
    c = Cocycle(sys, 0, (0.0, 2.0), 0.01)
    with pytest.raises(NumericError):
        cocycle_apply(c, 2.0, 0, Segment.constant([10.0], 1.0, c.n_out))


def test_order_preserving_and_gate():
    c = Cocycle(builtin("cooperative"), 2, (0.0, 1.0), 0.01)
    rep = check_order_preserving(c, 1.0, 10, seed=1)
    assert rep.status is Status.PASS
    comp = Cocycle(builtin("lv-box"), 2, (0.0, 1.0), 0.01)
    gated = check_order_preserving(comp, 1.0, 10)
    assert gated.status is Status.FAIL
    assert gated.notes == ["drift is not quasimonotone"]


def test_pullback_contracts_to_zero():
    sys = SystemSpec(1, 1.0, lambda t, s: -s.now, DriftSpec.zero(), DiffusionSpec.zero(1))
    c = Cocycle(sys, 0, (20.0, 0.0), 0.01)
    fam = [Segment.constant([v], 1.0, c.n_out) for v in (-1.0, 0.0, 1.0)]
    est = pullback_estimate(c, fam, [5.0, 10.0, 15.0, 20.0], diam_tol=1e-6)
    assert est.converged
    assert np.max(np.abs(est.upper_env.samples)) < 1e-8
    assert np.max(np.abs(est.lower_env.samples)) < 1e-8
    with pytest.raises(RangeError):
        pullback_estimate(c, fam, [30.0])
    with pytest.raises(ValueError):
        pullback_estimate(c, fam, [2.0, 1.0])


def test_frozen_control_never_shrinks():
    c = Cocycle(frozen(), 0, (10.0, 0.0), 0.01)
    fam = [Segment.constant([v], 1.0, c.n_out) for v in (-2.0, 2.0)]
    est = pullback_estimate(c, fam, [2.0, 5.0, 10.0])
    assert [d for _, d in est.diameter_history] == [4.0, 4.0, 4.0]
    assert not est.converged


def test_deterministic_equilibrium():
    p = BiochemParams(alpha=(1.0, 2.0, 4.0), sigma=(0.0, 0.0, 0.0), b_const=1.0)
    path = sample_path(0, window_grid(60.0, 0.0, 1e-3), 3)
    v = biochem_equilibrium(p, path)
    # constant equilibrium b / alpha_1, then divided by each rate in turn
    np.testing.assert_allclose(v.samples[-1], [1.0, 0.5, 0.125], atol=1e-6)
    np.testing.assert_allclose(v.samples, np.broadcast_to(v.samples[-1], v.samples.shape),
                               atol=1e-6)


def test_equilibrium_of_zero_input_is_zero():
    p = BiochemParams(alpha=(1.0, 1.0), sigma=(0.3, 0.3), b_const=0.0)
    path = sample_path(1, window_grid(50.0, 0.0, 1e-2), 2)
    assert np.all(biochem_equilibrium(p, path).samples == 0.0)


def test_truncation_error_suggests_longer_window():
    p = default_biochem_params()
    path = sample_path(1, window_grid(50.0, 0.0, 1e-2), 3)
    with pytest.raises(TruncationError) as err:
        biochem_equilibrium_process(p, path, T_trunc=3.0)
    assert err.value.diagnostics["suggested_T_trunc"] == 6.0
    with pytest.raises(ValueError):
        biochem_equilibrium_process(BiochemParams((1.0,), (0.1,), 1.0, a=0.5), path)


def equilibrium_setup(p, seed=5, dt=1e-3, t=2.0):
    sys = biochem(p)
    c = Cocycle(sys, seed, (45.0, t), dt)
    v = biochem_equilibrium_process(p, c.path, dt=dt, t_end=t)
    return c, v


def test_equilibrium_is_invariant_under_affine_cocycle():
    p = default_biochem_params().affine()
    c, v = equilibrium_setup(p)
    rep = check_super_equilibrium(c, v, 1.0, 2.0, disc_tol=1e-2)
    # phi(t, w) v(w) = v(theta_t w): the excess vanishes up to discretization
    assert rep.status is Status.PASS
    assert abs(rep.statistics["max_excess"]) < 1e-2
    assert abs(rep.statistics["min_margin"]) < 1e-2


def test_saturating_feedback_gives_strict_margin():
    base = default_biochem_params()
    half = BiochemParams(base.alpha, base.sigma, base.b_const, 0.0,
                         lambda u: 0.5 * base.b_const + 0 * u, base.measures)
    c, v = equilibrium_setup(half)
    rep = check_super_equilibrium(c, v, 2.0, 2.0)
    assert rep.status is Status.PASS
    assert rep.statistics["mean_margin"] > 0.05
    with pytest.raises(ValueError):
        check_super_equilibrium(c, v, 0.5, 1.0)


def test_g_validation():
    with pytest.raises(ValueError):
        BiochemParams((1.0,), (0.1,), 1.0, g=lambda u: 1.0 / (1.0 + u))
    with pytest.raises(ValueError):
        BiochemParams((1.0,), (0.1,), 1.0, g=lambda u: 2.0 + 0 * u)
