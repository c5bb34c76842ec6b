import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sddeflow.core import NumericError
from sddeflow.flow import (ClosedFormFlow, DiffusionSpec, DriftSpec, Interpretation,
                           UnsupportedSystemError, check_diagonal, fd_jacobian, flow_evolve,
                           flow_inverse, gbm_flow_exact, ito_correction, ito_to_stratonovich,
                           stratonovich_to_ito)
from sddeflow.noise import sample_path, window_grid

STRAT = Interpretation.STRATONOVICH


def coupled_diffusion():
    """Non-diagonal, state dependent: two drivers acting on two coordinates."""
    def sigma(x):
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = 0.3 * np.sin(x[..., 1])
        out[..., 0, 1] = 0.2 * x[..., 0]
        out[..., 1, 0] = 0.1 * x[..., 0] * x[..., 1]
        out[..., 1, 1] = 0.25
        return out
    return DiffusionSpec(2, sigma)


def test_fd_jacobian_matches_analytic():
    x = np.array([0.3, -1.2])
    J = fd_jacobian(lambda y: np.stack([y[..., 0] * y[..., 1], np.sin(y[..., 0])], -1), x)
    np.testing.assert_allclose(J, [[x[1], x[0]], [np.cos(x[0]), 0.0]], atol=1e-9)


@given(st.floats(-3, 3))
def test_ito_correction_tanh(x):
    diff = DiffusionSpec.diagonal_from(np.tanh)
    c = ito_correction(diff, np.array([x]))
    expect = 0.5 * np.tanh(x) / np.cosh(x) ** 2
    assert abs(c[0] - expect) < 1e-8


def test_ito_correction_linear_closed_form():
    diff = DiffusionSpec.linear([0.5, 2.0])
    x = np.array([1.5, -0.5])
    np.testing.assert_allclose(ito_correction(diff, x), 0.5 * np.array([0.25, 4.0]) * x)


def test_interpretation_round_trip():
    diff = coupled_diffusion()
    drift = DriftSpec(lambda t, x: -x ** 3, interpretation=STRAT)
    back = ito_to_stratonovich(stratonovich_to_ito(drift, diff), diff)
    x = np.random.default_rng(0).normal(size=(20, 2))
    assert back.interpretation is STRAT
    np.testing.assert_allclose(back(0.0, x), drift(0.0, x), atol=1e-9)
    s = ito_to_stratonovich(DriftSpec(lambda t, x: -x ** 3), diff)
    assert s.interpretation is STRAT
    np.testing.assert_allclose(stratonovich_to_ito(s, diff)(0.0, x), -x ** 3, atol=1e-9)


def test_linear_conversion_stays_linear():
    d = stratonovich_to_ito(DriftSpec.linear([0.1, 0.0], STRAT), DiffusionSpec.linear([0.4, 1.0]))
    assert d.kind == "linear"
    np.testing.assert_allclose(d.params["rates"], [0.1 + 0.08, 0.5])


def test_check_diagonal():
    assert check_diagonal(DiffusionSpec.linear([1.0, 2.0]), 2)
    assert check_diagonal(DiffusionSpec.diagonal_from(lambda x: x * (2 - x)), 3)
    assert not check_diagonal(coupled_diffusion(), 2)
    # diagonal entries depending on another coordinate are not diagonal noise
    assert not check_diagonal(DiffusionSpec.diagonal_from(lambda x: x[..., ::-1]), 2)


def test_gbm_euler_converges_to_closed_form():
    sigma, rates = 0.5, 0.2
    drift = DriftSpec.linear([rates], STRAT)
    diff = DiffusionSpec.linear([sigma])
    errs = []
    for dt in (2.0 ** -4, 2.0 ** -8):
        e = []
        for seed in range(200):
            p = sample_path(seed, window_grid(0.0, 1.0, 2.0 ** -8), 1)
            num = flow_evolve(drift, diff, p, 0.0, 1.0, [1.0], dt).point
            e.append(abs(num[0] - gbm_flow_exact(sigma, p, 1.0, [1.0], [rates])[0]))
        errs.append(np.mean(e))
    # strong order one half: 16x smaller dt gives about 4x smaller error
    assert 2.5 < errs[0] / errs[1] < 7


def test_flow_jacobian_is_derivative_of_euler_map():
    diff = coupled_diffusion()
    drift = DriftSpec(lambda t, x: np.stack([-x[..., 0] + x[..., 1] ** 2, -0.5 * x[..., 1]], -1))
    p = sample_path(3, window_grid(0.0, 1.0, 0.01), 2)
    x = np.array([0.4, -0.2])
    res = flow_evolve(drift, diff, p, 0.0, 1.0, x, 0.01)
    fd = fd_jacobian(lambda y: flow_evolve(drift, diff, p, 0.0, 1.0, y, 0.01).point, x)
    np.testing.assert_allclose(res.jacobian_matrix, fd, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10_000))
def test_inverse_undoes_evolve(a, b, seed):
    diff = coupled_diffusion()
    drift = DriftSpec(lambda t, x: -0.5 * x)
    p = sample_path(seed, window_grid(0.0, 1.0, 0.01), 2)
    x = np.array([a, b])
    y = flow_evolve(drift, diff, p, 0.0, 1.0, x, 0.01).point
    np.testing.assert_allclose(flow_inverse(drift, diff, p, 1.0, y, 0.01), x, atol=1e-10)


def test_inverse_converges_to_exact_gbm_inverse():
    sigma = 0.3
    drift, diff = DriftSpec.zero(STRAT), DiffusionSpec.linear([sigma])
    errs = []
    for dt in (1e-2, 1e-3):
        e = []
        for seed in range(50):
            p = sample_path(seed, window_grid(0.0, 1.0, 1e-3), 1)
            exact = 2.0 / gbm_flow_exact(sigma, p, 1.0, [1.0])[0]
            e.append(abs(flow_inverse(drift, diff, p, 1.0, [2.0], dt)[0] - exact))
        errs.append(np.mean(e))
    assert errs[1] < errs[0] / 2


def test_inverse_divergence_reports_diagnostics():
    p = sample_path(0, window_grid(0.0, 1.0, 0.1), 1)
    stiff = DriftSpec(lambda t, x: -50.0 * x)
    with pytest.raises(NumericError) as err:
        flow_inverse(stiff, DiffusionSpec.zero(1), p, 1.0, [1.0], 0.1)
    assert err.value.diagnostics["iterations"] == 50
    assert "residual" in err.value.diagnostics


def test_evolve_blowup_freezes_nan():
    p = sample_path(0, window_grid(0.0, 1.0, 0.01), 1)
    res = flow_evolve(DriftSpec(lambda t, x: x ** 2), DiffusionSpec.zero(1), p, 0.0, 1.0,
                      [[1e3], [0.5]], 0.01)
    assert list(res.blowup) == [True, False]
    assert np.isnan(res.point[0, 0]) and np.isfinite(res.point[1, 0])


def test_closed_form_flows():
    p = sample_path(4, window_grid(0.0, 2.0, 0.01), 2)
    w = p.at(1.5)
    lin = ClosedFormFlow(DriftSpec.linear([0.1, -0.2], STRAT), DiffusionSpec.linear([0.3, 0.4]), 2)
    z = np.array([1.0, 2.0])
    np.testing.assert_allclose(lin.psi(1.5, w, z),
                               gbm_flow_exact([0.3, 0.4], p, 1.5, z, [0.1, -0.2]))
    np.testing.assert_allclose(lin.xi(1.5, w, lin.psi(1.5, w, z)), z)
    add = ClosedFormFlow(DriftSpec.zero(), DiffusionSpec.additive([0.5, 1.0]), 2)
    np.testing.assert_allclose(add.psi(1.5, w, z), z + [0.5, 1.0] * w)
    np.testing.assert_array_equal(add.inv_jac_times(1.5, w, z), z)
    # Itô linear drift is converted before matching the family
    ito = ClosedFormFlow(DriftSpec.linear([0.045]), DiffusionSpec.linear([0.3]), 1)
    np.testing.assert_allclose(ito.rates, [0.0], atol=1e-15)
    with pytest.raises(UnsupportedSystemError):
        ClosedFormFlow(DriftSpec.zero(), coupled_diffusion(), 2)
    with pytest.raises(UnsupportedSystemError):
        ClosedFormFlow(DriftSpec(lambda t, x: -x), DiffusionSpec.zero(1), 1)
