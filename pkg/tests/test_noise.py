import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sddeflow.core import RangeError, TimeGrid
from sddeflow.noise import (BrownianPath, sample_path, standard_normals, wiener_shift,
                            window_grid)


def test_normals_are_deterministic_and_random_access():
    a = standard_normals(42, 0, 50, 3)
    b = standard_normals(42, 0, 50, 3)
    np.testing.assert_array_equal(a, b)
    # counter-based: any block can be generated on its own
    np.testing.assert_array_equal(standard_normals(42, 17, 5, 3), a[17:22])
    assert not np.array_equal(standard_normals(43, 0, 50, 3), a)


def test_negative_steps_are_addressable():
    a = standard_normals(3, -10, 20, 2)
    np.testing.assert_array_equal(a[10:], standard_normals(3, 0, 10, 2))


def test_normals_distribution():
    z = standard_normals(7, 0, 200_000, 2)
    for j in range(2):
        assert stats.kstest(z[:, j], "norm").pvalue > 1e-3
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.01
    assert abs(np.corrcoef(z[:-1, 0], z[1:, 0])[0, 1]) < 0.01


def test_path_pinned_at_origin_and_variance():
    p = sample_path(1, window_grid(1.0, 1.0, 1e-3), 2)
    np.testing.assert_array_equal(p.at(0.0), [0.0, 0.0])
    assert p.t_minus == 1.0 and p.t_plus == 1.0
    W = np.stack([sample_path(s, window_grid(0.0, 1.0, 0.01), 1).at(1.0)[0]
                  for s in range(4000)])
    # Var W(1) = 1; 5 sigma band for the sample variance
    assert abs(W.var() - 1.0) < 5 * np.sqrt(2 / 4000)


def test_windows_agree_on_overlap():
    a = sample_path(9, window_grid(2.0, 3.0, 0.01), 2)
    b = sample_path(9, window_grid(0.0, 1.0, 0.01), 2)
    np.testing.assert_array_equal(a.increments_from(0.0, 100), b.increments_from(0.0, 100))
    np.testing.assert_array_equal(a.at(0.5), b.at(0.5))


def test_increment_aggregation():
    p = sample_path(2, window_grid(0.0, 1.0, 0.01), 1)
    assert p.increments_from(0.2, 10) is not None
    np.testing.assert_array_equal(p.increments_from(0.2, 10, q=1), p.increments[20:30])
    agg = p.increments_from(0.2, 5, q=4)
    np.testing.assert_allclose(agg[:, 0], p.increments[20:40, 0].reshape(5, 4).sum(1))
    with pytest.raises(RangeError):
        p.increments_from(0.9, 20)


@settings(max_examples=30, deadline=None)
@given(st.integers(-50, 50), st.integers(-50, 50))
def test_wiener_shift_group_law(a, b):
    p = sample_path(5, window_grid(2.0, 2.0, 0.01), 2)
    lhs = wiener_shift(wiener_shift(p, a), b)
    rhs = wiener_shift(p, a + b)
    np.testing.assert_array_equal(lhs.values, rhs.values)
    np.testing.assert_array_equal(lhs.at(0.0), [0.0, 0.0])
    # shifted increments are the original ones, by index
    np.testing.assert_array_equal(lhs.increments_from(0.0, 10),
                                  p.increments_from((a + b) * 0.01, 10))


def test_shift_out_of_window():
    p = sample_path(5, window_grid(0.1, 0.1, 0.01), 1)
    with pytest.raises(RangeError):
        wiener_shift(p, 11)


def test_from_values_and_csv():
    p = BrownianPath.from_values([-0.5, 0.0, 1.0, 0.5], 0.5, base_offset=1)
    np.testing.assert_array_equal(p.at(1.0), [0.5])
    np.testing.assert_allclose(p.at(-0.25), [-0.25])
    with pytest.raises(ValueError):
        BrownianPath.from_values([1.0, 2.0], 0.1)
    buf = io.StringIO()
    p.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,W1"
    assert lines[1] == "-0.5,-0.5"
    assert len(lines) == 5


def test_grid_must_contain_origin():
    with pytest.raises(RangeError):
        sample_path(0, TimeGrid(0.5, 0.1, 10), 1)
