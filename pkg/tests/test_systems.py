import numpy as np
import pytest

from sddeflow.core import Segment
from sddeflow.systems import BUILTINS, DiscreteMeasure, LVParams, builtin


def test_measure_validation_and_apply():
    with pytest.raises(ValueError):
        DiscreteMeasure((-1.0, 0.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        DiscreteMeasure((0.5,), (1.0,))
    m = DiscreteMeasure((-1.0, -0.5), (0.25, 0.75))
    assert m.span == 1.0
    seg = Segment.from_function(lambda u: [u, 2 * u], 1.0, 5)
    np.testing.assert_allclose(m.apply(seg, 1), 2 * (0.25 * -1.0 + 0.75 * -0.5))


def test_lv_params_validation():
    with pytest.raises(ValueError):
        LVParams((1.0,), (2.0,), 0.1, (0.4,), (0.1,))
    with pytest.raises(ValueError):
        LVParams((1.0,), (1.0,), -0.1, (1.0,), (0.1,))
    with pytest.raises(ValueError):
        LVParams((1.0,), (1.0,), 0.1, (1.0,), (0.1,), delay=0.5, mu={"lags": [-1.0], "weights": [1.0]})
    p = LVParams((1.0, 1.0), (1.0, 1.0), 0.3, (1.0, 1.0), (0.1, 0.1))
    assert p.c.shape == (2, 2) and p.measure(0, 1).lags == (-1.0,)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_evaluate(name):
    sys = builtin(name)
    seg = Segment(sys.delay, np.full((5, 3, sys.dim), 0.5))
    out = sys.G(0.0, seg)
    assert out.shape == (3, sys.dim) and np.all(np.isfinite(out))
    assert sys.diffusion(seg.now).shape == (3, sys.dim, sys.diffusion.m)


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin("nope")
