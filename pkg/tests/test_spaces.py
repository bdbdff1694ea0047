import numpy as np
import pytest

from decisionlab.spaces import Ball, Box, Discrete, Interval


def test_discrete_round_and_clip():
    s = Discrete(5)
    assert s.project(2)[0] == 2
    assert s.project(7)[0] == 4
    assert s.project(-3) == (0, True)
    assert s.contains(0) and s.contains(4) and not s.contains(5)


def test_interval_clamp():
    s = Interval(0.0, 30.0)
    assert s.project(12.0) == (12.0, False)
    assert s.project(31.0) == (30.0, True)
    assert s.project(-1.0) == (0.0, True)
    assert s.midpoint == 15.0


def test_box_clamp_componentwise():
    s = Box(0.0, 30.0, 2)
    a, proj = s.project(np.array([31.0, -1.0]))
    assert np.array_equal(a, [30.0, 0.0]) and proj


def test_ball_radial_projection():
    s = Ball(2)
    a, proj = s.project(np.array([3.0, 4.0]))
    assert proj
    assert np.allclose(a, [0.6, 0.8])
    inner, proj = s.project(np.array([0.3, 0.4]))
    assert not proj and np.allclose(inner, [0.3, 0.4])


def test_projection_idempotent():
    rng = np.random.default_rng(0)
    for s in (Interval(0.0, 30.0), Box(-1.0, 1.0, 3), Ball(3)):
        for _ in range(50):
            raw = rng.normal(scale=5.0, size=3)
            if isinstance(s, Interval):
                raw = float(raw[0])
            once, _ = s.project(raw)
            twice, again = s.project(once)
            assert not again
            assert np.allclose(once, twice, atol=1e-15)
            assert s.contains(once)


def test_degenerate_sizes_rejected():
    with pytest.raises(ValueError):
        Discrete(0)
    with pytest.raises(ValueError):
        Interval(3.0, 1.0)
