import numpy as np
import pytest

from mmbridge.core import ReferenceConfig, seeded_rng
from mmbridge.reference import (
    BridgePairBatch,
    backward_target,
    bridge_moments,
    forward_target,
    interp,
    sample_bridge_times,
)

REF = ReferenceConfig(sigma=1.0)


def _pairs(n=64, d=2, seed=0, t0=0.0, t1=1.0):
    rng = seeded_rng(seed)
    return BridgePairBatch(rng.standard_normal((n, d)), rng.standard_normal((n, d)),
                           np.full(n, t0), np.full(n, t1))


def test_interp_pins_left_endpoint_exactly():
    pairs = _pairs()
    Z = seeded_rng(1).standard_normal((pairs.n, 2))
    out = interp(pairs, np.zeros(pairs.n), Z, REF)
    assert np.array_equal(out.points, pairs.X_init)


def test_interp_pins_right_endpoint_exactly():
    pairs = _pairs()
    Z = seeded_rng(1).standard_normal((pairs.n, 2))
    out = interp(pairs, np.ones(pairs.n), Z, REF)
    assert np.array_equal(out.points, pairs.X_final)


def test_interp_midpoint_variance_matches_bridge_law():
    # X_init = X_final = 0, sigma=1, unit interval, s=0.5: variance 0.25
    n = 200_000
    pairs = BridgePairBatch(np.zeros((n, 1)), np.zeros((n, 1)),
                            np.zeros(n), np.ones(n))
    Z = seeded_rng(2).standard_normal((n, 1))
    out = interp(pairs, np.full(n, 0.5), Z, REF).points
    var = out.var()
    se = 0.25 * np.sqrt(2.0 / n)  # sd of a chi^2 variance estimate
    assert abs(var - 0.25) <= 3 * se


def test_interp_moments_match_closed_form():
    # mean and variance against bridge_moments at an off-center time
    n = 200_000
    x0, x1, t = -1.0, 3.0, 0.7
    ref = ReferenceConfig(sigma=2.0)
    pairs = BridgePairBatch(np.full((n, 1), x0), np.full((n, 1), x1),
                            np.zeros(n), np.full(n, 2.0))
    Z = seeded_rng(3).standard_normal((n, 1))
    out = interp(pairs, np.full(n, t), Z, ref).points
    mean, var = bridge_moments(x0, x1, t, (0.0, 2.0), ref)
    assert abs(out.mean() - mean) <= 3 * np.sqrt(var / n)
    assert abs(out.var() - var) <= 3 * var * np.sqrt(2.0 / n)


def test_forward_target_zero_displacement():
    X = np.ones((4, 3))
    assert np.array_equal(forward_target(X, X, np.full(4, 0.2), np.ones(4)),
                          np.zeros((4, 3)))


def test_forward_target_unit_slope():
    out = forward_target(np.zeros((1, 1)), np.ones((1, 1)), np.zeros(1), np.ones(1))
    assert out == pytest.approx(1.0)


def test_forward_target_scales_with_remaining_time():
    out = forward_target(np.full((1, 1), 0.5), np.ones((1, 1)),
                         np.full(1, 0.75), np.ones(1))
    assert out == pytest.approx(2.0)


def test_backward_target_zero_displacement():
    X = np.full((4, 2), -1.0)
    assert np.array_equal(backward_target(X, X, np.full(4, 0.7), np.zeros(4)),
                          np.zeros((4, 2)))


def test_backward_target_unit_slope():
    out = backward_target(np.ones((1, 1)), np.zeros((1, 1)), np.ones(1), np.zeros(1))
    assert out == pytest.approx(-1.0)


def test_backward_target_scales_with_elapsed_time():
    out = backward_target(np.ones((1, 1)), np.zeros((1, 1)),
                          np.full(1, 0.25), np.zeros(1))
    assert out == pytest.approx(-4.0)


def test_bridge_moments_endpoints():
    mean, var = bridge_moments(2.0, -1.0, 0.0, (0.0, 1.0), REF)
    assert mean == 2.0 and var == 0.0


def test_bridge_moments_midpoint_variance():
    # sigma=2, unit interval, s=0.5: 4 * 1 * 0.25 = 1
    _, var = bridge_moments(0.0, 0.0, 0.5, (0.0, 1.0), ReferenceConfig(sigma=2.0))
    assert var == pytest.approx(1.0)


def test_bridge_moments_midpoint_mean():
    mean, _ = bridge_moments(-1.0, 3.0, 0.5, (0.0, 1.0), REF)
    assert mean == pytest.approx(1.0)


def test_sample_bridge_times_stay_interior():
    rng = seeded_rng(0)
    t0 = np.zeros(500)
    t1 = np.full(500, 2.0)
    t = sample_bridge_times(rng, t0, t1, 500)
    margin = 1e-3 * 2.0
    assert np.all(t >= margin) and np.all(t <= 2.0 - margin)
    # draws cover the interval rather than collapsing near one end
    assert t.min() < 0.2 and t.max() > 1.8


def test_pair_batch_validates_shapes():
    with pytest.raises(Exception):
        BridgePairBatch(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros(3), np.ones(3))
    with pytest.raises(Exception):
        BridgePairBatch(np.zeros((3, 2)), np.zeros((3, 2)), np.ones(3), np.zeros(3))
