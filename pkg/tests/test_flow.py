import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.linalg import expm

from reluflow.core import ControlSchedule, ControlSegment, PiecewiseGaussianDensity
from reluflow.errors import ComplexityError
from reluflow.flow import (
    density_at,
    flow_forward,
    flow_inverse,
    log_density_at,
    pushforward_density,
    rank_one_exponential,
)
from reluflow.oracle import integrate_ode, integrate_ode_backward


def random_schedule(rng, d, k, horizon=1.0):
    ts = np.concatenate([[0.0], np.sort(rng.uniform(0, horizon, k - 1)), [horizon]])
    segs = [
        ControlSegment(ts[i], ts[i + 1], rng.normal(size=d), rng.normal(size=d), rng.normal())
        for i in range(k)
        if ts[i + 1] > ts[i]
    ]
    fixed = []
    t = 0.0
    for s in segs:
        fixed.append(ControlSegment(t, s.t_end, s.w, s.a, s.b))
        t = s.t_end
    return ControlSchedule(tuple(fixed), horizon)


def single(w, a, b, T=1.0):
    return ControlSchedule((ControlSegment(0.0, T, w, a, b),), T)


def test_rank_one_exponential_examples():
    np.testing.assert_allclose(rank_one_exponential([1, 0], [1, 0], math.log(2)), np.diag([2.0, 1.0]))
    expected = np.eye(2) + 3 * np.outer([1, 0], [0, 1])
    np.testing.assert_allclose(rank_one_exponential([1, 0], [0, 1], 3.0), expected)
    np.testing.assert_allclose(rank_one_exponential([0.3, -2], [1.5, 0.1], 0.0), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(
    w=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    a=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    t=st.floats(-1.5, 1.5),
)
def test_rank_one_exponential_matches_expm(w, a, t):
    w, a = np.array(w), np.array(a)
    np.testing.assert_allclose(rank_one_exponential(w, a, t), expm(t * np.outer(w, a)), rtol=1e-9, atol=1e-9)


def test_zero_field_is_identity():
    sched = single([0.0, 0.0], [1.0, 2.0], 3.0)
    res = flow_forward(sched, [0.4, -0.7])
    np.testing.assert_array_equal(res.point, [0.4, -0.7])
    assert res.log_jacobian == 0.0
    np.testing.assert_array_equal(flow_inverse(sched, [0.4, -0.7]).point, [0.4, -0.7])


@pytest.mark.parametrize("x0", [0.3, 2.0, -0.5, 0.0])
def test_one_dimensional_dilation(x0):
    t = 0.7
    res = flow_forward(single([1.0], [1.0], 0.0), [x0], t)
    if x0 > 0:
        assert res.point[0] == pytest.approx(x0 * math.exp(t), rel=1e-14)
        assert res.log_jacobian == pytest.approx(t)
    else:
        assert res.point[0] == x0
        assert res.log_jacobian == 0.0


def test_inverse_one_dimensional():
    t = 0.9
    res = flow_inverse(single([1.0], [1.0], 0.0), [3.0], t)
    assert res.point[0] == pytest.approx(3.0 * math.exp(-t), rel=1e-14)


def test_forward_matches_oracle(rng):
    worst = 0.0
    for _ in range(30):
        d = int(rng.integers(1, 5))
        sched = random_schedule(rng, d, int(rng.integers(1, 21)))
        x0 = rng.normal(size=d)
        a, b = flow_forward(sched, x0), integrate_ode(sched, x0)
        worst = max(worst, np.max(np.abs(a.point - b.point) / np.maximum(1, np.abs(b.point))))
        worst = max(worst, abs(a.log_jacobian - b.log_jacobian))
    assert worst < 1e-8


def test_roundtrip_many_points(rng):
    sched = random_schedule(rng, 3, 10)
    y = rng.normal(size=(1000, 3)) * 2
    back = flow_inverse(sched, y)
    again = flow_forward(sched, back.point)
    assert np.max(np.abs(again.point - y)) < 1e-8
    np.testing.assert_allclose(back.log_jacobian, -again.log_jacobian, atol=1e-10)


def test_group_law(rng):
    sched = random_schedule(rng, 2, 8)
    x = rng.normal(size=(50, 2))
    mid = flow_forward(sched, x, 0.4).point
    # restart from the intermediate state with the remaining controls
    rest = [s for s in sched.segments if s.t_end > 0.4]
    first = rest[0]
    tail = [ControlSegment(0.0, first.t_end - 0.4, first.w, first.a, first.b)] + [
        ControlSegment(s.t_start - 0.4, s.t_end - 0.4, s.w, s.a, s.b) for s in rest[1:]
    ]
    end = flow_forward(ControlSchedule(tuple(tail), 0.6), mid).point
    np.testing.assert_allclose(end, flow_forward(sched, x).point, atol=1e-12)


def test_backward_oracle_matches_inverse(rng):
    sched = random_schedule(rng, 2, 6)
    y = rng.normal(size=2)
    a, b = flow_inverse(sched, y), integrate_ode_backward(sched, y)
    np.testing.assert_allclose(a.point, b.point, atol=1e-9)
    assert a.log_jacobian == pytest.approx(b.log_jacobian, abs=1e-9)


def test_pushforward_zero_field_unchanged():
    base = PiecewiseGaussianDensity.gaussian([0.0], [[1.0]])
    out = pushforward_density(base, single([0.0], [1.0], 0.0))
    x = np.linspace(-4, 4, 41)[:, None]
    np.testing.assert_array_equal(out.pdf(x), base.pdf(x))


def test_pushforward_one_dimensional_formula():
    t = 0.8
    base = PiecewiseGaussianDensity.gaussian([0.0], [[1.0]])
    out = pushforward_density(base, single([1.0], [1.0], 0.0, T=t))
    x = np.linspace(-6, 6, 1201)
    expected = np.where(x <= 0, stats.norm.pdf(x), math.exp(-t) * stats.norm.pdf(x * math.exp(-t)))
    np.testing.assert_allclose(out.pdf(x[:, None]), expected, rtol=1e-12, atol=1e-300)


def test_pushforward_nilpotent_two_dimensional():
    w, a, b, t = np.array([1.0, -1.0]), np.array([1.0, 1.0]), 0.3, 0.9
    base = PiecewiseGaussianDensity.gaussian(np.zeros(2), np.eye(2))
    sched = single(w, a, b, T=t)
    out = pushforward_density(base, sched)
    pts = np.random.default_rng(3).normal(size=(400, 2)) * 1.5
    s = pts @ a + b
    pre = pts - t * np.maximum(s, 0.0)[:, None] * w
    expected = stats.multivariate_normal(np.zeros(2), np.eye(2)).pdf(pre)
    np.testing.assert_allclose(out.pdf(pts), expected, rtol=1e-12)
    assert abs(out.mass() - 1.0) < 1e-6


def test_density_at_matches_pushforward(rng):
    for d in (1, 2):
        sched = random_schedule(rng, d, 6)
        base = PiecewiseGaussianDensity.gaussian(np.zeros(d), np.eye(d))
        out = pushforward_density(base, sched)
        x = rng.normal(size=(1000, d)) * 2
        np.testing.assert_allclose(log_density_at(base, sched, 1.0, x), out.logpdf(x), atol=1e-8)


def test_density_at_time_zero_and_zero_field():
    base = PiecewiseGaussianDensity.gaussian([0.0], [[1.0]])
    x = np.array([[0.3], [-1.2]])
    sched = single([2.0], [1.0], 0.0)
    np.testing.assert_allclose(density_at(base, sched, 0.0, x), base.pdf(x))
    np.testing.assert_allclose(density_at(base, single([0.0], [1.0], 0.0), 0.7, x), base.pdf(x))


def test_characteristic_conservation(rng):
    sched = random_schedule(rng, 2, 7)
    base = PiecewiseGaussianDensity.gaussian(np.zeros(2), np.eye(2))
    x0 = rng.normal(size=(20, 2))
    for t in (0.25, 0.5, 1.0):
        res = flow_forward(sched, x0, t)
        dens = pushforward_density(base, sched, t)
        carried = dens.pdf(res.point) * np.exp(res.log_jacobian)
        np.testing.assert_allclose(carried, base.pdf(x0), rtol=1e-8)


def test_piece_cap():
    rng = np.random.default_rng(0)
    sched = random_schedule(rng, 2, 12)
    base = PiecewiseGaussianDensity.gaussian(np.zeros(2), np.eye(2))
    with pytest.raises(ComplexityError) as info:
        pushforward_density(base, sched, cap=4)
    assert info.value.count > 4


def test_time_out_of_range():
    with pytest.raises(ValueError):
        flow_forward(single([1.0], [1.0], 0.0), [1.0], 2.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 3))
def test_roundtrip_property(seed, d):
    rng = np.random.default_rng(seed)
    sched = random_schedule(rng, d, 5)
    y = rng.normal(size=(10, d))
    np.testing.assert_allclose(flow_forward(sched, flow_inverse(sched, y).point).point, y, atol=1e-9)
