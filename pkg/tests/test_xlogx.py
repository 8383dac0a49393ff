import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.special import gamma

from reluflow.xlogx import (
    StretchedExponential,
    tail_conversion_check,
    write_csv,
    xlogx_density,
    xlogx_flow,
    xlogx_logdensity,
    xlogx_mass,
    xlogx_table,
    xlogx_velocity,
)


def test_flow_examples():
    assert xlogx_flow(math.e, 1.0) == pytest.approx(math.e ** math.e, rel=1e-14)
    assert xlogx_flow(1.0, 5.0) == 1.0
    assert xlogx_flow(0.3, 2.0) == 0.3
    assert xlogx_flow(-4.0, 2.0) == -4.0
    assert xlogx_flow(2.0, 0.0) == 2.0


def test_flow_matches_ode():
    x0 = np.array([1.0, 1.2, 2.0, 5.0])
    sol = solve_ivp(lambda _, x: xlogx_velocity(x), (0.0, 1.3), x0, rtol=1e-12, atol=1e-12, method="DOP853")
    np.testing.assert_allclose(xlogx_flow(x0, 1.3), sol.y[:, -1], rtol=1e-8)


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 3.0])
def test_normalization_closed_form(p):
    assert StretchedExponential(p).normalization == pytest.approx(2 * gamma(1 + 1 / p), rel=1e-12)


@pytest.mark.parametrize("p,t", [(2.0, 0.0), (2.0, 0.5), (1.0, 1.0), (3.0, -0.4), (0.8, 0.3)])
def test_mass_is_conserved(p, t):
    assert abs(xlogx_mass(p, t) - 1.0) < 1e-5


@pytest.mark.parametrize("t", [0.2, 0.7, 1.5])
def test_density_follows_characteristics(t):
    p = 2.0
    x = np.geomspace(1.0, 30.0, 200)  # images stay within [1, 1e3] for these times
    y = xlogx_flow(x, t)
    # rho(t, Phi_t x) * dPhi_t/dx = rho_0(x) with dPhi_t/dx = e^t x^{e^t - 1}
    log_jac = t + (math.exp(t) - 1.0) * np.log(x)
    lhs = xlogx_logdensity(p, t, y) + log_jac
    np.testing.assert_allclose(lhs, StretchedExponential(p).logpdf(x), atol=1e-10)


def test_density_below_one_untouched():
    x = np.linspace(-3, 0.999, 40)
    np.testing.assert_array_equal(xlogx_density(2.0, 1.2, x), StretchedExponential(2.0).pdf(x))


@pytest.mark.parametrize("p,t", [(2.0, 0.5), (1.5, 1.0)])
def test_tail_exponent_shrinks(p, t):
    x = np.geomspace(1e4, 1e8, 30)
    slope = np.polyfit(np.log(x), np.log(-xlogx_logdensity(p, t, x)), 1)[0]
    assert slope == pytest.approx(p * math.exp(-t), rel=1e-2)


@pytest.mark.parametrize(
    "p,q,t,finite",
    [(2.0, 1.0, 0.5, False), (2.0, 1.0, 1.0, True), (2.0, 2.0, 0.0, True), (3.0, 1.0, 1.0, False), (3.0, 1.0, 1.2, True)],
)
def test_tail_conversion(p, q, t, finite):
    check = tail_conversion_check(p, q, t)
    assert check.threshold == pytest.approx(math.log(p / q))
    assert check.ratio_limit_finite is finite


def test_time_reversal():
    assert tail_conversion_check(1.0, 2.0, -0.8, solution_over_reference=True).ratio_limit_finite
    assert not tail_conversion_check(1.0, 2.0, -0.5, solution_over_reference=True).ratio_limit_finite


@settings(max_examples=40, deadline=None)
@given(p=st.floats(0.6, 4.0), q=st.floats(0.5, 4.0), gap=st.floats(0.15, 1.0))
def test_threshold_separates(p, q, gap):
    q = min(q, p)
    thr = math.log(p / q)
    assert tail_conversion_check(p, q, thr + gap).ratio_limit_finite
    assert not tail_conversion_check(p, q, thr - gap).ratio_limit_finite


def test_check_rejects_bad_exponents():
    with pytest.raises(ValueError):
        tail_conversion_check(0.0, 1.0, 0.5)


def test_table_and_csv():
    rows = xlogx_table(2.0, 1.0, 1.0, [1.0, 10.0, 1e3])
    assert len(rows) == 3
    x, dens, ratio = rows[0]
    assert dens == pytest.approx(float(xlogx_density(2.0, 1.0, 1.0)))
    assert ratio == pytest.approx(StretchedExponential(1.0).pdf(1.0) / dens)
    buf = io.StringIO()
    write_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "x,density,ratio"
    assert len(lines) == 4
