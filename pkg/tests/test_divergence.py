import io
import math

import numpy as np
import pytest
from oracles import gaussian_hellinger_sq, gaussian_kl, gaussian_renyi, gaussian_tv_equal_var

from reluflow import divergence as dv
from reluflow.densities import Gaussian, Uniform
from reluflow.errors import AbsoluteContinuityError


def N(m, s=1.0):
    return Gaussian([m], [[s * s]])


def N2(m, cov):
    return Gaussian(m, cov)


def test_identical_all_zero():
    p = N(0.3, 1.2)
    for f in (dv.kl, dv.tv, dv.hellinger_sq):
        est = f(p, p)
        assert abs(est.value) <= max(2 * est.error_bar, 1e-8)
    for lam in (0.25, 0.5, 2.0):
        est = dv.renyi(lam, p, p)
        assert abs(est.value) <= max(2 * est.error_bar, 1e-8)


@pytest.mark.parametrize("m1,s1,m2,s2", [(0, 1, 1, 1), (0, 1, 0, 2), (0.5, 0.7, -0.3, 1.4)])
def test_kl_gaussian_oracle(m1, s1, m2, s2):
    est = dv.kl(N(m1, s1), N(m2, s2))
    assert est.value == pytest.approx(gaussian_kl(m1, s1, m2, s2), abs=1e-6)
    assert est.method == "quadrature"


def test_kl_log2_minus_three_eighths():
    assert dv.kl(N(0), N(0, 2)).value == pytest.approx(math.log(2) - 3 / 8, abs=1e-6)


def test_tv_and_hellinger_oracles():
    assert dv.tv(N(0), N(1)).value == pytest.approx(gaussian_tv_equal_var(0, 1), abs=1e-6)
    assert dv.hellinger_sq(N(0), N(1)).value == pytest.approx(2 * (1 - math.exp(-1 / 8)), abs=1e-6)


def test_tv_disjoint_uniforms():
    assert dv.tv(Uniform([0.0], [1.0]), Uniform([2.0], [3.0])).value == pytest.approx(2.0, abs=1e-9)


def test_hellinger_sandwich(rng):
    for _ in range(20):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.5, 2.0, size=2)
        h = dv.hellinger_sq(N(m1, s1), N(m2, s2))
        t = dv.tv(N(m1, s1), N(m2, s2))
        assert h.value == pytest.approx(gaussian_hellinger_sq(m1, s1, m2, s2), abs=1e-5)
        slack = 3 * (h.error_bar + t.error_bar) + 1e-9
        assert h.value <= t.value + slack
        # unnormalized conventions: H^2 <= TV <= 2 H
        assert t.value <= 2 * math.sqrt(h.value) + slack


def test_f_divergence_specializations():
    p, q = N(0), N(1, 1.3)
    pairs = [
        (lambda t: t * np.log(t), dv.kl),
        (lambda t: np.abs(t - 1), dv.tv),
        (lambda t: (np.sqrt(t) - 1) ** 2, dv.hellinger_sq),
    ]
    for f, ref in pairs:
        a, b = dv.f_divergence(f, p, q), ref(p, q)
        assert abs(a.value - b.value) <= 3 * (a.error_bar + b.error_bar) + 1e-8


def test_f_divergence_dominance(rng):
    # f1(t) = (sqrt t - 1)^2 <= |t - 1| on t >= 0
    t = np.linspace(0.0, 50.0, 2001)
    assert np.all((np.sqrt(t) - 1) ** 2 <= np.abs(t - 1) + 1e-15)
    for _ in range(5):
        m1, m2 = rng.normal(size=2)
        p, q = N(m1), N(m2, 1.2)
        a = dv.f_divergence(lambda u: (np.sqrt(u) - 1) ** 2, p, q)
        b = dv.f_divergence(lambda u: np.abs(u - 1), p, q)
        assert a.value <= b.value + 3 * (a.error_bar + b.error_bar) + 1e-9


@pytest.mark.parametrize("lam", [0.25, 0.5, 0.9, 2.0])
def test_renyi_oracle(lam):
    assert dv.renyi(lam, N(0), N(1, 1.2)).value == pytest.approx(gaussian_renyi(lam, 0, 1, 1, 1.2), abs=1e-6)


def test_renyi_limit_to_kl():
    k = gaussian_kl(0, 1, 1, 1)
    for lam in (1 - 1e-3, 1 + 1e-3):
        assert abs(dv.renyi(lam, N(0), N(1)).value - k) < 1e-3


def test_renyi_monotone(rng):
    for _ in range(5):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.6, 1.6, size=2)
        vals = [dv.renyi(lam, N(m1, s1), N(m2, s2)) for lam in (0.25, 0.5, 0.9)]
        for a, b in zip(vals, vals[1:]):
            assert b.value >= a.value - 3 * (a.error_bar + b.error_bar) - 1e-12


def test_renyi_divergent_signals_inf():
    # order 2 with a much wider numerator diverges
    assert math.isinf(dv.renyi(2.0, N(0, 2.0), N(0, 1.0)).value)


def test_sup_ratio_examples():
    assert dv.sup_ratio(N(0), N(0)) == pytest.approx(1.0, abs=1e-9)
    assert dv.sup_ratio(N(0), N(0, 2)) == pytest.approx(2.0, rel=1e-6)
    assert math.isinf(dv.sup_ratio(N(0, 2), N(0)))


def test_sup_ratio_two_dimensional():
    p = N2([0.0, 0.0], np.eye(2))
    q = N2([0.0, 0.0], 4 * np.eye(2))
    assert dv.sup_ratio(p, q) == pytest.approx(4.0, rel=1e-6)


def test_pinsker_identical():
    c = dv.pinsker_certificates(N(0), N(0))
    assert c.pinsker_ok
    assert c.reverse_applicable and c.reverse_pinsker_ok


def test_pinsker_heavier_numerator_not_applicable():
    c = dv.pinsker_certificates(N(0, 2), N(0, 1))
    assert c.pinsker_ok
    assert not c.reverse_applicable
    assert c.to_dict()["sup_ratio"] is None


def test_pinsker_bounded_pair_positive_slack():
    c = dv.pinsker_certificates(N(0, 1), N(0.5, 1.3))
    assert c.pinsker_ok and c.pinsker_slack > 0
    assert c.reverse_applicable and c.reverse_pinsker_ok and c.reverse_slack > 0


def test_equal_variance_shift_has_unbounded_ratio():
    c = dv.pinsker_certificates(N(0), N(0.5))
    assert c.pinsker_ok and c.pinsker_slack > 0
    assert not c.reverse_applicable


def test_reverse_pinsker_factor_limits():
    assert dv.reverse_pinsker_factor(1.0) == pytest.approx(1.0)
    S = 5.0
    assert dv.reverse_pinsker_factor(S) == pytest.approx(math.log(S) / (1 - 1 / S))


def test_monte_carlo_agrees_with_quadrature():
    for p, q in [(N(0), N(1)), (N2([0.0, 0.0], np.eye(2)), N2([0.5, 0.0], [[1.5, 0.2], [0.2, 1.0]]))]:
        a = dv.kl(p, q, method="quadrature")
        b = dv.kl(p, q, method="monte_carlo", seed=7)
        assert abs(a.value - b.value) <= 3 * (a.error_bar + b.error_bar)
        assert b.seed == 7


def test_monte_carlo_requires_seed():
    with pytest.raises(ValueError):
        dv.kl(N(0), N(1), method="monte_carlo")


def test_monte_carlo_deterministic():
    a = dv.tv(N(0), N(1), method="monte_carlo", seed=3)
    b = dv.tv(N(0), N(1), method="monte_carlo", seed=3)
    assert a == b


def test_absolute_continuity_error():
    with pytest.raises(AbsoluteContinuityError) as info:
        dv.kl(Uniform([0.0], [2.0]), Uniform([0.0], [1.0]))
    assert info.value.witness is not None


def test_csv_rows():
    buf = io.StringIO()
    dv.write_csv([dv.kl(N(0), N(1)), dv.tv(N(0), N(1), method="monte_carlo", seed=1)], buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "name,value,error_bar,method,seed"
    assert lines[1].startswith("kl,")
    assert lines[2].endswith(",monte_carlo,1")
