import math

import numpy as np
import pytest

import oracles
from smalldev.asymptotics import (correction_terms, mu, mu_integral, principal_term, v0_value)
from smalldev.model import Box, DiffusionModel, ModelError
from smalldev.spectral import analytic_eigensystem, fd_eigensystem

UNIT = Box((0.0,), (1.0,))
F_HALF = 4 / math.pi  # Σ c_1 f_1(0.5) = (2√2/π)·√2


def model1(drift="0", T=1.0, sigma="1"):
    return DiffusionModel.from_strings([drift], [[sigma]], T)


@pytest.fixture(scope="module")
def eig1():
    return analytic_eigensystem(UNIT, [[1.0]], 60)


def test_mu_examples():
    assert mu(model1(), 0.3) == 0.0
    m3 = DiffusionModel.from_strings(["1", "0", "0"], [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
    assert mu(m3, 0.0) == -0.5
    m2 = DiffusionModel.from_strings(["sin(t)", "cos(t)"], [["1", "0"], ["0", "1"]])
    for t in np.linspace(0, 7, 9):
        assert mu(m2, t) == pytest.approx(-0.5, abs=1e-15)


def test_mu_identity_random_drifts():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = [float(v) for v in rng.normal(size=3)]
        t = rng.uniform(0, 2)
        drift = [f"{a[0]!r}*cos(t)", f"{a[1]!r}+t", f"{a[2]!r}*t^2 + x1"]
        m = DiffusionModel.from_strings(drift, [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]])
        a0 = np.array([a[0] * math.cos(t), a[1] + t, a[2] * t * t])
        assert mu(m, t) == pytest.approx(-0.5 * a0 @ a0, rel=1e-14, abs=1e-15)


def test_mu_uses_sigma():
    m = model1("2", sigma="3")
    assert mu(m, 0.0) == pytest.approx(0.5 * 9 * 4 - 4)


def test_mu_integral_examples():
    assert mu_integral(model1(T=3.0)) == 0.0
    assert mu_integral(model1("1", T=2.0)) == pytest.approx(-1.0, rel=1e-15)
    assert mu_integral(model1("t", T=1.0)) == pytest.approx(-1 / 6, rel=1e-14)


def test_mu_integral_converges_fourth_order():
    m = model1("sin(3*t)", T=2.0)
    exact = -0.5 * (1.0 - math.sin(12.0) / 12.0)
    e1 = abs(mu_integral(m, n_panels=16) - exact)
    e2 = abs(mu_integral(m, n_panels=32) - exact)
    assert 3.5 < math.log2(e1 / e2) < 4.5


def test_mu_integral_time_reversed():
    m = model1("sin(3*t)+t", T=2.0)
    assert mu_integral(m, time_reversed=True) == pytest.approx(mu_integral(m), rel=1e-12)


def test_mu_integral_rejects_odd_panels():
    with pytest.raises(ValueError):
        mu_integral(model1(), n_panels=5)


def test_principal_unit_interval(eig1):
    pt = principal_term(eig1, model1(), 1.0, 1.0, [0.5])
    assert pt.exponent == pytest.approx(-math.pi**2 / 2, rel=1e-15)
    assert pt.F_z == pytest.approx(1.2732395, abs=1e-7)
    assert pt.F_z == pytest.approx(F_HALF, rel=1e-14)
    # (4/π) e^{-π²/2}; the often quoted 0.0091784 is 0.23% off this closed form
    assert pt.value == pytest.approx(0.0091570, abs=1e-7)
    assert pt.value == pytest.approx(F_HALF * math.exp(-math.pi**2 / 2), rel=1e-14)
    assert pt.multiplicity == 1


def test_principal_eps_half(eig1):
    pt = principal_term(eig1, model1(), 1.0, 0.5, [0.5])
    assert pt.exponent == pytest.approx(-2 * math.pi**2, rel=1e-15)
    assert pt.value == pytest.approx(3.4063e-9, rel=1e-4)
    assert pt.value == pytest.approx(F_HALF * math.exp(-19.7392088), rel=1e-7)


def test_principal_drift_factor(eig1):
    base = principal_term(eig1, model1(), 1.0, 1.0, [0.5]).value
    drift = principal_term(eig1, model1("1"), 1.0, 1.0, [0.5]).value
    assert drift / base == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert drift == pytest.approx(0.0055540, abs=1e-7)


def test_principal_exponent_scaling(eig1):
    m = model1(T=1.0)
    p1 = principal_term(eig1, m, 1.0, 0.7, [0.3]).value
    p2 = principal_term(eig1, m, 2.0, 0.7, [0.3]).value
    lam1 = eig1.lambdas[0]
    assert p2 / p1 == pytest.approx(math.exp(-lam1 * 1.0 / 0.49), rel=1e-12)


def test_principal_degenerate_level_sums_members():
    sq = Box((0.0, 0.0), (1.0, 1.0))
    m = DiffusionModel.from_strings(["0", "0"], [["1", "0"], ["0", "1"]])
    eig = analytic_eigensystem(sq, np.eye(2), 10)
    z = [0.5, 0.5]
    pt = principal_term(eig, m, 1.0, 1.0, z)
    assert pt.F_z == pytest.approx((4 / math.pi) ** 2, rel=1e-13)
    assert pt.multiplicity == 1


def test_principal_with_fd(eig1):
    fd = fd_eigensystem(UNIT, [[1.0]], 256, 3)
    a = principal_term(eig1, model1(), 1.0, 1.0, [0.5]).value
    b = principal_term(fd, model1(), 1.0, 1.0, [0.5]).value
    assert b == pytest.approx(a, rel=1e-3)


def test_principal_checks_inputs(eig1):
    with pytest.raises(ModelError):
        principal_term(eig1, model1(), 1.0, 1.0, [1.5])
    with pytest.raises(ModelError):
        principal_term(eig1, model1(), 1.0, 0.0, [0.5])
    with pytest.raises(ModelError):
        principal_term(eig1, model1(sigma="2"), 1.0, 1.0, [0.5])


def test_exact_series_oracle():
    # later terms are below 1e-20, so the series equals its first term in double precision
    assert oracles.bm_interval_survival(1.0, 0.5) == pytest.approx(0.0091570, abs=1e-7)
    assert oracles.bm_interval_survival(1.0, 0.5, terms=1) == oracles.bm_interval_survival(1.0, 0.5)


def test_v0_matches_exact_series(eig1):
    exact = oracles.bm_interval_survival(1.0, 0.5, terms=50)
    v = v0_value(eig1, model1(), 1.0, 1.0, [0.5], 25)
    assert v.value == pytest.approx(exact, rel=1e-10)
    assert v.tail_bound < 1e-100


def test_v0_first_term_is_principal(eig1):
    pt = principal_term(eig1, model1("0.3*t"), 1.0, 0.8, [0.4])
    v = v0_value(eig1, model1("0.3*t"), 1.0, 0.8, [0.4], 1)
    assert v.value == pt.value


def test_v0_five_terms(eig1):
    v = v0_value(eig1, model1(), 1.0, 1.0, [0.5], 5)
    assert v.terms[1] == 0.0
    third = (4 / (3 * math.pi)) * math.sin(3 * math.pi / 2) * math.exp(-9 * math.pi**2 / 2)
    assert v.terms[2] == pytest.approx(third, rel=1e-12)
    assert third == pytest.approx(-2.1e-20, rel=0.1)


def test_v0_short_time_reproduces_indicator(eig1):
    v = v0_value(eig1, model1(T=1e-12), 1e-12, 1.0, [0.5], 49)
    assert abs(v.value - 1.0) < 0.05


def test_v0_tail_bound_dominates_truncation(eig1):
    # at short T many terms matter; the bound must cover the omitted part
    exact = oracles.bm_interval_survival(0.01, 0.3, terms=2000)
    for N in (3, 6, 12):
        v = v0_value(eig1, model1(T=0.01), 0.01, 1.0, [0.3], N)
        assert abs(exact - v.value) <= v.tail_bound


def test_v0_rejects_too_many_terms(eig1):
    with pytest.raises(ValueError):
        v0_value(eig1, model1(), 1.0, 1.0, [0.5], 61)


def test_correction_terms_reserved():
    with pytest.raises(NotImplementedError):
        correction_terms()
