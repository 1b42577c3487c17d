import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from levelopt.regfun import (
    RegParams,
    beta_reg,
    beta_reg_prime,
    heaviside_reg,
    heaviside_reg_prime,
    mollifier,
)

ETA, EPS2 = 0.05, 0.01


def test_heaviside_branch_values():
    assert heaviside_reg(0.0, ETA) == 0.0
    assert heaviside_reg(ETA, ETA) == pytest.approx(1.0, abs=1e-15)
    assert heaviside_reg(ETA / 2, ETA) == pytest.approx(0.5, abs=1e-15)
    assert heaviside_reg(-1.0, ETA) == 0.0 and heaviside_reg(3.0, ETA) == 1.0
    assert heaviside_reg_prime(0.0, ETA) == 0.0
    assert abs(heaviside_reg_prime(ETA, ETA)) <= 1e-12


def test_beta_branch_values():
    assert beta_reg(0.5, ETA, EPS2) == 0.0
    assert beta_reg(-ETA, ETA, EPS2) == pytest.approx(-ETA / EPS2, rel=1e-12)
    # both branches agree just below and above -eta
    lo, hi = beta_reg(np.array([-ETA - 1e-13, -ETA + 1e-13]), ETA, EPS2)
    assert abs(lo - hi) < 1e-9
    assert beta_reg_prime(-ETA, ETA, EPS2) == pytest.approx(1 / EPS2, rel=1e-12)
    assert beta_reg_prime(0.0, ETA, EPS2) == 0.0
    # derivative matching on both sides of the branch points
    for r in (-ETA, 0.0):
        left = beta_reg_prime(r - 1e-14, ETA, EPS2)
        right = beta_reg_prime(r + 1e-14, ETA, EPS2)
        assert abs(left - right) <= 1e-12 * max(1.0, abs(left)) + 1e-9


def _fd(f, r, h=1e-7):
    return (f(r + h) - f(r - h)) / (2 * h)


def test_heaviside_prime_fd(rng):
    r = rng.uniform(-0.02, ETA + 0.02, 100)
    r = r[(np.abs(r) > 1e-6) & (np.abs(r - ETA) > 1e-6)]
    fd = _fd(lambda s: heaviside_reg(s, ETA), r)
    ex = heaviside_reg_prime(r, ETA)
    assert np.all(np.abs(fd - ex) <= 1e-6 * np.maximum(np.abs(ex), 1.0))


def test_beta_prime_fd(rng):
    r = rng.uniform(-2 * ETA, 0.02, 100)
    r = r[(np.abs(r) > 1e-6) & (np.abs(r + ETA) > 1e-6)]
    fd = _fd(lambda s: beta_reg(s, ETA, EPS2), r)
    ex = beta_reg_prime(r, ETA, EPS2)
    assert np.all(np.abs(fd - ex) <= 1e-6 * np.maximum(np.abs(ex), 1.0))


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_monotone_and_ranges(a, b):
    lo, hi = min(a, b), max(a, b)
    assert heaviside_reg(lo, ETA) <= heaviside_reg(hi, ETA)
    assert beta_reg(lo, ETA, EPS2) <= beta_reg(hi, ETA, EPS2)
    assert 0.0 <= heaviside_reg(a, ETA) <= 1.0
    assert beta_reg(a, ETA, EPS2) <= 0.0
    assert heaviside_reg_prime(a, ETA) >= 0.0 and beta_reg_prime(a, ETA, EPS2) >= 0.0


def test_mollifier_support_symmetry_mass():
    e1 = 0.05
    assert mollifier(np.array([e1, 0.0]), e1) == 0.0
    assert mollifier(np.array([0.03, 0.04]), e1) == 0.0
    x = np.array([0.01, -0.02])
    assert mollifier(x, e1) == mollifier(-x, e1) > 0
    mass, _ = integrate.dblquad(
        lambda r, t: r * mollifier(np.array([r * np.cos(t), r * np.sin(t)]), e1),
        0, 2 * np.pi, 0, e1, epsabs=1e-12, epsrel=1e-10,
    )
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_params_defaults_and_validation():
    p = RegParams()
    assert (p.eps, p.eta, p.eps2, p.eps1, p.C, p.tol) == (1e-4, 0.05, 0.01, 0.05, 2.0, 1e-6)
    with pytest.raises(ValueError, match="eta must exceed eps"):
        RegParams(eps=0.1, eta=0.05, eps2=0.2)
    with pytest.raises(ValueError, match="eps2 must exceed eps"):
        RegParams(eps=0.02, eps2=0.01)
    with pytest.raises(ValueError):
        RegParams(C=1.5)
    with pytest.raises(ValueError):
        RegParams(tol=0.0)
