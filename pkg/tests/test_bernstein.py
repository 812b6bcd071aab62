import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from sbmpot.bernstein import (RelativisticStable, Stable, StableSum, char_exponent, check_scaling, check_transience,
                              laplace_exponent_quad, levy_density_eval, phi_eval)
from sbmpot.errors import DimensionTooSmall, EmptyGrid

alphas = st.floats(0.05, 1.95)


def test_phi_examples():
    assert phi_eval(Stable(1.0), 4.0) == pytest.approx(2.0, rel=1e-15)
    assert phi_eval(StableSum([(1, 1), (1, 0.5)]), 1.0) == pytest.approx(2.0, rel=1e-15)
    assert phi_eval(RelativisticStable(1.0, 1.0), 0.0) == 0.0


def test_phi_rejects_negative():
    with pytest.raises(ValueError):
        phi_eval(Stable(1.0), -1.0)


@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0])
def test_bad_alpha(alpha):
    with pytest.raises(ValueError):
        Stable(alpha)


def test_relativistic_small_lambda_no_cancellation():
    # m((1 + lam/theta)^{a/2} - 1) ~ m a/2 lam/theta as lam -> 0
    s = RelativisticStable(1.0, 2.0)
    lam = 1e-14
    assert s.phi(lam) == pytest.approx(2.0 * 0.5 * lam / s.theta, rel=1e-10)


def test_levy_density_power_law():
    mu = lambda t: levy_density_eval(Stable(1.0), t)
    t = np.array([0.1, 1.0, 7.0])
    np.testing.assert_allclose(mu(2 * t) / mu(t), 2 ** -1.5, rtol=1e-14)


def test_levy_measure_integrability():
    mu = lambda t: float(levy_density_eval(Stable(1.0), t))
    small = integrate.quad(lambda t: t * mu(t), 0, 1)[0]
    large = integrate.quad(mu, 1, np.inf)[0]
    assert np.isfinite(small + large)
    # closed forms: int_0^1 t mu = (1/2)/G(1/2) / (1/2), int_1^inf mu = 1/G(1/2)
    assert small == pytest.approx(2 * 0.5 / np.sqrt(np.pi), rel=1e-8)
    assert large == pytest.approx(1 / np.sqrt(np.pi), rel=1e-8)


@pytest.mark.parametrize("lam", [1.0, 4.0, 9.0])
def test_laplace_exponent_recovered_from_density(lam):
    assert laplace_exponent_quad(Stable(1.0), lam) == pytest.approx(np.sqrt(lam), rel=1e-6)


@pytest.mark.parametrize("spec", [StableSum([(2.0, 0.6), (0.5, 1.7)]), RelativisticStable(1.2, 0.7)])
@pytest.mark.parametrize("lam", [0.3, 5.0, 200.0])
def test_laplace_exponent_other_kinds(spec, lam):
    assert laplace_exponent_quad(spec, lam) == pytest.approx(spec.phi(lam), rel=1e-6)


def test_char_exponent_examples():
    assert char_exponent(Stable(1.0), np.array([3.0, 4.0])) == pytest.approx(5.0)
    assert char_exponent(RelativisticStable(1.0, 1.0), np.zeros(3)) == 0.0


@given(st.floats(0, 2 * np.pi), st.floats(-5, 5), st.floats(-5, 5), alphas)
def test_char_exponent_rotation_invariant(theta, a, b, alpha):
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    xi = np.array([a, b])
    s = Stable(alpha)
    assert char_exponent(s, R @ xi) == pytest.approx(char_exponent(s, xi), rel=1e-12, abs=1e-300)


@given(alphas, st.floats(1e-3, 1e3), st.floats(1.01, 50))
def test_phi_increasing_and_sublinear(alpha, lam, k):
    s = Stable(alpha)
    assert s.phi(k * lam) > s.phi(lam)
    # Bernstein functions satisfy phi(k lam) <= k phi(lam) for k >= 1
    assert s.phi(k * lam) <= k * s.phi(lam) * (1 + 1e-12)


@given(st.floats(0.1, 1.9), st.floats(0.1, 5), st.floats(1e-3, 1e3))
def test_relativistic_between_linear_and_stable(alpha, m, lam):
    s = RelativisticStable(alpha, m)
    # concavity in lam with phi(0) = 0 and phi(lam) <= (lam + theta)^{a/2}
    assert 0 < s.phi(lam) <= (lam + s.theta) ** (alpha / 2)
    assert s.phi(2 * lam) <= 2 * s.phi(lam) * (1 + 1e-12)


def test_scaling_stable_exact():
    r = check_scaling(Stable(1.0), np.geomspace(1, 1e3, 5), np.geomspace(1e-2, 1e2, 5), True)
    assert r.satisfied_lsc and r.satisfied_usc
    assert r.delta1 == pytest.approx(0.5, abs=1e-12) and r.delta2 == pytest.approx(0.5, abs=1e-12)
    assert r.a1 == pytest.approx(1.0, abs=1e-12) and r.a2 == pytest.approx(1.0, abs=1e-12)


def test_scaling_stable_sum_indices():
    r = check_scaling(StableSum([(1, 1), (1, 1.5)]), np.geomspace(1, 1e6, 13), np.geomspace(1e-6, 1e6, 25), True)
    assert r.satisfied_lsc and r.satisfied_usc
    assert r.delta1 == pytest.approx(0.5, abs=0.02)
    assert r.delta2 == pytest.approx(0.75, abs=0.02)


def test_scaling_log_fails_lower():
    logphi = lambda lam: np.log1p(lam)
    r = check_scaling(logphi, np.geomspace(1, 1e6, 13), np.geomspace(1, 1e6, 13), global_variant=False)
    assert not r.satisfied_lsc


def test_scaling_errors():
    with pytest.raises(EmptyGrid):
        check_scaling(Stable(1.0), [], [1.0])
    with pytest.raises(ValueError):
        check_scaling(Stable(1.0), [1.0, 10.0], [0.5], global_variant=False)


def test_transience_examples():
    assert check_transience(RelativisticStable(1.0, 1.0), 3)
    assert check_transience(Stable(1.0), 2)
    # d = 2 relativistic behaves like Brownian motion at large scales
    assert not check_transience(RelativisticStable(1.0, 1.0), 2)
    with pytest.raises(DimensionTooSmall):
        check_transience(Stable(1.0), 1)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0, 1.5, 1.9])
def test_transience_stable_plane(alpha):
    assert check_transience(Stable(alpha), 2)
