import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbmpot.errors import GeometryViolation, GridTooCoarse, SupportViolation
from sbmpot.geometry import Domain
from sbmpot.kernels import ball_expected_exit, ball_exit_radial_cdf, ball_poisson
from sbmpot.potential import (Bump, Estimate, OuterCharge, ball_poisson_integral, bump_integral, combine,
                              expected_exit_time, extend_star, green_potential, operator_L_apply,
                              poisson_integral, poisson_kernel_est, weak_L_pairing)
from sbmpot.simulate import Pointwise

BALL2 = Domain.parse("ball(0 0; 1)")


def test_estimate_validation():
    with pytest.raises(ValueError):
        Estimate(1.0, 0.1, 10, "quadrature")
    with pytest.raises(ValueError):
        Estimate(1.0, -0.1, 10, "mc_wos")
    with pytest.raises(ValueError):
        Estimate(1.0, 0.1, 10, "guess")
    assert float(Estimate(2.5, 0.0, 0, "quadrature")) == 2.5


def test_combine():
    a = Estimate(1.0, 0.3, 100, "mc_wos")
    b = Estimate(2.0, 0.4, 200, "mc_wos", ("X",))
    c = combine([a, b], [2.0, 1.0])
    assert c.value == 4.0 and c.std_error == pytest.approx(np.hypot(0.6, 0.4))
    assert c.method == "mc_wos" and c.flags == ("X",) and c.n == 200
    q = Estimate(1.0, 0.0, 0, "quadrature")
    assert combine([q, q]).method == "quadrature"
    assert combine([q, a]).method == "hybrid"


def test_green_zero_function_is_exact(cauchy2):
    e = green_potential(cauchy2, BALL2, 0, np.zeros(2), 100, 0)
    assert e.value == 0 and e.method == "quadrature"


@pytest.mark.parametrize("method", ["wos", "timestep"])
def test_expected_exit_time(cauchy2, method):
    X = np.array([[0.0, 0.0], [0.5, -0.5]])
    est = expected_exit_time(cauchy2, BALL2, X, 20000 if method == "wos" else 4000, 1, method=method, dt=1e-3)
    for x, e in zip(X, est):
        target = ball_expected_exit(1.0, 2, 1.0, x)
        # time stepping overshoots by O(dt^{1/2}) in the exit time
        tol = 4 * e.std_error + (1e-12 if method == "wos" else 0.03)
        assert abs(e.value - target) < tol


def test_green_pointwise_function(cauchy2):
    # f(w) = |w|^2 against the closed form int G(0,w) |w|^2 dw for alpha = 1, d = 2
    from scipy import integrate
    from sbmpot.kernels import ball_green
    ref = integrate.quad(lambda s: ball_green(1.0, 2, 1.0, np.zeros(2), np.array([s, 0.0])) * s ** 3 * 2 * np.pi,
                         0, 1, limit=200)[0]
    e = green_potential(cauchy2, Domain.parse("box(-1 -1; 1 1)"), Pointwise(lambda w: np.sum(w * w, axis=-1)),
                        np.zeros(2), 4000, 2)
    # box contains the ball, so the box value dominates
    assert e.value > ref - 4 * e.std_error


def test_poisson_kernel_est_ball(cauchy2):
    x = np.array([0.3, 0.1])
    y = np.array([2.0, 0.0])
    e = poisson_kernel_est(cauchy2, BALL2, x, y, 20000, 3)
    assert abs(e.value - ball_poisson(1.0, 2, 1.0, x, y)) < 4 * e.std_error
    assert e.flags == ()
    with pytest.raises(GeometryViolation):
        poisson_kernel_est(cauchy2, BALL2, x, np.array([0.5, 0.0]), 10, 0)
    with pytest.raises(GeometryViolation):
        poisson_kernel_est(cauchy2, BALL2, x, np.array([1.0, 0.0]), 10, 0)
    near = poisson_kernel_est(cauchy2, BALL2, x, np.array([1.005, 0.0]), 100, 0)
    assert "NearBoundarySingularity" in near.flags


def test_poisson_kernel_monotone_in_domain(cauchy2):
    # G_D <= G_D' for D inside D', hence P_D(x, y) <= P_D'(x, y)
    x, y = np.array([0.2, 0.0]), np.array([1.8, 0.3])
    inner = Domain.parse("box(-0.7 -0.7; 0.7 0.7)")
    e = poisson_kernel_est(cauchy2, inner, x, y, 20000, 4)
    assert e.value < ball_poisson(1.0, 2, 1.0, x, y)


def test_poisson_integral_annulus_value(cauchy2):
    lam = OuterCharge.annulus(1.0, 2.0)
    # frozen: (2/pi) arccos(1/2) = 2/3 from the radial exit law
    assert ball_exit_radial_cdf(1.0, 2.0) == pytest.approx(2 / 3, abs=1e-14)
    tab = ball_poisson_integral(1.0, 2, 1.0, lam)
    assert tab(np.zeros(2))[0] == pytest.approx(2 / 3, abs=1e-8)
    e = poisson_integral(cauchy2, BALL2, lam, np.zeros(2), 20000, 5)
    assert abs(e.value - 2 / 3) < 4 * e.std_error
    x = np.array([0.6, 0.2])
    e = poisson_integral(cauchy2, BALL2, lam, x, 20000, 6)
    assert abs(e.value - tab(x)[0]) < 4 * e.std_error


def test_poisson_integral_with_atom(cauchy2):
    z = np.array([0.0, 1.7])
    lam = OuterCharge.annulus(1.0, 2.0) + OuterCharge.point(z, 0.5)
    x = np.array([0.1, 0.1])
    e = poisson_integral(cauchy2, BALL2, lam, x, 20000, 7)
    target = ball_poisson_integral(1.0, 2, 1.0, OuterCharge.annulus(1.0, 2.0))(x)[0] + \
        0.5 * ball_poisson(1.0, 2, 1.0, x, z)
    assert abs(e.value - target) < 4 * e.std_error
    with pytest.raises(GeometryViolation):
        poisson_integral(cauchy2, BALL2, OuterCharge.point(np.array([0.2, 0.0])), x, 10, 0)
    assert poisson_integral(cauchy2, BALL2, OuterCharge.zero(), x, 10, 0).value == 0


def test_poisson_integral_dichotomy(cauchy2):
    # charge (s - 1)^{-3} next to the sphere has infinite Poisson integral
    def g(s):
        return np.where((s > 1) & (s < 2), np.maximum(s - 1, 1e-100) ** -3.0, 0.0)

    bad = OuterCharge(lambda y: g(np.linalg.norm(np.atleast_2d(y), axis=-1)), (), (g, (1.0, 2.0)), 2.0)
    flagged = [("InfiniteIntegral" in poisson_integral(cauchy2, BALL2, bad, np.zeros(2), 2000, s).flags)
               for s in range(5)]
    assert all(flagged)
    ok = poisson_integral(cauchy2, BALL2, OuterCharge.annulus(1.0, 2.0), np.zeros(2), 2000, 0)
    assert "InfiniteIntegral" not in ok.flags


def test_charge_quadrature_masses():
    nodes, w = OuterCharge.annulus(1.0, 2.0, 3.0).quadrature(2)
    assert w.sum() == pytest.approx(3.0 * np.pi * 3.0, rel=1e-12)
    assert np.all(np.linalg.norm(nodes, axis=1) > 1)
    nodes, w = OuterCharge.ball_indicator([0, 0, 3.0], 0.5).quadrature(3)
    assert w.sum() == pytest.approx(4 / 3 * np.pi * 0.125, rel=1e-10)
    nodes, w = (OuterCharge.point([2.0, 0.0], 0.7)).quadrature(2)
    assert w.tolist() == [0.7]
    assert OuterCharge(lambda y: np.ones(len(y))).quadrature(2) is None


def test_star_measure():
    h = 0.05
    ax = np.arange(-1 + h / 2, 1, h)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    lam = OuterCharge.annulus(1.0, 2.0)
    sm = extend_star(BALL2, lam, (pts, np.ones(len(pts)), h))
    assert sm.interior_mass([-1, -1], [1, 1]) == pytest.approx(np.pi, rel=0.02)
    assert sm.exterior_mass([-2, -2], [2, 2]) == pytest.approx(3 * np.pi, rel=0.02)
    assert sm.mass([0, 0], [2, 2]) == pytest.approx(np.pi, rel=0.03)
    with pytest.raises(GridTooCoarse):
        extend_star(BALL2, lam, (pts[::7], np.ones(len(pts[::7])), h))


def test_L_of_constant_vanishes(cauchy2):
    u = lambda x: np.full(len(np.atleast_2d(x)), 3.0)
    assert abs(operator_L_apply(cauchy2, u, np.array([0.3, 0.1]), 0.2)) < 1e-10


@pytest.mark.parametrize("x", [[0.0, 0.0], [0.7, 0.0], [-0.2, 0.9]])
def test_L_of_exit_time_is_minus_one(cauchy2, x):
    x = np.array(x)
    u = lambda y: ball_expected_exit(1.0, 2, 1.0, y)
    rho = 0.5 * (1 - np.linalg.norm(x))
    assert operator_L_apply(cauchy2, u, x, rho, interfaces=[((0, 0), 1.0)], u_far=0.0) == pytest.approx(-1, abs=1e-6)


def test_L_of_poisson_integral_vanishes(cauchy3):
    lam = OuterCharge.annulus(1.0, 2.0)
    tab = ball_poisson_integral(1.0, 3, 1.0, lam)
    x = np.array([0.3, -0.2, 0.1])
    parts = operator_L_apply(cauchy3, tab, x, 0.2, interfaces=[((0, 0, 0), 1.0), ((0, 0, 0), 2.0)], u_far=0.0,
                             return_parts=True)
    assert abs(parts.value) < 1e-5
    # u_far = 0 is exact beyond the annulus, so the tail is -u(x) times the jump mass beyond T
    assert parts.tail == pytest.approx(-tab(x)[0] * cauchy3.jump_tail(parts_T(x)), rel=1e-10)


def parts_T(x):
    # default truncation: 1e3 times the farthest interface extent
    return 1e3 * (np.linalg.norm(x) + 2.0)


def test_bump_l1_norm():
    phi = Bump((0.1, 0.2), 0.3, 2.0)
    assert bump_integral(phi, lambda x: np.ones(len(x)), 2) == pytest.approx(phi.l1_norm(2), rel=1e-10)
    phi3 = Bump((0.0, 0.0, 0.0), 0.5)
    assert bump_integral(phi3, lambda x: np.ones(len(x)), 3) == pytest.approx(phi3.l1_norm(3), rel=1e-10)


@pytest.fixture(scope="module")
def exit_u():
    return lambda y: ball_expected_exit(1.0, 2, 1.0, y)


def test_weak_pairing_exit_time(cauchy2, exit_u):
    # <u, L phi> = <L u, phi> = -int phi
    phi = Bump((0.2, 0.1), 0.3)
    val = weak_L_pairing(cauchy2, exit_u, OuterCharge.zero(), phi, BALL2)
    assert val == pytest.approx(-phi.l1_norm(2), rel=2e-3)
    assert weak_L_pairing(cauchy2, exit_u, OuterCharge.zero(), phi.scaled(-2.0), BALL2) == pytest.approx(-2 * val,
                                                                                                         rel=1e-10)


def test_weak_pairing_harmonic(cauchy2):
    lam = OuterCharge.annulus(1.0, 2.0)
    tab = ball_poisson_integral(1.0, 2, 1.0, lam)
    phi = Bump((-0.1, 0.2), 0.4)
    val = weak_L_pairing(cauchy2, tab, lam, phi, BALL2)
    assert abs(val) < 2e-3 * phi.l1_norm(2)


def test_weak_pairing_support(cauchy2, exit_u):
    with pytest.raises(SupportViolation):
        weak_L_pairing(cauchy2, exit_u, OuterCharge.zero(), Bump((0.8, 0.0), 0.3), BALL2)


@given(st.floats(0.05, 0.6), st.floats(0, 1))
def test_bump_support(a, t):
    phi = Bump((0.0, 0.0), a)
    assert phi(np.array([[a * (1 + t), 0.0]]))[0] == 0
    assert phi(np.zeros((1, 2)))[0] == 1
