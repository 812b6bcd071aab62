import numpy as np
import pytest

from sbmpot.bernstein import RelativisticStable
from sbmpot.errors import GeometryViolation, InvalidBoundaryPoint, UnsupportedModel
from sbmpot.geometry import Domain
from sbmpot.kernels import ProcessModel, ball_martin_kernel
from sbmpot.martin import (INFINITY, BoundaryMeasure, boundary_trace, classify_accessible, martin_integral,
                           martin_kernel)

BALL2 = Domain.parse("ball(0 0; 1)")
Z = np.array([np.cos(0.3), np.sin(0.3)])


def test_ball_point_accessible(cauchy2):
    v = classify_accessible(cauchy2, BALL2, Z, np.zeros(2))
    assert v.verdict == "accessible"
    assert v.evidence["method"] == "quadrature"
    # truncated integrals grow like eps^{-alpha/2}
    assert v.evidence["slope"] == pytest.approx(-0.5, abs=0.1)


def test_box_point_accessible_by_walks(cauchy2):
    D = Domain.parse("box(-1 -1; 1 1)")
    v = classify_accessible(cauchy2, D, np.array([1.0, 0.2]), np.zeros(2), n_paths=4000,
                            schedule=0.5 * 2.0 ** -np.arange(7))
    assert v.verdict == "accessible"
    assert v.evidence["method"] == "wos_accumulator"


def test_classify_rejects(cauchy2):
    with pytest.raises(InvalidBoundaryPoint):
        classify_accessible(cauchy2, BALL2, INFINITY, np.zeros(2))
    with pytest.raises(InvalidBoundaryPoint):
        classify_accessible(cauchy2, BALL2, np.array([0.5, 0.0]), np.zeros(2))
    with pytest.raises(GeometryViolation):
        classify_accessible(cauchy2, BALL2, Z, np.array([2.0, 0.0]))


def test_exterior_infinity_accessible(cauchy3):
    D = Domain.parse("complement(ball(0 0 0; 1))")
    v = classify_accessible(cauchy3, D, INFINITY, np.array([2.0, 0, 0]), n_paths=4000)
    assert v.verdict == "accessible"
    assert v.evidence["escape_probability"] > 0.3
    # a transient escape probability barely moves when the escape radius grows tenfold
    s = v.evidence["escape_sensitivity"]
    assert s["escape_radius"] == 10 * v.evidence["escape_radius"]
    assert abs(s["escape_probability"] - v.evidence["escape_probability"]) < 4 * np.hypot(
        s["std_error"], v.evidence["std_error"])


def test_martin_kernel_ball(cauchy2):
    assert martin_kernel(cauchy2, BALL2, np.zeros(2), Z, np.zeros(2)).value == 1.0
    for x in ([0.3, -0.4], [0.6, 0.5], [-0.8, 0.0]):
        x = np.array(x)
        e = martin_kernel(cauchy2, BALL2, x, Z, np.zeros(2))
        assert e.method == "quadrature" and e.flags == ()
        assert e.value == pytest.approx(ball_martin_kernel(1.0, 2, 1.0, x, Z), rel=1e-3)


def test_martin_kernel_offcentre_ball_by_walks(cauchy2):
    # same ball written as an intersection forces the walk estimator
    D = Domain.parse("inter(ball(0 0; 1), ball(0 0; 5))")
    x = np.array([0.4, 0.1])
    e = martin_kernel(cauchy2, D, x, Z, np.zeros(2), n_paths=40000, rng=1)
    assert e.method == "mc_wos"
    assert abs(e.value - ball_martin_kernel(1.0, 2, 1.0, x, Z)) < 4 * e.std_error + 0.05


def test_martin_kernel_infinity_bounded_rejected(cauchy2):
    with pytest.raises(InvalidBoundaryPoint):
        martin_kernel(cauchy2, BALL2, np.array([0.1, 0.0]), INFINITY, np.zeros(2))


def test_martin_integral_mass_and_linearity(cauchy2):
    mu = BoundaryMeasure([(Z, 0.5)])
    assert martin_integral(cauchy2, BALL2, mu, np.zeros(2), np.zeros(2)).value == pytest.approx(0.5)
    z2 = np.array([0.0, -1.0])
    x = np.array([0.2, 0.3])
    both = martin_integral(cauchy2, BALL2, BoundaryMeasure([(Z, 0.5), (z2, 2.0)]), x, np.zeros(2))
    target = 0.5 * ball_martin_kernel(1.0, 2, 1.0, x, Z) + 2.0 * ball_martin_kernel(1.0, 2, 1.0, x, z2)
    assert both.value == pytest.approx(target, rel=1e-3)
    assert martin_integral(cauchy2, BALL2, BoundaryMeasure(), x).value == 0


def test_boundary_measure_validate():
    with pytest.raises(InvalidBoundaryPoint):
        BoundaryMeasure([(np.array([0.5, 0.0]), 1.0)]).validate(BALL2)
    with pytest.raises(InvalidBoundaryPoint):
        BoundaryMeasure([(INFINITY, 1.0)]).validate(BALL2)
    with pytest.raises(GeometryViolation):
        BoundaryMeasure([(Z, -1.0)]).validate(BALL2)
    ext = Domain.parse("complement(ball(0 0; 1))")
    assert BoundaryMeasure([(INFINITY, 1.0), (Z, 2.0)]).validate(ext).total_mass == 3.0


def test_trace_of_one_vanishes(cauchy2):
    tr = boundary_trace(cauchy2, BALL2, lambda y: np.ones(len(y)), x0=np.zeros(2), n_stages=4, n_bins=8)
    # stage B(0, rho): mass P(|Y| < 1) = (2/pi) arccos(rho) for alpha = 1
    rho = np.array([0.5, 0.95, 0.995, 0.9995])
    np.testing.assert_allclose(tr.total_mass_trend, 2 / np.pi * np.arccos(rho), rtol=1e-4)
    assert not tr.converged or tr.total_mass_trend[-1] < 0.05


def test_trace_of_martin_kernel_concentrates(cauchy2):
    u = lambda y: ball_martin_kernel(1.0, 2, 1.0, y, Z)
    tr = boundary_trace(cauchy2, BALL2, u, x0=np.zeros(2), n_stages=5, n_bins=8, peaks=[Z])
    last = tr.stages[-1]
    assert last["total"] == pytest.approx(1.0, abs=0.05)
    zb = int(tr.bins.assign(Z[None])[0])
    assert last["boundary_bins"][zb] > 0.9 * last["total"]
    assert tr.converged and tr.limit.total_mass == pytest.approx(1.0, abs=0.05)


def test_trace_needs_bounded(cauchy2):
    with pytest.raises(GeometryViolation):
        boundary_trace(cauchy2, Domain.parse("complement(ball(0 0; 1))"), lambda y: np.ones(len(y)))


def test_unsupported_model():
    m = ProcessModel(3, RelativisticStable(1.0, 1.0))
    D = Domain.parse("ball(0 0 0; 1)")
    with pytest.raises(UnsupportedModel):
        classify_accessible(m, D, np.array([1.0, 0, 0]), np.zeros(3))
    with pytest.raises(UnsupportedModel):
        martin_kernel(m, D, np.zeros(3), np.array([1.0, 0, 0]))
