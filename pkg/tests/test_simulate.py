import numpy as np
import pytest
from scipy import stats

from sbmpot import _backend
from sbmpot.bernstein import RelativisticStable, Stable, StableSum
from sbmpot.errors import MaxStepsExceeded, StepBudgetExceeded, UnsupportedModel
from sbmpot.geometry import Domain
from sbmpot.kernels import ProcessModel, ball_exit_radial_cdf, ball_expected_exit, ball_poisson
from sbmpot.simulate import (Constant, JumpTo, Pointwise, RngStream, exit_sample_timestep, exit_sample_wos,
                             harmonic_measure, sbm_increment, stable_subordinator_increment, subordinator_increment)

BALL2 = Domain.parse("ball(0 0; 1)")


def have_compiled():
    try:
        _backend.get("compiled")
        return True
    except ImportError:
        return False


def test_rng_stream_determinism():
    a = RngStream(7, 3).generator(2).random(5)
    b = RngStream(7, (3,)).generator(2).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, RngStream(7, 3).generator(1).random(5))
    assert not np.allclose(a, RngStream(7, 3).substream(1).generator(2).random(5))
    with pytest.raises(TypeError):
        exit_sample_wos(1.0, BALL2, np.zeros(2), 0.5, n_paths=2)


@pytest.mark.parametrize("beta", [0.25, 0.5, 0.85])
def test_stable_subordinator_laplace(beta):
    gen = np.random.default_rng(1)
    t = 0.7
    S = stable_subordinator_increment(beta, t, gen, size=200000)
    for lam in (0.3, 1.0, 4.0):
        v = np.exp(-lam * S)
        assert abs(v.mean() - np.exp(-t * lam ** beta)) < 4 * v.std() / np.sqrt(len(v)) + 1e-4


@pytest.mark.parametrize("spec", [StableSum([(1.0, 0.6), (0.5, 1.5)]), RelativisticStable(1.0, 1.0),
                                  RelativisticStable(1.5, 2.0)])
def test_subordinator_laplace(spec):
    gen = np.random.default_rng(2)
    dt = 0.3
    S = subordinator_increment(spec, dt, gen, size=200000)
    for lam in (0.5, 2.0, 10.0):
        v = np.exp(-lam * S)
        assert abs(v.mean() - np.exp(-dt * spec.phi(lam))) < 4 * v.std() / np.sqrt(len(v)) + 1e-4


@pytest.mark.parametrize("spec,d", [(Stable(1.0), 2), (Stable(1.5), 3), (RelativisticStable(1.0, 1.0), 3)])
def test_sbm_characteristic_function(spec, d):
    model = ProcessModel(d, spec)
    gen = np.random.default_rng(3)
    t = 0.5
    X = sbm_increment(model, t, gen, size=200000)
    for r in (0.5, 1.0, 2.0):
        xi = r * np.eye(d)[0]
        v = np.cos(X @ xi)
        # E exp(i xi X_t) = exp(-t phi(|xi|^2))
        assert abs(v.mean() - np.exp(-t * spec.phi(r * r))) < 4 * v.std() / np.sqrt(len(v)) + 1e-4


def test_timestep_accumulator_is_exit_time(cauchy2):
    b = exit_sample_timestep(cauchy2, BALL2, np.zeros(2), 1e-2, 0, n_paths=500, registered_functionals=[Constant()])
    np.testing.assert_allclose(b.accumulators["one"], b.exit_time)
    assert np.all(b.steps >= 1) and not np.any(b.escaped)
    assert np.all(BALL2.sdf(b.exit_position) <= 0)


def test_timestep_exit_time_richardson(cauchy2):
    # first-order bias in dt; one extrapolation step lands on 2/pi
    est = {}
    for dt in (4e-3, 2e-3):
        b = exit_sample_timestep(cauchy2, BALL2, np.zeros(2), dt, RngStream(4, int(dt * 1e4)), n_paths=40000,
                                 workers=2)
        est[dt] = (b.exit_time.mean(), b.exit_time.std() / np.sqrt(b.n))
    rich = 2 * est[2e-3][0] - est[4e-3][0]
    se = np.hypot(2 * est[2e-3][1], est[4e-3][1])
    assert abs(rich - 2 / np.pi) < 4 * se
    assert est[2e-3][0] > 2 / np.pi


def test_wos_single_step_radial_law():
    b = exit_sample_wos(1.3, Domain.parse("ball(0 0 0; 1)"), np.zeros(3), 5, n_paths=20000)
    assert np.all(b.steps == 1)
    rho = np.linalg.norm(b.exit_position, axis=1)
    assert stats.kstest(rho, lambda s: ball_exit_radial_cdf(1.3, s)).pvalue > 1e-3


def test_wos_constant_matches_expected_exit():
    x = np.array([0.5, 0.2])
    b = exit_sample_wos(1.0, BALL2, x, 6, n_paths=40000, registered_functionals=[Constant(2.0)])
    v = b.accumulators["one"]
    assert abs(v.mean() - 2 * ball_expected_exit(1.0, 2, 1.0, x)) < 4 * v.std() / np.sqrt(b.n)
    np.testing.assert_allclose(v, 2 * b.occupation)


def test_wos_jump_accumulator_is_poisson_kernel(cauchy2):
    x = np.array([0.4, -0.3])
    z = np.array([1.6, 0.5])
    b = exit_sample_wos(1.0, BALL2, x, 8, n_paths=20000, registered_functionals=[JumpTo(cauchy2, z, name="jz")])
    v = b.accumulators["jz"]
    assert abs(v.mean() - ball_poisson(1.0, 2, 1.0, x, z)) < 4 * v.std() / np.sqrt(b.n)


@pytest.mark.parametrize("backend", ["compiled", "python"])
def test_wos_truncated_jump_matches_ball_integrals(cauchy2, backend):
    # the CSG ball is walked, so the cut comes from the per-ball post-pass, not the ball closed form
    from sbmpot.martin import _ball_truncated_integrals
    if backend == "compiled":
        try:
            _backend.get("compiled")
        except ImportError:
            pytest.skip("compiled backend not built")
    D = Domain.parse("inter(ball(0 0; 1), ball(0 0; 5))")
    z = np.array([np.cos(0.3), np.sin(0.3)])
    eps = np.array([0.5, 0.25, 0.125, 0.01])
    funcs = [JumpTo(cauchy2, z, e, name=f"e{k}") for k, e in enumerate(eps)]
    # from the centre the first ball is D itself and its sphere passes through z
    b = exit_sample_wos(1.0, D, np.zeros(2), 3, funcs, n_paths=50, backend=backend)
    ref = _ball_truncated_integrals(cauchy2, BALL2.tree, z, np.zeros(2), eps)
    got = np.array([b.accumulators[f.name] for f in funcs])
    assert np.all(np.isfinite(got))
    np.testing.assert_allclose(got, np.broadcast_to(ref[:, None], got.shape), rtol=1e-3)
    x0 = np.array([0.3, -0.2])
    b = exit_sample_wos(1.0, D, x0, 4, funcs[:3], n_paths=20000, backend=backend)
    ref = _ball_truncated_integrals(cauchy2, BALL2.tree, z, x0, eps[:3])
    for f, r in zip(funcs[:3], ref):
        v = b.accumulators[f.name]
        assert abs(v.mean() - r) < 4 * v.std() / np.sqrt(v.size)


def test_wos_generic_functional_quadrature():
    # f = 1 through the Green quadrature rule matches the closed form per ball
    x = np.array([0.1, 0.6])
    b = exit_sample_wos(1.0, BALL2, x, 9, n_paths=2000,
                        registered_functionals=[Pointwise(lambda w: np.ones(len(w)), "g"), Constant()])
    np.testing.assert_allclose(b.accumulators["g"], b.accumulators["one"], rtol=1e-6)


def test_wos_rejects_other_models():
    with pytest.raises(UnsupportedModel):
        exit_sample_wos(1.0, BALL2, np.zeros(2), 0, n_paths=4,
                        registered_functionals=[JumpTo(ProcessModel(2, Stable(1.5)), np.array([2.0, 0]))])
    with pytest.raises(UnsupportedModel):
        harmonic_measure(ProcessModel(3, RelativisticStable(1.0, 1.0)), Domain.parse("ball(0 0 0; 1)"),
                         np.zeros(3), 10, 0, method="wos")


def test_step_budgets(cauchy2):
    with pytest.raises(MaxStepsExceeded):
        exit_sample_timestep(cauchy2, BALL2, np.zeros(2), 1e-6, 0, n_paths=50, max_steps=3)
    with pytest.raises(StepBudgetExceeded):
        exit_sample_wos(1.0, Domain.parse("box(-1 -1; 1 1)"), np.array([0.99, 0.0]), 0, n_paths=200, max_steps=1)
    b = exit_sample_wos(1.0, Domain.parse("box(-1 -1; 1 1)"), np.array([0.99, 0.0]), 0, n_paths=200, max_steps=1,
                        strict=False)
    assert b.n == 200


def test_start_outside_rejected(cauchy2):
    with pytest.raises(ValueError):
        exit_sample_wos(1.0, BALL2, np.array([2.0, 0.0]), 0, n_paths=3)


def test_harmonic_measure_total_mass(cauchy3):
    D = Domain.parse("complement(ball(0 0 0; 1))")
    hm = harmonic_measure(cauchy3, D, np.array([1.5, 0, 0]), 4000, 0)
    assert hm.total_mass == pytest.approx(1.0)
    # transient: a positive fraction never comes back near the unit ball
    assert 0.05 < hm.escaped_fraction < 0.95
    hb = harmonic_measure(cauchy3, Domain.parse("ball(0 0 0; 1)"), np.zeros(3), 1000, 0, method="timestep", dt=1e-2)
    assert hb.total_mass == 1.0 and hb.escaped_fraction == 0.0


def test_workers_do_not_change_output():
    D = Domain.parse("union(ball(0 0; 1), box(0 -0.5; 2 0.5))")
    a = exit_sample_wos(1.0, D, np.zeros(2), 11, n_paths=5000, workers=1)
    b = exit_sample_wos(1.0, D, np.zeros(2), 11, n_paths=5000, workers=3)
    np.testing.assert_array_equal(a.exit_position, b.exit_position)
    np.testing.assert_array_equal(a.steps, b.steps)


@pytest.mark.skipif(not have_compiled(), reason="compiled backend not built")
@pytest.mark.parametrize("method", ["wos", "timestep"])
def test_backends_agree_in_law(cauchy2, method):
    D = Domain.parse("box(-1 -1; 1 1)")
    x = np.array([0.6, 0.1])
    out = {}
    for name in ("compiled", "python"):
        if method == "wos":
            b = exit_sample_wos(1.0, D, x, RngStream(12, len(name)), n_paths=20000, backend=name)
        else:
            b = exit_sample_timestep(cauchy2, D, x, 1e-2, RngStream(12, len(name)), n_paths=5000, backend=name)
        out[name] = np.arctan2(b.exit_position[:, 1], b.exit_position[:, 0])
    assert stats.ks_2samp(out["compiled"], out["python"]).pvalue > 1e-3
