"""Samplers against closed-form chains, brute-force densities, and the
determinism contract."""

import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import norm

from gradflow.errors import DivergenceError, PreconditionerError
from gradflow.optimize import explicit_euler_step
from gradflow.potentials import (GaussianSpec, make_double_well,
                                 make_gaussian_mixture, make_gaussian_posterior,
                                 make_quadratic)
from gradflow.rng import RngStream
from gradflow.sample import (Ensemble, bdl_step, ensemble_covariance,
                             ensemble_langevin_step, integrated_autocorr_time,
                             mala_acceptance, mala_step, mala_transition,
                             run_sampler, ula_step)

RNG = np.random.default_rng(123)
STD_GAUSSIAN = make_quadratic([0.5])  # V = theta^2 / 2


# --- ULA -----------------------------------------------------------------------

def test_ula_zero_noise_is_explicit_euler():
    dw = make_double_well()
    theta = RNG.normal(size=(6, 1))
    got = ula_step(dw, theta, 0.1, np.zeros_like(theta))
    want = explicit_euler_step(dw, theta, 0.1)
    assert np.array_equal(got, want)


def test_ula_pure_diffusion_arithmetic():
    out = ula_step(STD_GAUSSIAN, np.array([0.0]), 0.5, np.array([1.0]))
    assert out[0] == pytest.approx(1.0)


def test_ula_stationary_variance_matches_ar1_fixed_point():
    # v = (1 - tau)^2 v + 2 tau  =>  v = 1 / (1 - tau/2)
    tau = 0.5
    j = 20000
    ens = Ensemble.gaussian(RngStream(314), j, [0.0], [[1.0]])
    run = run_sampler("ula", STD_GAUSSIAN, ens, tau, 400, thin=400)
    var = run.final[:, 0].var()
    target = 1.0 / (1.0 - tau / 2.0)
    assert abs(var - target) < 3.0 * target * np.sqrt(2.0 / j)


# --- MALA acceptance --------------------------------------------------------------

def test_mala_acceptance_identical_states():
    assert mala_acceptance(STD_GAUSSIAN, np.array([0.7]), np.array([0.7]), 0.3) == 1.0


def test_mala_acceptance_constant_shift_invariance():
    dw = make_double_well()
    shifted = dw.shifted(137.5)
    for _ in range(20):
        a, b = RNG.normal(size=(2, 1))
        base = mala_acceptance(dw, a, b, 0.2)
        assert mala_acceptance(shifted, a, b, 0.2) == pytest.approx(base, rel=1e-12)


def test_mala_acceptance_zero_density_proposal_rejected():
    # infinite energy at the proposal means target density 0: never accept
    from gradflow.potentials import Potential
    walled = Potential(
        dim=1,
        value=lambda t: np.where(np.abs(t[..., 0]) > 1, np.inf, 0.5 * t[..., 0] ** 2),
        grad=lambda t: np.clip(t, -1, 1))
    assert mala_acceptance(walled, np.array([0.0]), np.array([2.0]), 0.1) == 0.0


def test_mala_acceptance_brute_force_oracle():
    # independent evaluation of both proposal densities with scipy.stats
    tau = 0.5
    th, st = np.array([0.0]), np.array([1.0])

    def log_q(x, y):
        mean = x - tau * STD_GAUSSIAN.grad(x)
        return norm.logpdf(y[0], loc=mean[0], scale=np.sqrt(2 * tau))

    expected = min(1.0, np.exp(-0.5 * st[0]**2 + 0.5 * th[0]**2
                               + log_q(st, th) - log_q(th, st)))
    assert mala_acceptance(STD_GAUSSIAN, th, st, tau) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(np.exp(-0.125), rel=1e-12)


def test_mala_detailed_balance_pointwise():
    # pi(x) q(x,y) a(x->y) == pi(y) q(y,x) a(y->x) on random pairs
    dw = make_double_well()
    tau = 0.15

    def log_q(x, y):
        mean = x - tau * dw.grad(x)
        return float(norm.logpdf(y[0], loc=mean[0], scale=np.sqrt(2 * tau)))

    for _ in range(1000):
        x, y = RNG.normal(scale=0.8, size=(2, 1))
        lhs = (-float(dw.value(x)) + log_q(x, y)
               + np.log(mala_acceptance(dw, x, y, tau)))
        rhs = (-float(dw.value(y)) + log_q(y, x)
               + np.log(mala_acceptance(dw, y, x, tau)))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_mala_transition_forced_draws():
    theta = np.array([1.0])
    noise = np.array([0.5])
    new, accepted = mala_transition(STD_GAUSSIAN, theta, 0.2, noise, u=0.0)
    assert accepted and new[0] != theta[0]
    # u = 1 rejects whenever a < 1
    prop = ula_step(STD_GAUSSIAN, theta, 0.2, noise)
    if mala_acceptance(STD_GAUSSIAN, theta, prop, 0.2) < 1.0:
        same, rejected = mala_transition(STD_GAUSSIAN, theta, 0.2, noise, u=1.0)
        assert not rejected and same[0] == theta[0]


def test_mala_step_uses_substream():
    rng = RngStream(55)
    a1 = mala_step(STD_GAUSSIAN, np.array([0.3]), 0.2, rng, step=4)
    a2 = mala_step(STD_GAUSSIAN, np.array([0.3]), 0.2, rng, step=4)
    assert np.array_equal(a1[0], a2[0]) and a1[1] == a2[1]


def test_mala_removes_ula_bias_small():
    # tau large enough that ULA bias is visible; MALA variance stays near 1
    tau = 0.5
    j = 20000
    ens = Ensemble.gaussian(RngStream(2718), j, [0.0], [[1.0]])
    run = run_sampler("mala", STD_GAUSSIAN, ens, tau, 400, thin=400)
    var = run.final[:, 0].var()
    assert abs(var - 1.0) < 3.0 * np.sqrt(2.0 / j)
    assert 0.5 < run.stats.acceptance_rate < 1.0


# --- ensemble covariance and preconditioned step -------------------------------------

def test_ensemble_covariance_hand_cases():
    rng = RngStream(0)
    two = Ensemble(particles=np.array([[1.0], [-1.0]]), rng=rng)
    assert ensemble_covariance(two)[0, 0] == pytest.approx(1.0)

    same = Ensemble(particles=np.full((5, 2), 3.0), rng=rng)
    assert np.allclose(ensemble_covariance(same), 0.0)

    tri = Ensemble(particles=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), rng=rng)
    got = ensemble_covariance(tri)
    # brute-force summation oracle with divisor J
    pts = tri.particles
    mean = pts.mean(axis=0)
    want = sum(np.outer(q - mean, q - mean) for q in pts) / 3.0
    assert np.allclose(got, want, atol=1e-15)
    assert np.allclose(got, [[2 / 9, -1 / 9], [-1 / 9, 2 / 9]], atol=1e-15)


def test_ensemble_covariance_psd_random():
    for _ in range(20):
        ens = Ensemble(particles=RNG.normal(size=(7, 3)), rng=RngStream(1))
        eigs = np.linalg.eigvalsh(ensemble_covariance(ens))
        assert eigs.min() > -1e-12


def test_ensemble_step_identity_mobility_reduces_to_ula():
    # identical particles: covariance 0, ridge 1 gives unit mobility
    rng = RngStream(9)
    j, tau = 8, 0.05
    ens = Ensemble(particles=np.full((j, 1), 0.7), rng=rng, step=3)
    stepped = ensemble_langevin_step(STD_GAUSSIAN, ens, tau, ridge=1.0)
    noise = rng.normal_rows(3, 0, j, 1)
    want = ula_step(STD_GAUSSIAN, ens.particles, tau, noise)
    assert np.allclose(stepped.particles, want, atol=1e-15)
    assert stepped.step == 4


def test_ensemble_step_singular_covariance_error():
    ens = Ensemble(particles=np.zeros((4, 2)), rng=RngStream(3))
    with pytest.raises(PreconditionerError, match="ridge"):
        ensemble_langevin_step(make_quadratic([1.0, 1.0]), ens, 0.1, ridge=0.0)


def test_ensemble_tracks_gaussian_posterior_loose():
    pot, post = make_gaussian_posterior(GaussianSpec([0.0], [[1.0]]),
                                        design=[[1.0]], noise_cov=[[1.0]], data=[2.0])
    ens = Ensemble.gaussian(RngStream(100), 400, [0.0], [[1.0]])
    run = run_sampler("ensemble", pot, ens, 0.01, 4000, thin=4000)
    final = run.final[:, 0]
    assert abs(final.mean() - post.mean[0]) < 0.15
    assert abs(final.var() - post.covariance[0, 0]) / post.covariance[0, 0] < 0.3


# --- birth-death ------------------------------------------------------------------------

def test_bdl_exact_density_is_a_no_op():
    # with exact log-density every centered rate vanishes: pure Langevin
    rng = RngStream(77)
    ens = Ensemble.gaussian(rng, 50, [0.0], [[1.0]], )
    exact = lambda pts: -STD_GAUSSIAN.value(pts)
    stepped = bdl_step(STD_GAUSSIAN, ens, 0.05, log_density_fn=exact)
    rows = rng.uniform_rows(0, 0, 50, 3)
    want = ula_step(STD_GAUSSIAN, ens.particles, 0.05, ndtri(rows[:, :1]))
    assert np.array_equal(stepped.particles, want)


def test_bdl_constant_shift_leaves_exchange_unchanged():
    mix = make_gaussian_mixture([(0.5, GaussianSpec([-2.0], [[0.25]])),
                                 (0.5, GaussianSpec([2.0], [[0.25]]))])
    ens = Ensemble.gaussian(RngStream(31), 64, [-2.0], [[0.25]])
    a = bdl_step(mix, ens, 0.05)
    b = bdl_step(mix.shifted(250.0), ens, 0.05)
    assert np.allclose(a.particles, b.particles, atol=1e-12)


def test_bdl_conserves_particle_count_and_validates():
    mix = make_gaussian_mixture([(0.5, GaussianSpec([-2.0], [[0.25]])),
                                 (0.5, GaussianSpec([2.0], [[0.25]]))])
    ens = Ensemble.gaussian(RngStream(5), 33, [-2.0], [[0.25]])
    stepped = bdl_step(mix, ens, 0.05)
    assert stepped.size == 33
    with pytest.raises(ValueError):
        bdl_step(mix, Ensemble(particles=[[0.0]], rng=RngStream(1)), 0.05)
    with pytest.raises(ValueError):
        bdl_step(mix, ens, 0.05, bandwidth=-1.0)
    with pytest.raises(ValueError):
        bdl_step(mix, ens, 0.0)


def test_bdl_moves_mass_between_modes():
    # all particles left; the exchange should seed the right mode faster
    # than diffusion alone at this horizon
    mix = make_gaussian_mixture([(0.5, GaussianSpec([-2.0], [[0.25]])),
                                 (0.5, GaussianSpec([2.0], [[0.25]]))])
    ens = Ensemble.gaussian(RngStream(8), 300, [-2.0], [[0.25]])
    run = run_sampler("bdl", mix, ens, 0.01, 600, thin=600)
    right = float(np.mean(run.final[:, 0] > 0))
    ula = run_sampler("ula", mix, ens, 0.01, 600, thin=600)
    right_ula = float(np.mean(ula.final[:, 0] > 0))
    assert right > right_ula + 0.1


# --- run_sampler mechanics ---------------------------------------------------------------

def test_run_sampler_zero_steps_returns_initial():
    ens = Ensemble.gaussian(RngStream(4), 10, [0.0], [[1.0]])
    run = run_sampler("ula", STD_GAUSSIAN, ens, 0.1, 0)
    assert run.states.shape == (1, 10, 1)
    assert np.array_equal(run.states[0], ens.particles)
    assert run.stats.acceptance_rate == 1.0


@pytest.mark.parametrize("method", ["ula", "mala", "ensemble", "bdl"])
def test_run_sampler_worker_count_invariance(method):
    p = STD_GAUSSIAN
    ens = Ensemble.gaussian(RngStream(60), 30, [0.5], [[1.0]])
    runs = [run_sampler(method, p, ens, 0.05, 40, thin=10, workers=w)
            for w in (1, 3, 8)]
    for other in runs[1:]:
        assert np.array_equal(runs[0].states, other.states)
        assert runs[0].stats.n_accepted == other.stats.n_accepted


def test_run_sampler_restart_matches_single_run():
    # stepping 25+15 through a carried ensemble equals one 40-step run
    ens = Ensemble.gaussian(RngStream(91), 12, [0.0], [[1.0]])
    once = run_sampler("ula", STD_GAUSSIAN, ens, 0.1, 40, thin=40)
    first = run_sampler("ula", STD_GAUSSIAN, ens, 0.1, 25, thin=25)
    carried = Ensemble(particles=first.final, rng=ens.rng, step=25)
    second = run_sampler("ula", STD_GAUSSIAN, carried, 0.1, 15, thin=15)
    assert np.array_equal(once.final, second.final)


def test_run_sampler_divergence_error_names_step_and_particle():
    from gradflow.potentials import Potential
    quartic = Potential(dim=1, value=lambda t: t[..., 0] ** 4,
                        grad=lambda t: 4.0 * t**3)
    bad = Ensemble(particles=np.array([[1e200], [0.0]]), rng=RngStream(1))
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as err:
        run_sampler("ula", quartic, bad, 1.0, 10)
    assert err.value.particle == 0
    assert err.value.step >= 0


def test_run_sampler_thin_and_stats():
    ens = Ensemble.gaussian(RngStream(12), 5, [0.0], [[1.0]])
    run = run_sampler("ula", STD_GAUSSIAN, ens, 0.1, 10, thin=2)
    assert len(run.times) == 6
    assert np.allclose(np.diff(run.times), 0.2)
    assert run.stats.n_moves == 50
    with pytest.raises(ValueError):
        run_sampler("nope", STD_GAUSSIAN, ens, 0.1, 10)


# --- autocorrelation diagnostics ------------------------------------------------------------

def test_integrated_autocorr_time_ar1():
    # AR(1) with phi = 0.8 has integrated time (1 + phi)/(1 - phi) = 9
    phi = 0.8
    n, chains = 6000, 200
    x = np.zeros((n, chains))
    noise = RNG.normal(size=(n, chains)) * np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + noise[t]
    est = integrated_autocorr_time(x[500:])
    assert est == pytest.approx(9.0, rel=0.2)
    assert integrated_autocorr_time(RNG.normal(size=(4000, 50))) == pytest.approx(1.0, abs=0.2)
