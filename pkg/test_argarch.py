#!/usr/bin/env python3
"""
Test AR(1)-GARCH(1,1)
Filtering, the conditional log-likelihood and the staged maximum likelihood fits
"""
import math

import numpy as np
import pytest

from conftest import SP500_AG, make_series
from core.argarch import (FULL_NAMES, ARGARCHParams, FullParams, filter_argarch, fit_argarch_on_residuals,
                          fit_full, full_bounds, loglik, loglik_from_residuals, moment_defaults,
                          standardized_residuals, unconditional_variance)
from core.configs import BfgsConfig
from core.errors import DegenerateInputError, DomainError, InputDataError
from core.logperiodic import LPParams, evaluate_trend, residuals
from core.optimizer import numeric_gradient
from core.synth import simulate_with_innovations


def reference_loglik(ag: ARGARCHParams, u) -> float:
    """Term-by-term conditional likelihood in plain floats"""
    u = [float(v) for v in u]
    sigma2 = ag.alpha0 / (1 - ag.alpha1 - ag.alpha2)
    eta_prev = None
    terms = []
    for t in range(1, len(u)):
        eta = u[t] - ag.rho * u[t - 1]
        if eta_prev is not None:
            sigma2 = ag.alpha0 + ag.alpha1 * eta_prev ** 2 + ag.alpha2 * sigma2
        terms.append(-0.5 * math.log(2 * math.pi) - 0.5 * math.log(sigma2) - 0.5 * eta ** 2 / sigma2)
        eta_prev = eta
    return math.fsum(terms)


# ---------------------------------------------------------------- filtering

def test_filter_collapses_without_dynamics():
    u = np.random.default_rng(2).normal(size=20)
    out = filter_argarch(ARGARCHParams(rho=0.0, alpha0=2.5, alpha1=0.0, alpha2=0.0), u)
    np.testing.assert_array_equal(out.eta[1:], u[1:])
    np.testing.assert_allclose(out.sigma2[1:], 2.5)
    assert np.isnan(out.eta[0]) and np.isnan(out.sigma2[0]) and np.isnan(out.eps[0])


def test_filter_arithmetic():
    out = filter_argarch(ARGARCHParams(rho=0.5, alpha0=1.0, alpha1=0.1, alpha2=0.2), [1.0, 2.0])
    assert out.eta[1] == pytest.approx(1.5)

    out = filter_argarch(ARGARCHParams(rho=0.0, alpha0=1.0, alpha1=0.1, alpha2=0.2), [0.0, 1.0, 0.0])
    assert out.sigma2[1] == pytest.approx(1 / 0.7)
    assert out.sigma2[2] == pytest.approx(1.0 + 0.1 + 0.2 / 0.7)
    assert out.sigma2[2] == pytest.approx(1.3857, abs=1e-4)


def test_filter_is_invertible_and_variance_floored():
    rng = np.random.default_rng(8)
    ag = ARGARCHParams(rho=0.8, alpha0=0.3, alpha1=0.1, alpha2=0.85)
    u = rng.normal(size=200).cumsum() * 0.1
    out = filter_argarch(ag, u)
    rebuilt = np.empty_like(u)
    rebuilt[0] = u[0]
    for t in range(1, u.size):
        rebuilt[t] = ag.rho * rebuilt[t - 1] + out.eta[t]
    np.testing.assert_allclose(rebuilt, u, atol=1e-12)
    assert np.all(out.sigma2[1:] >= ag.alpha0)
    np.testing.assert_allclose(out.eps[1:], out.eta[1:] / np.sqrt(out.sigma2[1:]))


def test_filter_errors():
    with pytest.raises(DomainError):
        filter_argarch(SP500_AG, [1.0])
    with pytest.raises(DomainError):
        filter_argarch(ARGARCHParams(rho=0.2, alpha0=1.0, alpha1=0.5, alpha2=0.6), np.zeros(5))
    with pytest.raises(DomainError):
        unconditional_variance(ARGARCHParams(rho=0.2, alpha0=1.0, alpha1=0.5, alpha2=0.5))


# ---------------------------------------------------------------- likelihood

def test_two_point_likelihood():
    ag = ARGARCHParams(rho=0.0, alpha0=1.0, alpha1=0.0, alpha2=0.0)
    assert loglik_from_residuals(ag, [0.0, 0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_likelihood_matches_reference_on_random_instance():
    rng = np.random.default_rng(31)
    ag = ARGARCHParams(rho=rng.uniform(-0.9, 0.9), alpha0=rng.uniform(0.1, 2.0),
                       alpha1=rng.uniform(0.0, 0.3), alpha2=rng.uniform(0.0, 0.6))
    lp = LPParams(A=100.0, B=-20.0, C=3.0, tc=0.5, beta=0.5, omega=8.0, phi=1.0)
    series = make_series(100.0 + rng.normal(0, 2, 5))
    expected = reference_loglik(ag, residuals(lp, series))
    assert loglik(FullParams(lp, ag), series) == pytest.approx(expected, abs=1e-10)


def test_likelihood_scaling():
    """Scaling prices by lambda shifts lnL by -(n-1) ln lambda"""
    rng = np.random.default_rng(4)
    lp = LPParams(A=300.0, B=-80.0, C=-6.0, tc=0.6, beta=0.4, omega=7.0, phi=1.2)
    ag = ARGARCHParams(rho=0.7, alpha0=0.5, alpha1=0.08, alpha2=0.85)
    prices = 250.0 + rng.normal(0, 5, 120)
    lam = 3.7
    base = loglik(FullParams(lp, ag), make_series(prices))
    scaled_lp = LPParams(lp.A * lam, lp.B * lam, lp.C * lam, lp.tc, lp.beta, lp.omega, lp.phi)
    scaled_ag = ARGARCHParams(ag.rho, ag.alpha0 * lam ** 2, ag.alpha1, ag.alpha2)
    scaled = loglik(FullParams(scaled_lp, scaled_ag), make_series(prices * lam))
    assert scaled - base == pytest.approx(-(prices.size - 1) * math.log(lam), abs=1e-8)


def test_likelihood_gradient_matches_independent_code(simulated_series, sp500_truth):
    values = sp500_truth.as_array()

    def fast(v):
        return loglik(FullParams.from_array(v), simulated_series)

    def slow(v):
        theta = FullParams.from_array(v)
        return reference_loglik(theta.ag, residuals(theta.lp, simulated_series))

    g_fast = numeric_gradient(fast, values)
    g_slow = numeric_gradient(slow, values)
    np.testing.assert_allclose(g_fast, g_slow, rtol=1e-4, atol=1e-4 * np.max(np.abs(g_slow)))


def test_standardized_residuals_of_true_model(sp500_truth):
    path = simulate_with_innovations(sp500_truth, 544, np.random.default_rng([77, 0]), origin='1985-07-01')
    eps = standardized_residuals(sp500_truth, path.series)
    n = eps.size
    assert abs(eps.mean()) < 4 / math.sqrt(n)
    assert abs(eps.var() - 1) < 4 * math.sqrt(2 / n)
    np.testing.assert_allclose(eps, path.eps[1:], atol=1e-8)


def test_trend_only_series_has_zero_standardized_residuals():
    lp = LPParams(A=300.0, B=-80.0, C=-6.0, tc=0.6, beta=0.4, omega=7.0, phi=1.2)
    series = make_series(evaluate_trend(lp, np.arange(40) / 252))
    eps = standardized_residuals(FullParams(lp, SP500_AG), series)
    np.testing.assert_allclose(eps, 0.0, atol=1e-9)


# ---------------------------------------------------------------- stage 2

def test_moment_defaults_and_degenerate_input():
    u = np.random.default_rng(3).normal(0, 2, 500)
    ag = moment_defaults(u)
    assert (ag.alpha1, ag.alpha2) == (0.05, 0.90)
    assert ag.alpha0 == pytest.approx(np.var(u, ddof=1) * 0.05)
    with pytest.raises(DegenerateInputError):
        fit_argarch_on_residuals(np.full(100, 3.0))
    with pytest.raises(InputDataError):
        fit_argarch_on_residuals(np.ones(10))


def test_stage_two_on_white_noise():
    u = np.random.default_rng(12).normal(size=1500)
    ag = fit_argarch_on_residuals(u)
    assert ag.is_valid()
    assert abs(ag.rho) < 0.1
    assert ag.alpha1 < 0.15


@pytest.mark.slow
def test_stage_two_recovers_simulated_process():
    truth = FullParams(LPParams(A=100.0, B=0.0, C=0.0, tc=10.0, beta=0.5, omega=7.0, phi=1.0),
                       ARGARCHParams(rho=0.9, alpha0=0.05, alpha1=0.05, alpha2=0.90))
    path = simulate_with_innovations(truth, 2000, np.random.default_rng([5, 0]))
    ag = fit_argarch_on_residuals(path.u)
    assert abs(ag.rho - 0.9) < 0.05
    assert abs(ag.persistence - 0.95) < 0.1


# ---------------------------------------------------------------- joint fit

def test_full_bounds():
    series = make_series(np.linspace(100, 150, 50))
    bounds = full_bounds(series)
    assert bounds.names == FULL_NAMES
    assert bounds['alpha0'] == (1e-12, pytest.approx(np.var(series.prices, ddof=1)))
    assert bounds['rho'] == (-1.0, 1.0)
    with pytest.raises(DegenerateInputError):
        full_bounds(make_series(np.full(50, 7.0)))


def test_joint_fit_ascends_from_its_start(simulated_series, sp500_truth):
    start_values = sp500_truth.as_array().copy()
    start_values[3] += 0.02
    start_values[5] += 0.3
    start = FullParams.from_array(start_values)
    fit = fit_full(simulated_series, start, bfgs=BfgsConfig(max_iterations=300))
    assert fit.model == 'extended'
    assert fit.objective == 'loglik'
    assert tuple(fit.names) == FULL_NAMES
    assert fit.objective_value >= loglik(start, simulated_series) - 1e-6
    params = FullParams.from_fit(fit)
    assert params.ag.alpha1 + params.ag.alpha2 < 1


def test_full_params_round_trip(sp500_truth):
    assert FullParams.from_dict(sp500_truth.to_dict()) == sp500_truth
    with pytest.raises(InputDataError, match="alpha2"):
        FullParams.from_dict({k: v for k, v in sp500_truth.to_dict().items() if k != 'alpha2'})
