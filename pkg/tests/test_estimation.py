import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from virtualbid.errors import Diverged, InsufficientHistory, SingularDesign
from virtualbid.estimation import (
    EstimatorConfig,
    ParamLayout,
    TrainingSet,
    check_gradient,
    fit,
    fit_gradient_ascent,
    fit_ols,
    gradient_errors,
    initial_params,
    likelihood_gradient,
    log_likelihood,
    pack,
    trailing_covariance,
)
from virtualbid.market_model import DriftParams
from virtualbid.simulate import WeatherProcessConfig, market_from_weather, typical_truth

from conftest import make_training_set, random_training_set


def one_day(diff, weather=0.0):
    return make_training_set(np.full((1, 1, 1), weather), np.array([[diff]]))


def fixed_phi(coef, sigma):
    coef = np.atleast_2d(coef)
    n, k1 = coef.shape
    return pack(DriftParams(coef), ParamLayout(n, k1 - 1, "fixed", np.atleast_2d(sigma)))


def test_standard_normal_at_mean():
    phi = fixed_phi([[0.3, 0.0]], [[1.0]])
    assert log_likelihood(phi, one_day(0.3)) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_univariate_density():
    s, r = 0.7, 0.25
    phi = fixed_phi([[0.0, 0.0]], [[s]])
    expected = -0.5 * math.log(2 * math.pi) - 0.5 * math.log(s) - r * r / (2 * s)
    assert log_likelihood(phi, one_day(r)) == pytest.approx(expected, rel=1e-14)


def test_matches_independent_density(rng):
    data = random_training_set(rng, n=2, k=2, T=3)
    coef = rng.normal(size=(2, 3))
    A = rng.normal(size=(2, 2))
    sigma = A @ A.T + 0.5 * np.eye(2)
    layout = ParamLayout(2, 2, "cholesky")
    phi = pack(DriftParams(coef), layout, sigma)
    b = coef[:, 0] + np.einsum("tij,ij->ti", data.weather, coef[:, 1:])
    oracle = sum(multivariate_normal(mean=b[t], cov=sigma).logpdf(data.diffs[t]) for t in range(3))
    assert log_likelihood(phi, data) == pytest.approx(oracle, rel=1e-10)


def test_cholesky_layout_round_trip(rng):
    A = rng.normal(size=(3, 3))
    sigma = A @ A.T + np.eye(3)
    phi = pack(DriftParams.zeros(3, 1), ParamLayout(3, 1, "cholesky"), sigma)
    np.testing.assert_allclose(phi.covariance(), sigma, rtol=1e-12)
    assert phi.layout.size == 3 * 2 + 6


def test_zero_residual_gradient_is_zero(rng):
    weather = rng.normal(size=(10, 2, 2))
    coef = rng.normal(size=(2, 3))
    diffs = coef[:, 0] + np.einsum("tij,ij->ti", weather, coef[:, 1:])
    phi = fixed_phi(coef, np.diag([0.5, 2.0]))
    g = likelihood_gradient(phi, make_training_set(weather, diffs)).values
    assert np.max(np.abs(g)) < 1e-12


@pytest.mark.parametrize("psi, T", [(0.0, 1), (0.4, 7), (-1.3, 25)])
def test_log_scale_gradient_is_minus_T(psi, T):
    # Sigma = exp(2 psi) with zero residuals: dH/dpsi = -T
    layout = ParamLayout(1, 1, "cholesky")
    phi = pack(DriftParams(np.array([[0.2, 0.0]])), layout, np.array([[math.exp(2 * psi)]]))
    data = make_training_set(np.zeros((T, 1, 1)), np.full((T, 1), 0.2))
    g = likelihood_gradient(phi, data).values
    assert g[-1] == pytest.approx(-T, rel=1e-12)
    assert g[:-1] == pytest.approx([0.0, 0.0], abs=1e-12)


@settings(max_examples=15)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(5, 50), st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(n, k, T, seed):
    rng = np.random.default_rng(seed)
    data = random_training_set(rng, n, k, T)
    A = rng.normal(size=(n, n))
    sigma = A @ A.T / n + 0.3 * np.eye(n)
    phi = pack(DriftParams(rng.normal(size=(n, k + 1))), ParamLayout(n, k, "cholesky"), sigma)
    assert check_gradient(phi, data) <= 1e-6


def test_gradient_errors_floor_and_relative():
    errs = gradient_errors(np.array([1.0, 0.0, 2.0]), np.array([1.0 + 1e-7, 5e-10, 1.0]))
    np.testing.assert_allclose(errs, [1e-7 / (1 + 1e-7), 0.0, 0.5], rtol=1e-6)


def test_constant_series_ols():
    rng = np.random.default_rng(3)
    data = make_training_set(rng.normal(size=(30, 2, 2)), np.full((30, 2), 0.4))
    coef = fit_ols(data).coefficients
    np.testing.assert_allclose(coef[:, 0], 0.4, atol=1e-12)
    np.testing.assert_allclose(coef[:, 1:], 0.0, atol=1e-12)


def test_exact_linear_ols(rng):
    weather = rng.normal(size=(20, 3, 2))
    coef = rng.normal(size=(3, 3))
    diffs = coef[:, 0] + np.einsum("tij,ij->ti", weather, coef[:, 1:])
    np.testing.assert_allclose(fit_ols(make_training_set(weather, diffs)).coefficients, coef, atol=1e-10)


def test_ols_singular_design():
    weather = np.ones((10, 1, 2))
    with pytest.raises(SingularDesign):
        fit_ols(make_training_set(weather, np.zeros((10, 1))))


def test_ols_needs_enough_days(rng):
    with pytest.raises(InsufficientHistory):
        fit_ols(random_training_set(rng, 1, 3, 3))


def test_start_at_ols_converges_immediately(rng):
    data = random_training_set(rng, 3, 2, 200)
    phi0 = initial_params(data, "drift_only")
    res = fit_gradient_ascent(phi0, data, EstimatorConfig())
    assert res.converged and res.iterations <= 2


def test_gradient_ascent_from_zero_reaches_ols():
    rng = np.random.default_rng(77)
    data = random_training_set(rng, 2, 2, 200)
    phi0 = initial_params(data, "drift_only")
    start = phi0.with_values(np.zeros_like(phi0.values))
    res = fit_gradient_ascent(start, data, EstimatorConfig(grad_tolerance=1e-6, max_iters=20000))
    assert res.converged and res.iterations > 10
    np.testing.assert_allclose(res.params.drift().coefficients, fit_ols(data).coefficients, atol=1e-6)


def test_trace_is_nondecreasing(rng):
    data = random_training_set(rng, 2, 1, 80)
    phi0 = initial_params(data, "full")
    perturbed = phi0.with_values(phi0.values + 0.2 * rng.normal(size=phi0.values.size))
    res = fit_gradient_ascent(perturbed, data, EstimatorConfig(max_iters=300))
    H = [h for _, h in res.trace]
    assert all(b >= a for a, b in zip(H, H[1:]))
    assert H[-1] > H[0]


def test_huge_step_never_returns_nan(rng):
    data = random_training_set(rng, 2, 2, 60)
    phi0 = initial_params(data, "full")
    start = phi0.with_values(phi0.values + 0.5)
    try:
        res = fit_gradient_ascent(start, data, EstimatorConfig(learning_rate=1e6, max_iters=200))
    except Diverged:
        return
    assert np.all(np.isfinite(res.params.values))
    assert res.trace[-1][1] >= res.trace[0][1]


def test_identical_residuals_give_pure_ridge():
    R = np.tile([0.5, -0.25], (10, 1))
    cov = trailing_covariance(R, window=10)
    assert np.array_equal(cov.matrix, np.zeros((2, 2)))
    np.testing.assert_allclose(cov.ridged(), cov.ridge * np.eye(2))
    assert cov.ridge > 0


def test_two_sample_covariance():
    r1, r2 = np.array([0.2, -0.4, 1.0]), np.array([-0.1, 0.3, 0.5])
    cov = trailing_covariance(np.stack([np.zeros(3), r1, r2]), window=2)
    np.testing.assert_allclose(cov.matrix, 0.5 * np.outer(r1 - r2, r1 - r2), rtol=1e-14, atol=1e-16)


def test_sixty_standard_normals():
    R = np.random.default_rng(60).standard_normal((60, 3))
    m = trailing_covariance(R).matrix
    off = m[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off) < 0.5)
    assert np.all((np.diag(m) > 0.4) & (np.diag(m) < 1.8))


def test_trailing_covariance_needs_window(rng):
    with pytest.raises(InsufficientHistory):
        trailing_covariance(rng.normal(size=(10, 2)), window=20)


def test_recovery_on_simulated_market():
    wcfg = WeatherProcessConfig.typical(3, seed=101)
    truth = typical_truth(3, wcfg, seed=102, drift_scale=0.05, variance=2.5e-5, correlation=0.3)
    data = market_from_weather(truth, wcfg, 500, seed=103).training_set()
    est = fit(data, "ols").params.drift().coefficients
    rel = np.abs(est - truth.drift.coefficients) / np.abs(truth.drift.coefficients)
    assert np.max(rel) < 0.05


def test_fit_methods_agree_on_drift_only(rng):
    data = random_training_set(rng, 3, 2, 150)
    a = fit(data, "ols").params.drift().coefficients
    b = fit(data, "grad").params.drift().coefficients
    assert np.max(np.abs(a - b)) <= 1e-6


def test_training_set_validation():
    with pytest.raises(ValueError):
        make_training_set(np.zeros((2, 1, 1)), np.array([[0.0], [np.nan]]))
    ts = make_training_set(np.zeros((3, 1, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        TrainingSet(ts.dates[::-1], ts.node_ids, ts.variables, ts.weather, ts.diffs)
    assert ts.take(slice(1, 3)).T == 2
