import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpsobol.errors import DegenerateDesignError
from gpsobol.gp import (FitOptions, FittedGp, KernelParams, TrendBasis, correlation, correlation_matrix, fit,
                        load_model, loo_q2, loo_residuals, profile_loglik, q2_coefficient, q2_score)
from gpsobol.inputs import Design, InputSpace, Uniform, lhs_sample

from conftest import fitted, toy_response


def naive_predict(gp, x, u=None):
    """Dense-solve kriging formulas written from scratch, in covariance units.

    The mean uses the plain learning covariance, the variances the
    nugget-regularized one, as the model documents.
    """
    s2, tau2 = gp.sigma2, gp.nugget * gp.sigma2
    K0 = s2 * np.exp(-np.sum(gp.params.theta * np.abs(gp.X[:, None, :] - gp.X[None, :, :]) ** gp.params.p, axis=-1))
    K = K0 + tau2 * np.eye(gp.n)

    def k(z):
        return s2 * np.exp(-np.sum(gp.params.theta * np.abs(gp.X - z) ** gp.params.p, axis=-1))

    f = np.concatenate([[1.0], x]) if gp.trend.kind == "linear" else np.array([1.0])
    F = gp.trend.evaluate(gp.X)
    mean = f @ gp.beta + k(x) @ np.linalg.solve(K0, gp.Y - F @ gp.beta)
    var = s2 - k(x) @ np.linalg.solve(K, k(x))
    cov = None
    if u is not None:
        ruu = np.exp(-np.sum(gp.params.theta * np.abs(x - u) ** gp.params.p))
        cov = s2 * ruu - k(x) @ np.linalg.solve(K, k(u))
    return mean, var, cov


def test_correlation_examples():
    params = KernelParams([1.0], [1.0])
    assert correlation(params, [0.3], [0.3]) == 1.0
    assert correlation(params, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-15)
    params = KernelParams([1.0, 2.0], [2.0, 2.0])
    assert correlation(params, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(np.exp(-3.0), rel=1e-15)


def test_correlation_dimension_mismatch():
    with pytest.raises(ValueError):
        correlation(KernelParams([1.0, 1.0], 2.0), [0.0], [1.0])


@pytest.mark.parametrize("theta,p,sigma2", [([-1.0], 2.0, 1.0), ([1.0], 2.5, 1.0), ([1.0], 0.0, 1.0), ([1.0], 2.0, 0.0)])
def test_kernel_params_validation(theta, p, sigma2):
    with pytest.raises(ValueError):
        KernelParams(theta, p, sigma2)


@given(st.integers(0, 10_000), st.floats(0.05, 20.0), st.floats(0.5, 2.0))
@settings(max_examples=25, deadline=None)
def test_gram_matrix_psd(seed, theta, p):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (50, 3))
    R = correlation_matrix(np.full(3, theta), np.full(3, p), X, X)
    assert np.allclose(R, R.T)
    assert np.all((R > 0) & (R <= 1))
    assert np.linalg.eigvalsh(R)[0] >= -1e-8


def test_trend_basis():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(TrendBasis("constant").evaluate(X), np.ones((2, 1)))
    assert np.array_equal(TrendBasis("linear").evaluate(X), [[1, 1, 2], [1, 3, 4]])
    assert TrendBasis("linear").size(5) == 6
    with pytest.raises(ValueError):
        TrendBasis("quadratic")


@pytest.fixture(scope="module")
def gp15():
    space = InputSpace((Uniform(0, 1), Uniform(-1, 2)))
    return space, fitted(space, 15, seed=4)


def test_cholesky_reconstructs_covariance(gp15):
    _, gp = gp15
    Sigma = gp.sigma2 * correlation_matrix(gp.params.theta, gp.params.p, gp.X, gp.X) + gp.nugget_variance * np.eye(gp.n)
    rebuilt = gp.sigma2 * gp.chol @ gp.chol.T
    assert np.max(np.abs(rebuilt - Sigma)) <= 1e-8 * np.max(np.abs(Sigma))


def test_predictions_match_naive_oracle(gp15):
    _, gp = gp15
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, u = rng.uniform([0, -1], [1, 2]), rng.uniform([0, -1], [1, 2])
        mean, var, cov = naive_predict(gp, x, u)
        scale = gp.sigma2
        assert abs(gp.predict_mean(x) - mean) <= 1e-10 * max(1.0, np.abs(gp.Y).max())
        assert abs(gp.predict_var(x) - var) <= 1e-10 * scale
        assert abs(gp.predict_cov(x, u) - cov) <= 1e-10 * scale


def test_interpolation_and_zero_variance_at_data(gp15):
    _, gp = gp15
    assert np.max(np.abs(gp.predict_mean(gp.X) - gp.Y)) <= 1e-6 * np.std(gp.Y)
    assert np.max(gp.predict_var(gp.X)) <= gp.nugget_variance + 1e-8 * gp.sigma2
    for j in range(gp.n):
        cov = gp.predict_cov(gp.X[j], np.array([0.3, 0.7]))
        assert abs(cov) <= 1e-6 * gp.sigma2


def test_covariance_diagonal_and_symmetry(gp15):
    _, gp = gp15
    rng = np.random.default_rng(1)
    P = rng.uniform([0, -1], [1, 2], (40, 2))
    C = gp.predict_cov(P, P)
    assert np.allclose(np.diag(C), gp.predict_var(P), atol=1e-12 * gp.sigma2)
    assert np.allclose(C, C.T, atol=1e-12 * gp.sigma2)
    assert np.linalg.eigvalsh(C)[0] >= -1e-8 * gp.sigma2


def test_far_point_reverts_to_trend(gp15):
    _, gp = gp15
    x = np.array([100.0, 100.0])
    assert np.all(gp.cross_corr(x) < 1e-12)
    trend = gp.trend.evaluate(x) @ gp.beta
    assert gp.predict_mean(x) == pytest.approx(trend[0], abs=1e-10 * np.abs(gp.Y).max())
    assert gp.predict_var(x) == pytest.approx(gp.sigma2, rel=1e-10)


def test_linear_data_recovers_trend():
    x = np.linspace(0, 1, 10)[:, None]
    gp = fit(Design(x, 2 + 3 * x[:, 0]), None, "linear", FitOptions(theta=[1.0]))
    assert np.allclose(gp.beta, [2.0, 3.0], atol=1e-6)
    assert loo_q2(gp).q2 == pytest.approx(1.0, abs=1e-6)


def test_likelihood_not_below_any_start(gp15):
    _, gp = gp15
    assert len(gp.trace) == 5
    for rec in gp.trace:
        assert gp.loglik >= rec.start_loglik
        assert gp.loglik >= rec.end_loglik - 1e-12


def test_fit_deterministic():
    space = InputSpace.uniform(2)
    a, b = fitted(space, 12, seed=3), fitted(space, 12, seed=3)
    assert np.array_equal(a.params.theta, b.params.theta)
    assert a.loglik == b.loglik


def test_theta_recovery_from_simulated_paths():
    hits, p_star, theta_star = 0, np.array([2.0]), np.array([5.0])
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        X = np.sort(rng.uniform(0, 10, 200))[:, None]
        R = correlation_matrix(theta_star, p_star, X, X) + 1e-8 * np.eye(200)
        y = np.linalg.cholesky(R) @ rng.standard_normal(200)
        gp = fit(Design(X, y), InputSpace.uniform(1, 0, 10), "constant", FitOptions(seed=s))
        hits += 2.5 <= gp.params.theta[0] <= 10.0
    assert hits >= 18


def test_estimate_p_stays_in_range():
    space = InputSpace.uniform(2)
    gp = fitted(space, 20, seed=5, estimate_p=True)
    assert np.all((gp.params.p > 0.5) & (gp.params.p <= 2.0))


def test_profile_loglik_gls_beta():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (12, 2))
    Y = rng.normal(size=12)
    F = TrendBasis("linear").evaluate(X)
    theta, p = np.array([2.0, 3.0]), np.array([2.0, 2.0])
    ll, beta, s2 = profile_loglik(X, Y, F, theta, p, 1e-8)
    R = correlation_matrix(theta, p, X, X) + 1e-8 * np.eye(12)
    Ri = np.linalg.inv(R)
    beta_ref = np.linalg.solve(F.T @ Ri @ F, F.T @ Ri @ Y)
    r = Y - F @ beta_ref
    s2_ref = r @ Ri @ r / 12
    ll_ref = -0.5 * (12 * np.log(2 * np.pi * s2_ref) + np.linalg.slogdet(R)[1] + 12)
    assert np.allclose(beta, beta_ref, atol=1e-8)
    assert s2 == pytest.approx(s2_ref, rel=1e-8)
    assert ll == pytest.approx(ll_ref, rel=1e-8)


def brute_force_loo(gp):
    out = np.empty(gp.n)
    for i in range(gp.n):
        keep = np.arange(gp.n) != i
        X, Y = gp.X[keep], gp.Y[keep]
        R = correlation_matrix(gp.params.theta, gp.params.p, X, X) + gp.nugget * np.eye(gp.n - 1)
        F = gp.trend.evaluate(X)
        Ri = np.linalg.inv(R)
        beta = np.linalg.solve(F.T @ Ri @ F, F.T @ Ri @ Y)
        r = correlation_matrix(gp.params.theta, gp.params.p, gp.X[i:i + 1], X)[0]
        pred = gp.trend.evaluate(gp.X[i:i + 1])[0] @ beta + r @ Ri @ (Y - F @ beta)
        out[i] = gp.Y[i] - pred
    return out


@pytest.mark.parametrize("trend", ["constant", "linear"])
def test_loo_matches_brute_force(trend):
    space = InputSpace.uniform(2)
    gp = fitted(space, 20, seed=6, trend=trend)
    ref = brute_force_loo(gp)
    assert np.allclose(loo_residuals(gp), ref, atol=1e-8 * np.std(gp.Y), rtol=0)
    report = loo_q2(gp)
    assert report.q2 == pytest.approx(q2_coefficient(gp.Y, gp.Y - ref), abs=1e-8)
    assert report.method == "leave_one_out"


def test_loo_null_model():
    space = InputSpace.uniform(2)
    low = 0
    for s in range(20):
        design = lhs_sample(space, 30, s)
        y = np.random.default_rng(s).permutation(toy_response(design.points))
        gp = fit(design.with_responses(y), space, "constant", FitOptions(seed=s, n_starts=3))
        low += loo_q2(gp).q2 <= 0.3
    assert low >= 19


def test_q2_examples():
    y = np.array([1.0, 2.0, 4.0, 8.0])
    assert q2_coefficient(y, y) == 1.0
    assert q2_coefficient(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        q2_coefficient(np.ones(3), np.zeros(3))


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_q2_never_above_one(values, seed):
    y = np.array(values)
    if np.ptp(y) < 1e-6:
        return
    y_hat = y + np.random.default_rng(seed).normal(size=y.size)
    assert q2_coefficient(y, y_hat) <= 1.0


def test_holdout_q2(gp15):
    space, gp = gp15
    test = lhs_sample(space, 200, 99)
    test = test.with_responses(toy_response(test.points))
    report = q2_score(gp, test)
    assert report.method == "holdout" and report.n_test == 200
    assert 0.9 < report.q2 <= 1.0


@pytest.mark.parametrize("make", [
    lambda: Design(np.random.default_rng(0).uniform(size=(5, 2))),
    lambda: Design(np.random.default_rng(0).uniform(size=(3, 2)), np.arange(3.0)),
    lambda: Design(np.random.default_rng(0).uniform(size=(6, 2)), np.ones(6)),
    lambda: Design(np.vstack([np.eye(2), np.eye(2), [[0.5, 0.5]]]), np.arange(5.0)),
])
def test_degenerate_designs(make):
    with pytest.raises(DegenerateDesignError):
        fit(make(), None, "linear", FitOptions(n_starts=1))


def test_serialization_round_trip(tmp_path, gp15):
    space, gp = gp15
    path = tmp_path / "model.json"
    gp.save(path, space)
    again, space2 = load_model(path)
    assert space2 == space
    P = np.random.default_rng(2).uniform([0, -1], [1, 2], (30, 2))
    assert np.max(np.abs(again.predict_mean(P) - gp.predict_mean(P))) <= 1e-12
    assert np.max(np.abs(again.predict_var(P) - gp.predict_var(P))) <= 1e-12 * gp.sigma2
    doc = json.loads(path.read_text())
    doc["version"] = 99
    with pytest.raises(ValueError):
        FittedGp.from_dict(doc)
