"""Measurement covariance structures, deflation and the Kalman filter."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import joint_gaussian_filter, make_panel, random_cov, random_params

from dnsfr.market_data import MaturityGrid
from dnsfr.nelson_siegel import loading_matrix
from dnsfr.state_space import (
    ArCov,
    BandedCov,
    DiagonalCov,
    SsmParams,
    band_rho_bound,
    build_sigma_eps,
    deflate,
    kf_predict,
    kf_update,
    log_likelihood,
    rho_from_theta,
    run_filter,
    simulate_panel,
)


def base_params(n=4, kind=1, q=0, seed=0):
    return random_params(np.random.default_rng(seed), n, kind, q)


# ---------------------------------------------------------------------------
# covariance structures
# ---------------------------------------------------------------------------

def test_band_rho_bound_formula():
    for n in (2, 5, 12, 40):
        expect = 0.5 * math.sqrt(1.0 + math.pi ** 2 / (1.0 + 4.0 * n ** 2))
        assert band_rho_bound(n) == pytest.approx(expect, abs=1e-14)
    assert band_rho_bound(12) == pytest.approx(0.504258, abs=1e-6)


def test_rho_from_theta_midpoint_and_saturation():
    assert rho_from_theta(0.0, 12) == 0.0
    bound = band_rho_bound(12)
    assert rho_from_theta(50.0, 12) == pytest.approx(bound, abs=1e-12)
    assert rho_from_theta(-50.0, 12) == pytest.approx(-bound, abs=1e-12)


@given(theta=st.floats(-30.0, 30.0), n=st.integers(2, 20))
def test_rho_from_theta_range_and_monotonicity(theta, n):
    rho = rho_from_theta(theta, n)
    bound = band_rho_bound(n)
    assert -bound < rho < bound
    assert rho_from_theta(theta + 0.1, n) > rho


def test_structure1_diagonal():
    cov = DiagonalCov(sigma=np.array([1.0, 2.0, 3.0, 0.5]))
    np.testing.assert_array_equal(build_sigma_eps(cov, 4), np.diag([1.0, 4.0, 9.0, 0.25]))


def test_structure2_zero_theta_is_diagonal():
    cov = BandedCov(sigma=np.array([1.0, 2.0, 3.0]), theta=0.0)
    np.testing.assert_array_equal(build_sigma_eps(cov, 3), np.diag([1.0, 4.0, 9.0]))


def test_structure2_band_layout():
    sigma = np.array([0.5, 1.0, 2.0, 1.5])
    cov = BandedCov(sigma=sigma, theta=1.3)
    mat = build_sigma_eps(cov, 4)
    rho = rho_from_theta(1.3, 4)
    for i in range(4):
        assert mat[i, i] == pytest.approx(sigma[i] ** 2, abs=1e-14)
        for j in range(4):
            if abs(i - j) == 1:
                assert mat[i, j] == pytest.approx(rho * sigma[i] * sigma[j], abs=1e-14)
            elif abs(i - j) > 1:
                assert mat[i, j] == 0.0


def test_structure2_positive_definite_for_random_draws():
    rng = np.random.default_rng(30)
    for _ in range(300):
        cov = BandedCov(sigma=rng.uniform(0.05, 5.0, size=12), theta=rng.normal(scale=4.0))
        np.linalg.cholesky(build_sigma_eps(cov, 12))


def test_structure3_full_ar_layout():
    cov = ArCov(sigma=1.5, rho=0.4)
    mat = build_sigma_eps(cov, 5)
    for i in range(5):
        for j in range(5):
            assert mat[i, j] == pytest.approx(1.5 ** 2 * 0.4 ** abs(i - j), abs=1e-14)
    np.testing.assert_array_equal(build_sigma_eps(ArCov(sigma=2.0, rho=0.0), 4),
                                  4.0 * np.eye(4))


def test_cov_validation():
    with pytest.raises(ValueError):
        DiagonalCov(sigma=np.array([1.0, -0.5, 2.0]))
    with pytest.raises(ValueError):
        ArCov(sigma=1.0, rho=1.0)
    with pytest.raises(ValueError):
        ArCov(sigma=0.0, rho=0.2)
    with pytest.raises(ValueError):
        build_sigma_eps(DiagonalCov(sigma=np.array([1.0, 2.0])), 3)


def test_degenerate_scale_fails_cholesky():
    cov = DiagonalCov(sigma=np.array([1e-200, 1.0, 1.0]))
    with pytest.raises(ValueError):
        build_sigma_eps(cov, 3)


# ---------------------------------------------------------------------------
# parameters and deflation
# ---------------------------------------------------------------------------

def test_params_validation_and_mu():
    good = base_params()
    np.testing.assert_allclose(good.mu, good.psi0 / (1.0 - good.psi1), atol=1e-14)
    with pytest.raises(ValueError):
        SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.array([0.5, 1.0, 0.5]),
                  sigma_eta=np.ones(3), cov=DiagonalCov(sigma=np.ones(4)))
    with pytest.raises(ValueError):
        SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.zeros(3),
                  sigma_eta=np.array([1.0, 0.0, 1.0]), cov=DiagonalCov(sigma=np.ones(4)))


def test_stationary_init():
    params = base_params(seed=31)
    a0, p0 = params.stationary_init()
    np.testing.assert_array_equal(a0, np.zeros(3))
    np.testing.assert_allclose(
        np.diag(p0), params.sigma_eta ** 2 / (1.0 - params.psi1 ** 2), atol=1e-14)


def test_deflate_zero_shift_is_identity():
    grid = MaturityGrid(tenors=(1, 6, 24, 120))
    lam_mat = loading_matrix(grid).matrix
    params = SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.full(3, 0.5),
                       sigma_eta=np.ones(3), cov=DiagonalCov(sigma=np.ones(4)))
    panel = make_panel(np.arange(12.0).reshape(3, 4) + 1.0, grid=grid)
    z, mask = deflate(panel, None, params, lam_mat)
    np.testing.assert_array_equal(z, panel.values)
    np.testing.assert_array_equal(mask, panel.mask)


def test_deflate_exact_cancellation():
    rng = np.random.default_rng(32)
    grid = MaturityGrid(tenors=(1, 6, 24, 120))
    lam_mat = loading_matrix(grid).matrix
    params = random_params(rng, 4, 1, q=2)
    u = rng.normal(size=(5, 2))
    vals = np.tile(lam_mat @ params.mu, (5, 1)) + u @ params.ref_loadings.T
    z, _ = deflate(make_panel(vals, grid=grid), u, params, lam_mat)
    np.testing.assert_allclose(z, 0.0, atol=1e-12)


def test_deflate_matches_elementwise_oracle():
    rng = np.random.default_rng(33)
    grid = MaturityGrid(tenors=(1, 6, 24, 120))
    lam_mat = loading_matrix(grid).matrix
    params = random_params(rng, 4, 2, q=3)
    u = rng.normal(size=(6, 3))
    vals = rng.normal(size=(6, 4))
    z, _ = deflate(make_panel(vals, grid=grid), u, params, lam_mat)
    shift = lam_mat @ params.mu
    for t in range(6):
        for i in range(4):
            expect = vals[t, i] - shift[i] - params.ref_loadings[i] @ u[t]
            assert z[t, i] == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# prediction and update steps
# ---------------------------------------------------------------------------

def test_predict_memoryless():
    params = SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.zeros(3),
                       sigma_eta=np.array([1.0, 2.0, 0.5]),
                       cov=DiagonalCov(sigma=np.ones(4)))
    a, p = kf_predict(np.array([5.0, -3.0, 2.0]), np.eye(3), params)
    np.testing.assert_array_equal(a, np.zeros(3))
    np.testing.assert_array_equal(p, np.diag([1.0, 4.0, 0.25]))


def test_predict_near_random_walk():
    eps = 1e-10
    params = SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.full(3, 1.0 - eps),
                       sigma_eta=np.full(3, 1e-9), cov=DiagonalCov(sigma=np.ones(4)))
    prev = np.array([1.0, -2.0, 0.5])
    a, _ = kf_predict(prev, np.zeros((3, 3)), params)
    np.testing.assert_allclose(a, prev, rtol=1e-9)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=60)
def test_predict_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    params = random_params(rng, 4, 1)
    a_prev = rng.normal(size=3)
    m = rng.normal(size=(3, 3))
    p_prev = m @ m.T
    a, p = kf_predict(a_prev, p_prev, params)
    psi = np.diag(params.psi1)
    np.testing.assert_allclose(a, psi @ a_prev, rtol=0, atol=1e-12)
    np.testing.assert_allclose(p, psi @ p_prev @ psi.T + np.diag(params.sigma_eta ** 2),
                               rtol=0, atol=1e-12)
    np.testing.assert_array_equal(p, p.T)


def test_update_exact_observation_limit():
    params = base_params(n=3)
    z_t = np.array([1.0, -0.5, 2.0])
    a, p = np.zeros(3), np.eye(3)
    a_filt, p_filt, e, _ = kf_update(a, p, z_t, np.arange(3), np.eye(3), 1e-14 * np.eye(3))
    np.testing.assert_allclose(a_filt, z_t, rtol=0, atol=1e-9)
    np.testing.assert_allclose(p_filt, 0.0, atol=1e-9)
    np.testing.assert_array_equal(e, z_t)


def test_update_uninformative_observation():
    a, p = np.array([0.3, -0.2, 0.1]), np.eye(3)
    z_t = np.array([5.0, 5.0, 5.0])
    a_filt, p_filt, _, _ = kf_update(a, p, z_t, np.arange(3), np.eye(3), 1e12 * np.eye(3))
    np.testing.assert_allclose(a_filt, a, rtol=0, atol=1e-9)
    np.testing.assert_allclose(p_filt, p, rtol=0, atol=1e-9)


def test_update_empty_rows_skips():
    a, p = np.array([0.3, -0.2, 0.1]), np.diag([1.0, 2.0, 3.0])
    a_filt, p_filt, e, big_l = kf_update(a, p, np.empty(0), np.empty(0, dtype=int),
                                         np.ones((4, 3)), np.eye(4))
    np.testing.assert_array_equal(a_filt, a)
    np.testing.assert_array_equal(p_filt, p)
    assert e.size == 0 and big_l.size == 0


def test_update_matches_joint_gaussian_conditioning():
    rng = np.random.default_rng(34)
    for _ in range(25):
        lam_mat = rng.normal(size=(4, 3))
        m = rng.normal(size=(3, 3))
        p_pred = m @ m.T + 0.1 * np.eye(3)
        a_pred = rng.normal(size=3)
        sigma = build_sigma_eps(random_cov(rng, int(rng.integers(1, 4)), 4), 4)
        z_t = rng.normal(size=4)
        a_filt, p_filt, e, big_l = kf_update(a_pred, p_pred, z_t, np.arange(4), lam_mat, sigma)
        # condition the joint Gaussian (X, Z) on Z = z_t
        s = lam_mat @ p_pred @ lam_mat.T + sigma
        gain = p_pred @ lam_mat.T @ np.linalg.inv(s)
        np.testing.assert_allclose(a_filt, a_pred + gain @ (z_t - lam_mat @ a_pred),
                                   rtol=0, atol=1e-8)
        np.testing.assert_allclose(p_filt, p_pred - gain @ lam_mat @ p_pred,
                                   rtol=0, atol=1e-8)
        np.testing.assert_allclose(e, z_t - lam_mat @ a_pred, rtol=0, atol=1e-10)
        np.testing.assert_allclose(big_l, s, rtol=0, atol=1e-10)


def test_update_rejects_duplicate_rows():
    with pytest.raises(ValueError):
        kf_update(np.zeros(3), np.eye(3), np.zeros(2), np.array([1, 1]),
                  np.ones((4, 3)), np.eye(4))


# ---------------------------------------------------------------------------
# full filter
# ---------------------------------------------------------------------------

def test_filter_unit_prior_unit_noise_posterior():
    params = SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.zeros(3),
                       sigma_eta=np.ones(3), cov=DiagonalCov(sigma=np.ones(3)))
    z = np.array([[2.0, -4.0, 1.0]])
    out = run_filter(z, np.ones((1, 3)), params, np.eye(3),
                     init=(np.zeros(3), np.zeros((3, 3))))
    np.testing.assert_allclose(out.a_filt[0], 0.5 * z[0], rtol=0, atol=1e-12)


def test_filter_all_missing_follows_prior_recursion():
    params = base_params(seed=35)
    lam_mat = np.ones((4, 3))
    z = np.zeros((5, 4))
    a0 = np.array([1.0, -1.0, 0.5])
    p0 = np.eye(3)
    out = run_filter(z, np.zeros((5, 4)), params, lam_mat, init=(a0, p0))
    assert out.loglik == 0.0
    expect = a0.copy()
    for t in range(5):
        expect = params.psi1 * expect
        np.testing.assert_allclose(out.a_filt[t], expect, rtol=0, atol=1e-12)
        assert out.innovations[t].size == 0


def test_filter_matches_full_joint_oracle():
    rng = np.random.default_rng(36)
    for kind in (1, 2, 3):
        params = random_params(rng, 4, kind)
        lam_mat = rng.normal(size=(4, 3))
        z = rng.normal(size=(5, 4))
        mask = np.ones((5, 4))
        out = run_filter(z, mask, params, lam_mat)
        a_or, p_or, ll_or = joint_gaussian_filter(z, mask, params, lam_mat)
        np.testing.assert_allclose(out.a_filt, a_or, rtol=0, atol=1e-8)
        np.testing.assert_allclose(out.p_filt, p_or, rtol=0, atol=1e-8)
        assert out.loglik == pytest.approx(ll_or, abs=1e-8)


def test_filter_missing_data_consistency_is_bitwise():
    rng = np.random.default_rng(37)
    params = base_params(n=4, kind=2, seed=38)
    lam_mat = rng.normal(size=(4, 3))
    z = rng.normal(size=(6, 4))
    mask = np.ones((6, 4))
    mask[1, 2] = 0.0
    mask[3, :] = 0.0
    mask[4, 0] = 0.0

    out = run_filter(z, mask, params, lam_mat)

    # garbage in masked cells must not leak into any output
    z_garbage = z.copy()
    z_garbage[mask == 0.0] = 9.9e12
    out_g = run_filter(z_garbage, mask, params, lam_mat)
    np.testing.assert_array_equal(out.a_filt, out_g.a_filt)
    np.testing.assert_array_equal(out.p_filt, out_g.p_filt)
    assert out.loglik == out_g.loglik

    # manual predict/update loop with row deletion is bitwise identical
    sigma_eps = build_sigma_eps(params.cov, 4)
    a, p = params.stationary_init()
    ll = 0.0
    for t in range(6):
        a, p = kf_predict(a, p, params)
        np.testing.assert_array_equal(a, out.a_pred[t])
        np.testing.assert_array_equal(p, out.p_pred[t])
        rows = np.flatnonzero(mask[t] == 1.0)
        a, p, e, big_l = kf_update(a, p, z[t, rows], rows, lam_mat, sigma_eps)
        np.testing.assert_array_equal(a, out.a_filt[t])
        np.testing.assert_array_equal(p, out.p_filt[t])
        np.testing.assert_array_equal(e, out.innovations[t])
        np.testing.assert_array_equal(big_l, out.innovation_cov[t])


def test_filter_invertible_loadings_zero_noise_recovers_state():
    rng = np.random.default_rng(39)
    params = base_params(n=3, seed=40)
    lam_mat = rng.normal(size=(3, 3)) + 2.0 * np.eye(3)
    z = rng.normal(size=(4, 3))
    sigma_eps = np.zeros((3, 3))
    a, p = params.stationary_init()
    for t in range(4):
        a, p = kf_predict(a, p, params)
        a, p, _, _ = kf_update(a, p, z[t], np.arange(3), lam_mat, sigma_eps)
        np.testing.assert_allclose(lam_mat @ a, z[t], rtol=0, atol=1e-8)


def test_filter_covariances_stay_psd_over_many_draws():
    rng = np.random.default_rng(41)
    jitter = 1e-10 * np.eye(3)
    for _ in range(10_000):
        kind = int(rng.integers(1, 4))
        params = random_params(rng, 3, kind)
        lam_mat = rng.normal(size=(3, 3))
        t_len = int(rng.integers(1, 6))
        z = rng.normal(size=(t_len, 3))
        mask = (rng.uniform(size=(t_len, 3)) > 0.2).astype(float)
        out = run_filter(z, mask, params, lam_mat)
        np.linalg.cholesky(out.p_filt + jitter)
        np.linalg.cholesky(out.p_pred + jitter)


def test_filter_input_validation():
    params = base_params()
    with pytest.raises(ValueError):
        run_filter(np.zeros((3, 4)), np.ones((3, 3)), params, np.ones((4, 3)))
    with pytest.raises(ValueError):
        run_filter(np.zeros((3, 4)), np.ones((3, 4)), params, np.ones((5, 3)))
    z = np.zeros((3, 4))
    z[0, 0] = np.nan
    with pytest.raises(ValueError):
        run_filter(z, np.ones((3, 4)), params, np.ones((4, 3)))


# ---------------------------------------------------------------------------
# log-likelihood
# ---------------------------------------------------------------------------

def test_loglik_perfect_prediction_unit_covariance():
    params = SsmParams(lam=0.0609, psi0=np.zeros(3), psi1=np.zeros(3),
                       sigma_eta=np.ones(3), cov=DiagonalCov(sigma=np.ones(3)))
    # one date, z equal to the predicted mean of zero, L = I requires
    # P_pred Lam' Lam ... easier to check the two documented scalar cases
    out = run_filter(np.zeros((1, 3)), np.ones((1, 3)), params, np.eye(3),
                     init=(np.zeros(3), np.zeros((3, 3))))
    # e = 0 so only the log-determinant contributes: L = I + I = 2I
    assert out.loglik == pytest.approx(-0.5 * 3 * math.log(2.0), abs=1e-12)


def test_loglik_formula_single_scalar_innovation():
    # recompute from a hand-made output holding one scalar innovation
    from dnsfr.state_space import FilterOutput
    out = FilterOutput(a_pred=np.zeros((1, 3)), p_pred=np.zeros((1, 3, 3)),
                       a_filt=np.zeros((1, 3)), p_filt=np.zeros((1, 3, 3)),
                       innovations=(np.array([1.0]),),
                       innovation_cov=(np.array([[1.0]]),), loglik=np.nan)
    assert log_likelihood(out) == pytest.approx(-0.5, abs=1e-14)


def test_loglik_matches_density_oracle():
    rng = np.random.default_rng(42)
    params = random_params(rng, 4, 3)
    lam_mat = rng.normal(size=(4, 3))
    z = rng.normal(size=(6, 4))
    mask = np.ones((6, 4))
    mask[2, 1] = 0.0
    out = run_filter(z, mask, params, lam_mat)
    total = 0.0
    n_obs = 0
    for e, big_l in zip(out.innovations, out.innovation_cov):
        if e.size:
            total += stats.multivariate_normal.logpdf(e, mean=np.zeros(e.size), cov=big_l)
            n_obs += e.size
    expect = total + 0.5 * n_obs * math.log(2.0 * math.pi)
    assert out.loglik == pytest.approx(expect, abs=1e-10)
    assert log_likelihood(out) == pytest.approx(out.loglik, abs=1e-10)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def test_simulate_panel_deterministic_and_shaped():
    grid = MaturityGrid(tenors=(3, 12, 60, 120, 360))
    params = base_params(n=5, seed=43)
    p1, f1 = simulate_panel(params, grid, 20, seed=7)
    p2, f2 = simulate_panel(params, grid, 20, seed=7)
    np.testing.assert_array_equal(p1.values, p2.values)
    np.testing.assert_array_equal(f1, f2)
    assert p1.dates[0] == "2010-01" and p1.n_dates == 20
    assert p1.is_complete()
    p3, _ = simulate_panel(params, grid, 20, seed=8)
    assert not np.array_equal(p1.values, p3.values)


def test_simulate_panel_reference_term_shifts_values():
    grid = MaturityGrid(tenors=(3, 12, 60, 120, 360))
    rng = np.random.default_rng(44)
    params = random_params(rng, 5, 1, q=2)
    u = rng.normal(size=(15, 2))
    with_u, _ = simulate_panel(params, grid, 15, seed=9, u=u)
    without, _ = simulate_panel(params, grid, 15, seed=9)
    np.testing.assert_allclose(with_u.values - without.values,
                               u @ params.ref_loadings.T, rtol=0, atol=1e-10)
