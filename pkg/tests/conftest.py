"""Shared test helpers: panel builders, random model parameters, and a
brute-force joint-Gaussian oracle for the Kalman filter."""

import numpy as np
from hypothesis import HealthCheck, settings

from dnsfr.market_data import MaturityGrid, YieldPanel, index_to_month, month_to_index
from dnsfr.state_space import ArCov, BandedCov, DiagonalCov, SsmParams, build_sigma_eps

settings.register_profile(
    "repo",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def make_dates(start: str, t_len: int) -> tuple[str, ...]:
    base = month_to_index(start)
    return tuple(index_to_month(base + k) for k in range(t_len))


def make_panel(values, grid=None, mask=None, start="2010-01") -> YieldPanel:
    values = np.asarray(values, dtype=float)
    if grid is None:
        grid = MaturityGrid(tenors=tuple(range(1, values.shape[1] + 1)))
    if mask is None:
        mask = np.ones_like(values)
    return YieldPanel(dates=make_dates(start, values.shape[0]), values=values,
                      mask=np.asarray(mask, dtype=float), grid=grid)


def random_cov(rng: np.random.Generator, kind: int, n: int):
    sigma = rng.uniform(0.2, 1.5, size=n)
    if kind == 1:
        return DiagonalCov(sigma=sigma)
    if kind == 2:
        return BandedCov(sigma=sigma, theta=rng.normal(scale=1.5))
    return ArCov(sigma=float(rng.uniform(0.2, 1.5)), rho=float(rng.uniform(-0.8, 0.8)))


def random_params(rng: np.random.Generator, n: int, kind: int, q: int = 0,
                  lam: float = 0.0609) -> SsmParams:
    gamma = rng.normal(scale=0.3, size=(n, q)) if q > 0 else np.zeros((n, 0))
    return SsmParams(
        lam=lam,
        psi0=rng.normal(scale=0.3, size=3),
        psi1=rng.uniform(-0.9, 0.9, size=3),
        sigma_eta=rng.uniform(0.2, 1.0, size=3),
        cov=random_cov(rng, kind, n),
        ref_loadings=gamma,
    )


def joint_gaussian_filter(z, mask, params, loadings, init=None):
    """Filtered moments and log-likelihood by brute-force Gaussian conditioning.

    Builds the exact joint distribution of the stacked states and the
    observed measurement entries, then conditions the time-t state on
    all observations up to t.  Only viable for small T and N; used as
    the independent oracle for the sequential filter.
    """
    z = np.asarray(z, dtype=float)
    mask = np.asarray(mask, dtype=float)
    lam_mat = np.asarray(getattr(loadings, "matrix", loadings), dtype=float)
    t_len, n = z.shape
    psi1 = np.diag(params.psi1)
    q_eta = np.diag(params.sigma_eta ** 2)
    if init is None:
        a0 = np.zeros(3)
        p0 = np.diag(params.sigma_eta ** 2 / (1.0 - params.psi1 ** 2))
    else:
        a0, p0 = np.asarray(init[0], dtype=float), np.asarray(init[1], dtype=float)
    sigma_eps = build_sigma_eps(params.cov, n)

    # Stacked state mean and covariance: X_t = psi1 X_{t-1} + eta_t with
    # X_1 ~ N(psi1 a0, psi1 P0 psi1' + Q).
    mean = np.zeros((t_len, 3))
    cov = np.zeros((t_len, t_len, 3, 3))
    mean[0] = psi1 @ a0
    cov[0, 0] = psi1 @ p0 @ psi1.T + q_eta
    for t in range(1, t_len):
        mean[t] = psi1 @ mean[t - 1]
        cov[t, t] = psi1 @ cov[t - 1, t - 1] @ psi1.T + q_eta
    for s in range(t_len):
        for t in range(s + 1, t_len):
            cov[s, t] = cov[s, t - 1] @ psi1.T
            cov[t, s] = cov[s, t].T

    # Selection of observed entries in time order.
    obs = [(t, i) for t in range(t_len) for i in range(n) if mask[t, i] == 1.0]
    m = len(obs)
    h = np.zeros((m, t_len * 3))
    r = np.zeros((m, m))
    z_vec = np.empty(m)
    for row, (t, i) in enumerate(obs):
        h[row, 3 * t:3 * t + 3] = lam_mat[i]
        z_vec[row] = z[t, i]
        for col, (s, j) in enumerate(obs):
            if s == t:
                r[row, col] = sigma_eps[i, j]
    full_cov = cov.transpose(0, 2, 1, 3).reshape(t_len * 3, t_len * 3)
    full_mean = mean.reshape(-1)
    s_zz = h @ full_cov @ h.T + r
    z_mean = h @ full_mean

    a_filt = np.empty((t_len, 3))
    p_filt = np.empty((t_len, 3, 3))
    for t in range(t_len):
        rows = [row for row, (s, _) in enumerate(obs) if s <= t]
        if not rows:
            a_filt[t] = mean[t]
            p_filt[t] = cov[t, t]
            continue
        s_aa = s_zz[np.ix_(rows, rows)]
        cross = np.hstack([cov[t, s] for s in range(t_len)]) @ h[rows].T
        gain = np.linalg.solve(s_aa, cross.T).T
        a_filt[t] = mean[t] + gain @ (z_vec[rows] - z_mean[rows])
        p_filt[t] = cov[t, t] - gain @ cross.T

    if m:
        resid = z_vec - z_mean
        chol = np.linalg.cholesky(s_zz)
        half = np.linalg.solve(chol, resid)
        loglik = -0.5 * (half @ half) - np.log(np.diag(chol)).sum()
    else:
        loglik = 0.0
    return a_filt, p_filt, float(loglik)
