"""Linear Gaussian state space form of the dynamic factor model.

The three latent factors follow independent AR(1) dynamics.  Observed
curves enter deflated: the factor mean contribution and (when present)
the reference factor regression term are subtracted first, so the
filter runs on Z_t = Y_t - Lam mu - Gamma U_t with zero-mean states.

Measurement noise supports three covariance shapes: independent
per-tenor variances (kind 1), a tridiagonal band with one shared
correlation kept inside its positive-definiteness bound by a sigmoid
transform (kind 2), and a full AR(1)-in-maturity correlation profile
(kind 3).

Missing observations are handled by row deletion: at each date the
measurement equation is restricted to the recorded tenors.  The inner
loops are compiled with numba; the public per-step functions wrap the
same kernels the full filter uses, so single-step and full-panel runs
agree bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit
from scipy.special import expit

from .market_data import YieldPanel

N_FACTORS = 3


# ---------------------------------------------------------------------------
# measurement covariance structures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagonalCov:
    """Kind 1: independent measurement noise, one sigma per tenor."""

    sigma: np.ndarray

    kind = 1

    def __post_init__(self) -> None:
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if sigma.ndim != 1 or not np.all(sigma > 0):
            raise ValueError("sigmas must be a vector of positive reals")
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class BandedCov:
    """Kind 2: per-tenor sigmas plus one adjacent-tenor correlation.

    The correlation is parametrized by an unconstrained ``theta`` and
    mapped into (-B_N, B_N) where B_N keeps the tridiagonal matrix
    positive definite for any sigmas.
    """

    sigma: np.ndarray
    theta: float

    kind = 2

    def __post_init__(self) -> None:
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if sigma.ndim != 1 or not np.all(sigma > 0):
            raise ValueError("sigmas must be a vector of positive reals")
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "theta", float(self.theta))


@dataclass(frozen=True)
class ArCov:
    """Kind 3: one sigma, correlation rho^|i-j| across tenor positions."""

    sigma: float
    rho: float

    kind = 3

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie strictly inside (-1, 1)")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "rho", float(self.rho))


CovStructure = Union[DiagonalCov, BandedCov, ArCov]


def band_rho_bound(n: int) -> float:
    """Positive-definiteness bound B_N for the banded correlation."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 0.5 * math.sqrt(1.0 + math.pi**2 / (1.0 + 4.0 * n * n))


def rho_from_theta(theta: float, n: int) -> float:
    """Map an unconstrained theta into the open interval (-B_N, B_N)."""
    b = band_rho_bound(n)
    return 2.0 * b * float(expit(theta)) - b


def build_sigma_eps(cov: CovStructure, n: int) -> np.ndarray:
    """Assemble and validate the N x N measurement covariance."""
    if isinstance(cov, DiagonalCov):
        if cov.sigma.shape != (n,):
            raise ValueError(f"need {n} sigmas, got {cov.sigma.shape}")
        out = np.diag(cov.sigma**2)
    elif isinstance(cov, BandedCov):
        if cov.sigma.shape != (n,):
            raise ValueError(f"need {n} sigmas, got {cov.sigma.shape}")
        rho = rho_from_theta(cov.theta, n)
        out = np.diag(cov.sigma**2)
        off = rho * cov.sigma[:-1] * cov.sigma[1:]
        idx = np.arange(n - 1)
        out[idx, idx + 1] = off
        out[idx + 1, idx] = off
    elif isinstance(cov, ArCov):
        idx = np.arange(n)
        out = cov.sigma**2 * cov.rho ** np.abs(idx[:, None] - idx[None, :])
    else:
        raise TypeError(f"unknown covariance structure {type(cov)!r}")
    try:
        np.linalg.cholesky(out)
    except np.linalg.LinAlgError as exc:
        raise ValueError("measurement covariance is not positive definite") from exc
    return out


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsmParams:
    """Full parameter set of the state space model.

    ``ref_loadings`` is the N x Q regression coefficient matrix on the
    reference factors; Q = 0 gives the plain dynamic factor model.  The
    decay rate ``lam`` is carried as fixed configuration.
    """

    lam: float
    psi0: np.ndarray
    psi1: np.ndarray
    sigma_eta: np.ndarray
    cov: CovStructure
    ref_loadings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        psi0 = np.asarray(self.psi0, dtype=float).reshape(N_FACTORS)
        psi1 = np.asarray(self.psi1, dtype=float).reshape(N_FACTORS)
        sigma_eta = np.asarray(self.sigma_eta, dtype=float).reshape(N_FACTORS)
        gamma = np.asarray(self.ref_loadings, dtype=float)
        if gamma.ndim != 2:
            raise ValueError("ref_loadings must be a 2-d array (N x Q, Q may be 0)")
        if not self.lam > 0:
            raise ValueError("decay rate must be positive")
        if not np.all(np.abs(psi1) < 1.0):
            raise ValueError("autoregressive coefficients must lie strictly inside (-1, 1)")
        if not np.all(sigma_eta > 0):
            raise ValueError("state innovation sigmas must be positive")
        if not (np.all(np.isfinite(psi0)) and np.all(np.isfinite(gamma))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "psi1", psi1)
        object.__setattr__(self, "sigma_eta", sigma_eta)
        object.__setattr__(self, "ref_loadings", gamma)

    @property
    def mu(self) -> np.ndarray:
        """Stationary factor mean psi0 / (1 - psi1)."""
        return self.psi0 / (1.0 - self.psi1)

    @property
    def n_ref_factors(self) -> int:
        return int(self.ref_loadings.shape[1])

    def stationary_init(self) -> tuple[np.ndarray, np.ndarray]:
        """Deflated-scale initial state: zero mean, stationary variance."""
        var = self.sigma_eta**2 / (1.0 - self.psi1**2)
        return np.zeros(N_FACTORS), np.diag(var)


@dataclass(frozen=True)
class FilterOutput:
    """Everything the forward pass produces.

    ``innovations`` and ``innovation_cov`` hold one entry per date,
    restricted to that date's recorded tenors (zero-length when
    nothing was observed).
    """

    a_pred: np.ndarray
    p_pred: np.ndarray
    a_filt: np.ndarray
    p_filt: np.ndarray
    innovations: tuple[np.ndarray, ...]
    innovation_cov: tuple[np.ndarray, ...]
    loglik: float

    @property
    def n_dates(self) -> int:
        return int(self.a_filt.shape[0])


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _predict_core(a, p, psi1, eta_var):  # pragma: no cover - exercised via wrappers
    m = a.shape[0]
    a_pred = psi1 * a
    p_pred = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            p_pred[i, j] = psi1[i] * p[i, j] * psi1[j]
    for i in range(m):
        p_pred[i, i] += eta_var[i]
    for i in range(m):
        for j in range(i):
            v = 0.5 * (p_pred[i, j] + p_pred[j, i])
            p_pred[i, j] = v
            p_pred[j, i] = v
    return a_pred, p_pred


@njit(cache=True)
def _update_core(a_pred, p_pred, z_obs, rows, lam, sigma):  # pragma: no cover
    m = a_pred.shape[0]
    n = rows.shape[0]
    lam_o = np.empty((n, m))
    big_l = np.empty((n, n))
    for i in range(n):
        ri = rows[i]
        for j in range(m):
            lam_o[i, j] = lam[ri, j]
        for j in range(n):
            big_l[i, j] = sigma[ri, rows[j]]
    pht = p_pred @ lam_o.T
    big_l += lam_o @ pht
    for i in range(n):
        for j in range(i):
            v = 0.5 * (big_l[i, j] + big_l[j, i])
            big_l[i, j] = v
            big_l[j, i] = v
    chol = np.linalg.cholesky(big_l)
    e = z_obs - lam_o @ a_pred
    # u = chol^{-1} e by forward substitution
    u = np.empty(n)
    for i in range(n):
        s = e[i]
        for j in range(i):
            s -= chol[i, j] * u[j]
        u[i] = s / chol[i, i]
    logdet = 0.0
    for i in range(n):
        logdet += np.log(chol[i, i])
    ll = -0.5 * (np.dot(u, u) + 2.0 * logdet)
    # gain K = pht @ L^{-1}: solve L X = pht.T column-block, K = X.T
    x = pht.T.copy()
    for col in range(m):
        for i in range(n):
            s = x[i, col]
            for j in range(i):
                s -= chol[i, j] * x[j, col]
            x[i, col] = s / chol[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, col]
            for j in range(i + 1, n):
                s -= chol[j, i] * x[j, col]
            x[i, col] = s / chol[i, i]
    gain = x.T
    a_filt = a_pred + gain @ e
    p_filt = p_pred - gain @ (lam_o @ p_pred)
    for i in range(m):
        for j in range(i):
            v = 0.5 * (p_filt[i, j] + p_filt[j, i])
            p_filt[i, j] = v
            p_filt[j, i] = v
    return a_filt, p_filt, e, big_l, ll


@njit(cache=True)
def _filter_loop(z, mask, lam, sigma, psi1, eta_var, a0, p0):  # pragma: no cover
    t_len, n = z.shape
    m = a0.shape[0]
    a_pred = np.empty((t_len, m))
    p_pred = np.empty((t_len, m, m))
    a_filt = np.empty((t_len, m))
    p_filt = np.empty((t_len, m, m))
    e_pad = np.zeros((t_len, n))
    l_pad = np.zeros((t_len, n, n))
    n_obs = np.zeros(t_len, np.int64)
    ll = 0.0
    a = a0.copy()
    p = p0.copy()
    for t in range(t_len):
        a, p = _predict_core(a, p, psi1, eta_var)
        a_pred[t] = a
        p_pred[t] = p
        cnt = 0
        for i in range(n):
            if mask[t, i] != 0:
                cnt += 1
        if cnt > 0:
            rows = np.empty(cnt, np.int64)
            z_obs = np.empty(cnt)
            k = 0
            for i in range(n):
                if mask[t, i] != 0:
                    rows[k] = i
                    z_obs[k] = z[t, i]
                    k += 1
            a, p, e, big_l, ll_t = _update_core(a, p, z_obs, rows, lam, sigma)
            ll += ll_t
            e_pad[t, :cnt] = e
            l_pad[t, :cnt, :cnt] = big_l
            n_obs[t] = cnt
        a_filt[t] = a
        p_filt[t] = p
    return a_pred, p_pred, a_filt, p_filt, e_pad, l_pad, n_obs, ll


def _c64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def deflate(
    panel: YieldPanel,
    u: np.ndarray | None,
    params: SsmParams,
    loadings: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the mean curve and reference regression term from a panel.

    Returns (z, mask) where z = Y - Lam mu - U Gamma'.  The regression
    term is skipped when ``u`` is None (plain model).  Missing cells
    keep their mask.
    """
    lam_mat = np.asarray(getattr(loadings, "matrix", loadings), dtype=float)
    z = panel.values - lam_mat @ params.mu
    if u is not None:
        u_arr = np.asarray(getattr(u, "values", u), dtype=float)
        if params.n_ref_factors != u_arr.shape[1]:
            raise ValueError(
                f"factor panel has {u_arr.shape[1]} components, "
                f"ref_loadings expects {params.n_ref_factors}"
            )
        if u_arr.shape[0] != panel.n_dates:
            raise ValueError("factor panel length does not match yield panel")
        z = z - u_arr @ params.ref_loadings.T
    elif params.n_ref_factors != 0:
        raise ValueError("params carry reference loadings but no factor panel was given")
    return z, panel.mask.copy()


def kf_predict(a_prev: np.ndarray, p_prev: np.ndarray, params: SsmParams) -> tuple[np.ndarray, np.ndarray]:
    """One-step state prediction under the diagonal AR(1) transition."""
    a_prev = _c64(a_prev).reshape(N_FACTORS)
    p_prev = _c64(p_prev).reshape(N_FACTORS, N_FACTORS)
    return _predict_core(a_prev, p_prev, _c64(params.psi1), _c64(params.sigma_eta**2))


def kf_update(
    a_pred: np.ndarray,
    p_pred: np.ndarray,
    z_t: np.ndarray,
    obs_rows: np.ndarray,
    loadings: np.ndarray,
    sigma_eps: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Measurement update restricted to the recorded tenor rows.

    ``z_t`` holds the observed (deflated) values in the order given by
    ``obs_rows``.  Empty ``obs_rows`` skips the update and returns the
    prediction with zero-length innovation arrays.
    """
    a_pred = _c64(a_pred).reshape(N_FACTORS)
    p_pred = _c64(p_pred).reshape(N_FACTORS, N_FACTORS)
    lam_mat = _c64(getattr(loadings, "matrix", loadings))
    sigma_eps = _c64(sigma_eps)
    rows = np.ascontiguousarray(obs_rows, dtype=np.int64)
    z_t = _c64(z_t).reshape(rows.shape[0])
    if rows.size == 0:
        return a_pred.copy(), p_pred.copy(), np.empty(0), np.empty((0, 0))
    if rows.size != np.unique(rows).size or rows.min() < 0 or rows.max() >= lam_mat.shape[0]:
        raise ValueError("obs_rows must be distinct valid row indices")
    try:
        a_filt, p_filt, e, big_l, _ = _update_core(a_pred, p_pred, z_t, rows, lam_mat, sigma_eps)
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is not positive definite") from exc
    return a_filt, p_filt, e, big_l


def run_filter(
    z: np.ndarray,
    mask: np.ndarray,
    params: SsmParams,
    loadings: np.ndarray,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> FilterOutput:
    """Forward Kalman pass over a deflated panel.

    ``init`` overrides the stationary initial state (a_0, P_0).  The
    log-likelihood accumulates -(1/2) (e' L^{-1} e + log det L) over the
    dates with at least one recorded tenor.
    """
    z = _c64(z)
    if z.ndim != 2:
        raise ValueError("z must be a T x N matrix")
    mask_arr = np.ascontiguousarray(mask, dtype=np.uint8)
    if mask_arr.shape != z.shape:
        raise ValueError("mask shape must match z")
    lam_mat = _c64(getattr(loadings, "matrix", loadings))
    if lam_mat.shape != (z.shape[1], N_FACTORS):
        raise ValueError(f"loading matrix must be {z.shape[1]}x{N_FACTORS}, got {lam_mat.shape}")
    sigma_eps = build_sigma_eps(params.cov, z.shape[1])
    if init is None:
        a0, p0 = params.stationary_init()
    else:
        a0, p0 = init
    a0 = _c64(a0).reshape(N_FACTORS)
    p0 = _c64(p0).reshape(N_FACTORS, N_FACTORS)

    z_clean = np.where(mask_arr == 1, z, 0.0)
    if not np.all(np.isfinite(z_clean)):
        raise ValueError("observed entries of z must be finite")
    try:
        a_pred, p_pred, a_filt, p_filt, e_pad, l_pad, n_obs, ll = _filter_loop(
            z_clean, mask_arr, lam_mat, _c64(sigma_eps),
            _c64(params.psi1), _c64(params.sigma_eta**2), a0, p0,
        )
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is not positive definite") from exc
    innovations = tuple(e_pad[t, : n_obs[t]].copy() for t in range(z.shape[0]))
    innovation_cov = tuple(l_pad[t, : n_obs[t], : n_obs[t]].copy() for t in range(z.shape[0]))
    return FilterOutput(
        a_pred=a_pred,
        p_pred=p_pred,
        a_filt=a_filt,
        p_filt=p_filt,
        innovations=innovations,
        innovation_cov=innovation_cov,
        loglik=float(ll),
    )


def log_likelihood(output: FilterOutput) -> float:
    """Recompute the Gaussian prediction-error log-likelihood from stored innovations."""
    ll = 0.0
    for e, big_l in zip(output.innovations, output.innovation_cov):
        if e.size == 0:
            continue
        chol = np.linalg.cholesky(big_l)
        u = np.linalg.solve(chol, e)
        ll += -0.5 * (u @ u + 2.0 * np.sum(np.log(np.diag(chol))))
    return float(ll)


def simulate_panel(
    params: SsmParams,
    grid,
    t_len: int,
    seed: int = 0,
    start: str = "2010-01",
    u: np.ndarray | None = None,
) -> tuple[YieldPanel, np.ndarray]:
    """Draw a complete synthetic panel from the model (for experiments and tests).

    Factors start at their stationary distribution and follow the AR(1)
    transition; measurement noise uses the params' covariance structure.
    Returns the panel and the simulated factor path.
    """
    from .market_data import index_to_month, month_to_index
    from .nelson_siegel import loading_matrix

    rng = np.random.default_rng(seed)
    lam_mat = loading_matrix(grid, params.lam).matrix
    n = lam_mat.shape[0]
    sigma_eps = build_sigma_eps(params.cov, n)
    eps_chol = np.linalg.cholesky(sigma_eps)
    mu = params.mu
    stat_sd = params.sigma_eta / np.sqrt(1.0 - params.psi1**2)

    factors = np.empty((t_len, N_FACTORS))
    f = mu + stat_sd * rng.standard_normal(N_FACTORS)
    for t in range(t_len):
        f = params.psi0 + params.psi1 * f + params.sigma_eta * rng.standard_normal(N_FACTORS)
        factors[t] = f
    values = factors @ lam_mat.T + rng.standard_normal((t_len, n)) @ eps_chol.T
    if u is not None and params.n_ref_factors:
        values = values + np.asarray(u, dtype=float) @ params.ref_loadings.T
    base = month_to_index(start)
    dates = tuple(index_to_month(base + t) for t in range(t_len))
    panel = YieldPanel(dates=dates, values=values, mask=np.ones((t_len, n), dtype=np.uint8), grid=grid)
    return panel, factors
