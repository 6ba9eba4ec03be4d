"""Maximum likelihood estimation of the state space model.

Parameters are optimized in unconstrained coordinates: autoregressive
coefficients through tanh, scale parameters through log, the banded
correlation through its sigmoid map, means and regression loadings
untransformed.  The packing functions are exact inverses of each other
(bit-level) for any parameter set produced by unpacking, which keeps
warm restarts and nested-model comparisons reproducible.

The search itself is a derivative-free Nelder-Mead polish around a
moment-based starting point: cross-sectional factor fits give the
factor means and measurement scales, per-factor AR(1) regressions give
the transition coefficients, and the reference regression loadings
start from an OLS fit of the cross-sectional residuals.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .market_data import YieldPanel, fit_cross_section
from .nelson_siegel import DEFAULT_DECAY, loading_matrix
from .kpca import FactorPanel
from .state_space import (
    ArCov,
    BandedCov,
    CovStructure,
    DiagonalCov,
    FilterOutput,
    N_FACTORS,
    SsmParams,
    _filter_loop,
    build_sigma_eps,
    run_filter,
)

logger = logging.getLogger(__name__)

MAX_EVALS_DEFAULT = 50_000
XATOL_DEFAULT = 1e-8
N_STARTS_DEFAULT = 5
_SIGMA_FLOOR = 1e-4


def _exact_preimage(y: float, forward, x0: float, max_steps: int = 64) -> float:
    """Walk ``x0`` by ulps until ``forward(x)`` reproduces ``y`` bitwise.

    ``forward`` must be monotone increasing.  Falls back to ``x0`` when
    ``y`` has no representable preimage within the step budget.
    """
    x = x0
    fx = forward(x)
    if fx == y:
        return x
    for _ in range(max_steps):
        x = math.nextafter(x, math.inf if fx < y else -math.inf)
        fx = forward(x)
        if fx == y:
            return x
    return x0


def _n_cov_params(cov_kind: int, n: int) -> int:
    if cov_kind == 1:
        return n
    if cov_kind == 2:
        return n + 1
    if cov_kind == 3:
        return 2
    raise ValueError(f"covariance kind must be 1, 2 or 3, got {cov_kind}")


@dataclass(frozen=True)
class ParamPacker:
    """Maps between SsmParams and flat unconstrained vectors.

    Layout: psi0 (3), atanh psi1 (3), log sigma_eta (3), covariance
    block (kind 1: N log sigmas; kind 2: N log sigmas then theta;
    kind 3: log sigma then atanh rho), then the N x Q regression
    loadings row-major.
    """

    n_tenors: int
    n_ref_factors: int
    cov_kind: int
    lam: float = DEFAULT_DECAY

    @property
    def size(self) -> int:
        return 3 * N_FACTORS + _n_cov_params(self.cov_kind, self.n_tenors) \
            + self.n_tenors * self.n_ref_factors

    def pack(self, params: SsmParams) -> np.ndarray:
        if params.cov.kind != self.cov_kind:
            raise ValueError(f"params have covariance kind {params.cov.kind}, packer expects {self.cov_kind}")
        if params.ref_loadings.shape != (self.n_tenors, self.n_ref_factors) and self.n_ref_factors > 0:
            raise ValueError("ref_loadings shape does not match packer")
        out = np.empty(self.size)
        out[0:3] = params.psi0
        for i in range(3):
            out[3 + i] = _exact_preimage(float(params.psi1[i]), math.tanh, math.atanh(float(params.psi1[i])))
            out[6 + i] = _exact_preimage(float(params.sigma_eta[i]), math.exp, math.log(float(params.sigma_eta[i])))
        pos = 9
        cov = params.cov
        if isinstance(cov, DiagonalCov):
            for i in range(self.n_tenors):
                out[pos + i] = _exact_preimage(float(cov.sigma[i]), math.exp, math.log(float(cov.sigma[i])))
            pos += self.n_tenors
        elif isinstance(cov, BandedCov):
            for i in range(self.n_tenors):
                out[pos + i] = _exact_preimage(float(cov.sigma[i]), math.exp, math.log(float(cov.sigma[i])))
            out[pos + self.n_tenors] = cov.theta
            pos += self.n_tenors + 1
        elif isinstance(cov, ArCov):
            out[pos] = _exact_preimage(cov.sigma, math.exp, math.log(cov.sigma))
            out[pos + 1] = _exact_preimage(cov.rho, math.tanh, math.atanh(cov.rho))
            pos += 2
        else:
            raise TypeError(f"unknown covariance structure {type(cov)!r}")
        if self.n_ref_factors:
            out[pos:] = params.ref_loadings.reshape(-1)
        return out

    def unpack(self, vector: np.ndarray) -> SsmParams:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.size,):
            raise ValueError(f"vector must have length {self.size}, got {vector.shape}")
        psi0 = vector[0:3].copy()
        psi1 = np.array([math.tanh(v) for v in vector[3:6]])
        sigma_eta = np.array([math.exp(v) for v in vector[6:9]])
        pos = 9
        n = self.n_tenors
        cov: CovStructure
        if self.cov_kind == 1:
            cov = DiagonalCov(sigma=np.array([math.exp(v) for v in vector[pos : pos + n]]))
            pos += n
        elif self.cov_kind == 2:
            cov = BandedCov(
                sigma=np.array([math.exp(v) for v in vector[pos : pos + n]]),
                theta=float(vector[pos + n]),
            )
            pos += n + 1
        else:
            cov = ArCov(sigma=math.exp(vector[pos]), rho=math.tanh(vector[pos + 1]))
            pos += 2
        gamma = vector[pos:].reshape(n, self.n_ref_factors) if self.n_ref_factors else np.zeros((n, 0))
        return SsmParams(
            lam=self.lam, psi0=psi0, psi1=psi1, sigma_eta=sigma_eta,
            cov=cov, ref_loadings=gamma,
        )


@dataclass(frozen=True)
class FitResult:
    """Optimizer output: best parameters plus the filter run at the optimum."""

    params: SsmParams
    loglik: float
    iterations: int
    converged: bool
    filter: FilterOutput = field(repr=False)
    history: np.ndarray | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        cov = self.params.cov
        cov_dict: dict = {"kind": cov.kind}
        if isinstance(cov, (DiagonalCov, BandedCov)):
            cov_dict["sigma"] = cov.sigma.tolist()
        if isinstance(cov, BandedCov):
            cov_dict["theta"] = cov.theta
        if isinstance(cov, ArCov):
            cov_dict.update(sigma=cov.sigma, rho=cov.rho)
        return {
            "lam": self.params.lam,
            "psi0": self.params.psi0.tolist(),
            "psi1": self.params.psi1.tolist(),
            "sigma_eta": self.params.sigma_eta.tolist(),
            "cov": cov_dict,
            "ref_loadings": self.params.ref_loadings.tolist(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "last_state_mean": self.filter.a_filt[-1].tolist(),
            "last_state_cov": self.filter.p_filt[-1].tolist(),
        }

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)


def _static_factor_pass(panel: YieldPanel, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-date cross-sectional factor fits and residuals (nan where missing)."""
    tenors = panel.grid.as_array()
    factors = np.empty((panel.n_dates, N_FACTORS))
    resid = np.full_like(panel.values, np.nan)
    for t in range(panel.n_dates):
        have = panel.mask[t] == 1
        if have.sum() < 3:
            raise ValueError(f"date {panel.dates[t]} has fewer than 3 recorded tenors")
        f, r = fit_cross_section(panel.values[t, have], tenors[have], lam)
        factors[t] = f
        resid[t, have] = r
    return factors, resid


def default_start(
    panel: YieldPanel,
    u: np.ndarray | None,
    cov_kind: int,
    q: int,
    lam: float = DEFAULT_DECAY,
) -> SsmParams:
    """Moment-based starting point for the likelihood search."""
    factors, resid = _static_factor_pass(panel, lam)
    n = len(panel.grid)

    gamma = np.zeros((n, q))
    if q > 0:
        if u is None:
            raise ValueError("q > 0 needs a reference factor panel")
        u_arr = np.asarray(getattr(u, "values", u), dtype=float)
        for i in range(n):
            have = np.isfinite(resid[:, i])
            if have.sum() > q:
                sol, _, rank, _ = np.linalg.lstsq(u_arr[have], resid[have, i], rcond=None)
                if rank == q:
                    gamma[i] = sol
        resid = resid - u_arr @ gamma.T

    psi1 = np.empty(N_FACTORS)
    psi0 = np.empty(N_FACTORS)
    sigma_eta = np.empty(N_FACTORS)
    for j in range(N_FACTORS):
        prev, curr = factors[:-1, j], factors[1:, j]
        var = np.var(prev)
        phi = float(np.cov(prev, curr)[0, 1] / var) if var > 0 else 0.0
        phi = float(np.clip(phi, -0.95, 0.95))
        psi1[j] = phi
        psi0[j] = float(np.mean(curr) - phi * np.mean(prev))
        ar_resid = curr - psi0[j] - phi * prev
        sigma_eta[j] = max(float(np.std(ar_resid)), _SIGMA_FLOOR)

    scales = np.empty(n)
    for i in range(n):
        have = np.isfinite(resid[:, i])
        scales[i] = max(float(np.sqrt(np.mean(resid[have, i] ** 2))), _SIGMA_FLOOR) if have.any() else _SIGMA_FLOOR
    cov: CovStructure
    if cov_kind == 1:
        cov = DiagonalCov(sigma=scales)
    elif cov_kind == 2:
        cov = BandedCov(sigma=scales, theta=0.0)
    elif cov_kind == 3:
        cov = ArCov(sigma=max(float(np.sqrt(np.mean(scales**2))), _SIGMA_FLOOR), rho=0.0)
    else:
        raise ValueError(f"covariance kind must be 1, 2 or 3, got {cov_kind}")
    return SsmParams(lam=lam, psi0=psi0, psi1=psi1, sigma_eta=sigma_eta,
                     cov=cov, ref_loadings=gamma)


def _neg_loglik_fn(panel: YieldPanel, u: np.ndarray | None, packer: ParamPacker):
    """Build a fast negative log-likelihood over packed vectors."""
    lam_mat = np.ascontiguousarray(loading_matrix(panel.grid, packer.lam).matrix)
    mask = np.ascontiguousarray(panel.mask, dtype=np.uint8)
    y = panel.values
    y_clean = np.ascontiguousarray(np.where(mask == 1, y, 0.0))
    u_arr = None
    if u is not None:
        u_arr = np.asarray(getattr(u, "values", u), dtype=float)

    def neg_loglik(vector: np.ndarray) -> float:
        try:
            params = packer.unpack(vector)
            sigma_eps = build_sigma_eps(params.cov, len(panel.grid))
            z = y_clean - lam_mat @ params.mu
            if u_arr is not None and params.n_ref_factors:
                z = z - u_arr @ params.ref_loadings.T
            a0, p0 = params.stationary_init()
            *_, ll = _filter_loop(
                np.ascontiguousarray(z), mask, lam_mat,
                np.ascontiguousarray(sigma_eps),
                np.ascontiguousarray(params.psi1),
                np.ascontiguousarray(params.sigma_eta**2),
                a0, np.ascontiguousarray(p0),
            )
        except (ValueError, OverflowError, np.linalg.LinAlgError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    return neg_loglik


def fit_mle(
    panel: YieldPanel,
    u: np.ndarray | FactorPanel | None,
    cov_kind: int,
    q: int,
    init: SsmParams | np.ndarray | None = None,
    *,
    lam: float = DEFAULT_DECAY,
    n_starts: int = N_STARTS_DEFAULT,
    max_evals: int = MAX_EVALS_DEFAULT,
    xatol: float = XATOL_DEFAULT,
    start_seed: int = 0,
    record_history: bool = False,
) -> FitResult:
    """Maximize the filter log-likelihood with seeded multi-start Nelder-Mead.

    Runs ``n_starts`` searches (the base start plus seeded jitters of
    it) and keeps the best.  ``init`` overrides the moment-based base
    start; each search stops when the simplex diameter drops below
    ``xatol`` or after ``max_evals`` objective evaluations.  The final
    log-likelihood never falls below the best start's value.
    """
    if u is not None and q == 0:
        raise ValueError("factor panel given but q=0")
    n = len(panel.grid)
    packer = ParamPacker(n_tenors=n, n_ref_factors=q, cov_kind=cov_kind, lam=lam)
    if init is None:
        base = packer.pack(default_start(panel, u, cov_kind, q, lam))
    elif isinstance(init, SsmParams):
        base = packer.pack(init)
    else:
        base = np.asarray(init, dtype=float)
        if base.shape != (packer.size,):
            raise ValueError(f"init vector must have length {packer.size}")

    neg_loglik = _neg_loglik_fn(panel, u, packer)
    if not np.isfinite(neg_loglik(base)):
        raise ValueError("starting parameters give a non-finite log-likelihood")

    rng = np.random.default_rng(start_seed)
    starts = [base]
    for _ in range(max(n_starts, 1) - 1):
        starts.append(base + rng.normal(scale=0.05, size=base.size))

    history: list[float] = []
    if record_history:
        inner = neg_loglik

        def neg_loglik(vector: np.ndarray) -> float:  # noqa: F811 - tracked variant
            value = inner(vector)
            history.append(min(value, history[-1]) if history else value)
            return value

    best = None
    for k, x0 in enumerate(starts):
        if not np.isfinite(neg_loglik(x0)):
            logger.debug("start %d is non-finite, skipped", k)
            continue
        res = minimize(
            neg_loglik, x0, method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": xatol, "fatol": np.inf, "adaptive": True},
        )
        logger.debug("start %d: loglik=%.6f nit=%d converged=%s", k, -res.fun, res.nit, res.success)
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise ValueError("no start produced a finite log-likelihood")

    params = packer.unpack(best.x)
    lam_mat = loading_matrix(panel.grid, lam).matrix
    u_arr = None if u is None else np.asarray(getattr(u, "values", u), dtype=float)
    from .state_space import deflate

    z, mask = deflate(panel, u_arr, params, lam_mat)
    filt = run_filter(z, mask, params, lam_mat)
    return FitResult(
        params=params,
        loglik=filt.loglik,
        iterations=int(best.nit),
        converged=bool(best.success),
        filter=filt,
        history=-np.asarray(history) if record_history else None,
    )


def fitted_yields(
    fit: FitResult,
    u: np.ndarray | FactorPanel | None,
    loadings: np.ndarray,
    states: str = "filtered",
) -> np.ndarray:
    """In-sample fitted curves Lam (a_t + mu) + Gamma U_t.

    ``states`` selects filtered (default) or one-step-ahead predicted
    state means for reporting.
    """
    if states == "filtered":
        a = fit.filter.a_filt
    elif states == "predicted":
        a = fit.filter.a_pred
    else:
        raise ValueError(f"states must be 'filtered' or 'predicted', got {states!r}")
    lam_mat = np.asarray(getattr(loadings, "matrix", loadings), dtype=float)
    out = (a + fit.params.mu) @ lam_mat.T
    if u is not None and fit.params.n_ref_factors:
        u_arr = np.asarray(getattr(u, "values", u), dtype=float)
        out = out + u_arr @ fit.params.ref_loadings.T
    return out


@dataclass(frozen=True)
class RmseTable:
    """Per-tenor root mean squared errors plus their unweighted mean."""

    tenors: tuple[float, ...]
    rmse: np.ndarray
    mean: float

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("tenor_months,rmse\n")
            for tenor, value in zip(self.tenors, self.rmse):
                label = str(int(tenor)) if float(tenor).is_integer() else repr(float(tenor))
                fh.write(f"{label},{float(value)!r}\n")
            fh.write(f"mean,{float(self.mean)!r}\n")


def rmse_table(actual: YieldPanel, fitted: np.ndarray) -> RmseTable:
    """Observation-masked RMSE per tenor with an unweighted cross-tenor mean."""
    fitted = np.asarray(fitted, dtype=float)
    if fitted.shape != actual.values.shape:
        raise ValueError(f"fitted must be {actual.values.shape}, got {fitted.shape}")
    n = len(actual.grid)
    rmse = np.empty(n)
    for i in range(n):
        have = actual.mask[:, i] == 1
        if not have.any():
            raise ValueError(f"tenor {actual.grid.tenors[i]} has no observed entries")
        err = actual.values[have, i] - fitted[have, i]
        rmse[i] = float(np.sqrt(np.mean(err**2)))
    return RmseTable(tenors=actual.grid.tenors, rmse=rmse, mean=float(np.mean(rmse)))


@dataclass(frozen=True)
class WindowSpec:
    """Moving estimation window setup: length and forecast span in months."""

    window: int = 60
    horizon: int = 12
    q: int = 3
    cov_kind: int = 2
    lam: float = DEFAULT_DECAY
    gammas: np.ndarray | None = None
    n_starts: int = 1
    max_evals: int = MAX_EVALS_DEFAULT
    band_level: float = 0.95


@dataclass(frozen=True)
class WindowRow:
    """RMSE summary of one window, dated at the window midpoint."""

    date: str
    dns_in: float
    dns_out: float
    dnsfr_in: float
    dnsfr_out: float


def moving_window(
    response: YieldPanel,
    reference: YieldPanel,
    config: WindowSpec,
) -> list[WindowRow]:
    """Slide a fixed-length window one month at a time and refit both models.

    Each window yields in-sample mean RMSE and, from forecasts over the
    following ``horizon`` months, out-of-sample mean RMSE for the plain
    and the reference-augmented model.  With data length exactly
    window + horizon there is a single window; in general there are
    T - window - horizon + 1.
    """
    from .forecasting import forecast_dns, forecast_dnsfr
    from .kpca import extract_factors, fit_reference_model, grid_search_gamma

    t_len = response.n_dates
    if reference.n_dates != t_len or reference.dates != response.dates:
        raise ValueError("reference and response panels must share dates")
    n_windows = t_len - config.window - config.horizon + 1
    if n_windows < 1:
        raise ValueError(
            f"need at least window + horizon = {config.window + config.horizon} months, have {t_len}"
        )
    lam_mat = loading_matrix(response.grid, config.lam)
    rows = []
    for start in range(n_windows):
        resp_win = response.window(start, config.window)
        ref_win = reference.window(start, config.window)
        resp_next = response.window(start + config.window, config.horizon)

        fit_kwargs = dict(lam=config.lam, n_starts=config.n_starts, max_evals=config.max_evals)
        dns_fit = fit_mle(resp_win, None, config.cov_kind, 0, **fit_kwargs)
        dns_in = rmse_table(resp_win, fitted_yields(dns_fit, None, lam_mat)).mean
        dns_fc = forecast_dns(dns_fit, lam_mat, config.horizon)
        dns_out = rmse_table(resp_next, dns_fc.yields).mean

        kernel = grid_search_gamma(ref_win, config.q, gammas=config.gammas)
        model = fit_reference_model(ref_win, config.q, kernel)
        u_win = extract_factors(model, ref_win)
        fr_fit = fit_mle(resp_win, u_win, config.cov_kind, config.q, **fit_kwargs)
        fr_in = rmse_table(resp_win, fitted_yields(fr_fit, u_win, lam_mat)).mean
        ref_fit = fit_mle(ref_win, None, config.cov_kind, 0, **fit_kwargs)
        fr_fc = forecast_dnsfr(fr_fit, ref_fit, model, ref_win, config.horizon)
        fr_out = rmse_table(resp_next, fr_fc.yields).mean

        rows.append(WindowRow(
            date=resp_win.dates[config.window // 2],
            dns_in=dns_in, dns_out=dns_out, dnsfr_in=fr_in, dnsfr_out=fr_out,
        ))
        logger.info("window %s: dns %.4f/%.4f dnsfr %.4f/%.4f",
                    rows[-1].date, dns_in, dns_out, fr_in, fr_out)
    return rows
