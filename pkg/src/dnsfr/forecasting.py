"""Multi-step yield curve forecasts.

Plain forecasts iterate the state prediction step, so the one-step
forecast agrees bitwise with the filter's prediction.  The
reference-augmented variant forecasts the reference market first,
refits the kernel eigenbasis on the reference panel extended with its
own forecasts (kernel width held fixed), re-extracts factor scores for
every date, and adds the frozen regression term to the response
forecast path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimation import FitResult
from .kpca import KpcaModel, extract_factors, fit_reference_model
from .market_data import MaturityGrid, YieldPanel, shift_month
from .nelson_siegel import loading_matrix
from .state_space import SsmParams, build_sigma_eps, kf_predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastResult:
    """Forecast path: per-step curve means and covariances plus state terms."""

    horizon: int
    yields: np.ndarray
    covariances: np.ndarray
    state_means: np.ndarray
    state_covs: np.ndarray
    grid: MaturityGrid | None = field(default=None, repr=False)
    dates: tuple[str, ...] = ()
    basis_changed: bool | None = None

    def __post_init__(self) -> None:
        if self.yields.shape[0] != self.horizon or self.covariances.shape[0] != self.horizon:
            raise ValueError("forecast arrays must have one row per horizon step")


def forecast_states(
    a_n: np.ndarray,
    p_n: np.ndarray,
    params: SsmParams,
    h: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the prediction step ``h`` times from the filter's end state.

    Step one equals ``kf_predict`` exactly; covariances follow the
    recursion cov_k = Psi1 cov_{k-1} Psi1 + diag(sigma_eta^2) and
    approach the stationary state variance as k grows.
    """
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    means = np.empty((h, a_n.shape[0]))
    covs = np.empty((h, a_n.shape[0], a_n.shape[0]))
    a, p = a_n, p_n
    for k in range(h):
        a, p = kf_predict(a, p, params)
        means[k] = a
        covs[k] = p
    return means, covs


def forecast_dns(fit: FitResult, loadings: np.ndarray, h: int) -> ForecastResult:
    """Plain model forecast: curves Lam (a_k + mu), covariance Lam P_k Lam' + Sigma_eps."""
    lam_mat = np.asarray(getattr(loadings, "matrix", loadings), dtype=float)
    grid = getattr(loadings, "grid", None)
    params = fit.params
    means, covs = forecast_states(fit.filter.a_filt[-1], fit.filter.p_filt[-1], params, h)
    sigma_eps = build_sigma_eps(params.cov, lam_mat.shape[0])
    yields = (means + params.mu) @ lam_mat.T
    ycov = np.empty((h, lam_mat.shape[0], lam_mat.shape[0]))
    for k in range(h):
        c = lam_mat @ covs[k] @ lam_mat.T + sigma_eps
        ycov[k] = 0.5 * (c + c.T)
    return ForecastResult(
        horizon=h, yields=yields, covariances=ycov,
        state_means=means, state_covs=covs, grid=grid, dates=(),
    )


def extend_panel(panel: YieldPanel, extra_values: np.ndarray) -> YieldPanel:
    """Append fully-observed rows (one per forecast step) to a panel."""
    extra_values = np.asarray(extra_values, dtype=float)
    h = extra_values.shape[0]
    dates = panel.dates + tuple(shift_month(panel.dates[-1], k + 1) for k in range(h))
    return YieldPanel(
        dates=dates,
        values=np.vstack([panel.values, extra_values]),
        mask=np.vstack([panel.mask, np.ones((h, len(panel.grid)), dtype=np.uint8)]),
        grid=panel.grid,
    )


def _leading_order_changed(z_old: np.ndarray, z_new: np.ndarray) -> bool:
    overlap = np.abs(z_old.T @ z_new)
    return int(np.argmax(overlap[0, :])) != 0 or int(np.argmax(overlap[:, 0])) != 0


def forecast_dnsfr(
    response_fit: FitResult,
    reference_fit: FitResult,
    model: KpcaModel,
    reference_panel: YieldPanel,
    h: int,
) -> ForecastResult:
    """Reference-augmented forecast.

    Forecasts the reference market with the plain model, extends the
    reference panel with those forecast curves, refits the kernel
    eigenbasis on the extended panel (same kernel width and component
    count), re-extracts factor scores for all dates, and maps the
    response state forecast through the frozen regression loadings:
    yields_k = Lam (a_k + mu) + Gamma u_{T+k}.  Sets ``basis_changed``
    when the leading eigenvector of the refitted basis no longer lines
    up with the in-sample one.
    """
    if model.config is None or model.training_panel is None:
        raise ValueError("kernel model must carry its config and training panel")
    if not panel_grids_match(reference_panel, model):
        raise ValueError("reference panel grid differs from the kernel training grid")
    params = response_fit.params
    q = params.n_ref_factors
    if q != model.n_components:
        raise ValueError(
            f"response fit expects {q} reference factors, kernel model has {model.n_components}"
        )

    ref_lam = loading_matrix(reference_panel.grid, reference_fit.params.lam)
    ref_fc = forecast_dns(reference_fit, ref_lam, h)
    extended = extend_panel(reference_panel, ref_fc.yields)
    refit = fit_reference_model(extended, q, model.config)
    changed = _leading_order_changed(model.z, refit.z)
    if changed:
        logger.warning("leading kernel component changed order after extending the panel")
    u_ext = extract_factors(refit, extended)
    u_fc = u_ext.values[reference_panel.n_dates :]

    resp_lam = loading_matrix(reference_panel.grid, params.lam)
    means, covs = forecast_states(
        response_fit.filter.a_filt[-1], response_fit.filter.p_filt[-1], params, h,
    )
    sigma_eps = build_sigma_eps(params.cov, len(reference_panel.grid))
    yields = (means + params.mu) @ resp_lam.matrix.T + u_fc @ params.ref_loadings.T
    ycov = np.empty((h, len(reference_panel.grid), len(reference_panel.grid)))
    for k in range(h):
        c = resp_lam.matrix @ covs[k] @ resp_lam.matrix.T + sigma_eps
        ycov[k] = 0.5 * (c + c.T)
    return ForecastResult(
        horizon=h, yields=yields, covariances=ycov,
        state_means=means, state_covs=covs,
        grid=reference_panel.grid,
        dates=extended.dates[reference_panel.n_dates :],
        basis_changed=changed,
    )


def panel_grids_match(panel: YieldPanel, model: KpcaModel) -> bool:
    return model.training_panel is None or panel.grid == model.training_panel.grid
