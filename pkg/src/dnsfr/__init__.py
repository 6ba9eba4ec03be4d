"""Dynamic Nelson-Siegel yield curve modelling with a kernel-PCA
functional regression extension, plus forecasting, stress scenario and
bond ladder tooling on top of the fitted models."""

__version__ = "0.1.0"

from .market_data import (
    CANONICAL_TENORS,
    MaturityGrid,
    YieldPanel,
    canonical_grid,
    interpolate_missing,
    load_yield_csv,
    match_maturities,
    save_yield_csv,
)
from .nelson_siegel import DEFAULT_DECAY, NsLoadingMatrix, loading_matrix, loading_row
from .kpca import (
    FactorPanel,
    KernelConfig,
    KpcaModel,
    extract_factors,
    fit_kpca,
    fit_reference_model,
    grid_search_gamma,
    kernel_matrix,
    project_out_of_sample,
    rbf_kernel,
    reconstruct_functional_coefficients,
)
from .state_space import (
    ArCov,
    BandedCov,
    DiagonalCov,
    FilterOutput,
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
from .estimation import (
    FitResult,
    ParamPacker,
    WindowSpec,
    default_start,
    fit_mle,
    fitted_yields,
    moving_window,
    rmse_table,
)
from .forecasting import ForecastResult, forecast_dns, forecast_dnsfr, forecast_states
from .stress import (
    BucketDiff,
    PipelineRun,
    ShockSpec,
    apply_shock,
    confidence_band,
    rerun_pipeline,
    run_pipeline,
    run_scenario,
    scenario_catalog,
)
from .portfolio import (
    Bond,
    LadderConfig,
    LadderPath,
    MarketSeries,
    bond_count,
    load_market_csv,
    portfolio_value,
    simulate_ladder,
    var_5,
)

__all__ = [name for name in dir() if not name.startswith("_")]
