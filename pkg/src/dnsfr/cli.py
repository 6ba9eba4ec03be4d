"""Command line pipeline around the library.

Subcommands: prepare, fit, forecast, stress, ladder, window.  Options
come from an optional flat key=value config file mirrored by flags
(flags win).  Every command is self-contained given the prepared
panels, writes its artifacts under the output directory and records a
manifest (resolved config, seed, input digests, package version) that
is sufficient to replay the run; reruns with the same config and seed
are byte-identical.  Failures print a machine-readable error JSON on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .estimation import FitResult, WindowSpec, fit_mle, fitted_yields, moving_window, rmse_table
from .forecasting import ForecastResult, forecast_dns, forecast_dnsfr
from .kpca import extract_factors, fit_reference_model, grid_search_gamma
from .market_data import (
    YieldPanel,
    canonical_grid,
    interpolate_missing,
    load_yield_csv,
    match_maturities,
    save_yield_csv,
)
from .nelson_siegel import DEFAULT_DECAY, loading_matrix
from .portfolio import LadderConfig, load_market_csv, simulate_ladder
from .stress import run_pipeline, run_scenario, scenario_catalog

COMMANDS = ("prepare", "fit", "forecast", "stress", "ladder", "window")


@dataclass(frozen=True)
class RunConfig:
    """Resolved options for one command invocation."""

    reference: str | None = None
    response: str | None = None
    market: str | None = None
    out: str = "out"
    seed: int = 0
    model: str = "dnsfr"
    cov: int = 2
    q: int = 3
    lam: float = DEFAULT_DECAY
    horizon: int = 12
    gamma_min: float = 0.001
    gamma_max: float = 1.0
    gamma_step: float = 0.001
    cases: str = "all"
    window: int = 60
    paths: int = 1000
    band_samples: int = 1000
    n_starts: int = 5
    max_evals: int = 50_000
    bond_tenor: int = 12
    face_value: float = 100.0
    initial_wealth: float = 12e6
    monthly_spend: float = 1e6
    investments: int = 13
    multiplier: float = 2.0

    def gamma_grid(self) -> np.ndarray:
        if self.gamma_step <= 0 or self.gamma_max < self.gamma_min:
            raise ValueError("gamma grid bounds/step are inconsistent")
        denom = 1.0 / self.gamma_step
        if abs(denom - round(denom)) < 1e-9:
            denom = round(denom)
            k0 = round(self.gamma_min * denom)
            k1 = round(self.gamma_max * denom)
            return np.arange(k0, k1 + 1) / denom
        count = int(np.floor((self.gamma_max - self.gamma_min) / self.gamma_step + 1e-9)) + 1
        return self.gamma_min + self.gamma_step * np.arange(count)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"seed", "cov", "q", "horizon", "window", "paths", "band_samples",
               "n_starts", "max_evals", "bond_tenor", "investments"}
_FLOAT_FIELDS = {"lam", "gamma_min", "gamma_max", "gamma_step", "face_value",
                 "initial_wealth", "monthly_spend", "multiplier"}


def parse_config_file(path: str) -> dict:
    """Flat key = value lines; blank lines and # comments are skipped."""
    out: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    return value


def build_config(file_values: dict, flag_values: dict) -> RunConfig:
    merged = {k: _coerce(k, v) for k, v in file_values.items()}
    merged.update({k: _coerce(k, v) for k, v in flag_values.items() if v is not None})
    return RunConfig(**merged)


# ---------------------------------------------------------------------------
# deterministic artifact writers
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _write_manifest(out: Path, command: str, config: RunConfig, inputs: list[str]) -> Path:
    payload = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config": dataclasses.asdict(config),
        "inputs": {p: _sha256(p) for p in inputs},
    }
    path = out / "manifests" / f"{command}.json"
    _write_json(path, payload)
    return path


def replay_manifest(manifest_path: str, out_dir: str | None = None) -> list[str]:
    """Re-run the command recorded in a manifest (optionally into a new directory)."""
    with open(manifest_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    config_dict = dict(payload["config"])
    if out_dir is not None:
        config_dict["out"] = out_dir
    config = RunConfig(**config_dict)
    return dispatch(payload["command"], config)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _prepared_panel(out: Path, name: str) -> YieldPanel:
    path = out / "panels" / f"{name}.csv"
    if not path.exists():
        raise FileNotFoundError(f"prepared panel {path} not found, run 'prepare' first")
    return load_yield_csv(str(path), canonical_grid())


def cmd_prepare(config: RunConfig) -> list[str]:
    """Ingest raw CSVs, fill gaps, move onto the common grid, report quality."""
    if not config.reference or not config.response:
        raise ValueError("prepare needs --reference and --response CSV paths")
    out = Path(config.out)
    (out / "panels").mkdir(parents=True, exist_ok=True)
    target = canonical_grid()
    report: dict = {}
    written = []
    for name, source in (("reference", config.reference), ("response", config.response)):
        raw = load_yield_csv(source)
        missing = {
            _tenor_label(t): int(np.sum(raw.mask[:, j] == 0))
            for j, t in enumerate(raw.grid.tenors)
        }
        synthesized = [_tenor_label(t) for t in target.tenors if t not in raw.grid.tenors]
        filled = interpolate_missing(raw)
        matched = match_maturities(filled, target, config.lam)
        dest = out / "panels" / f"{name}.csv"
        save_yield_csv(matched, str(dest))
        written.append(str(dest))
        report[name] = {
            "source": source,
            "dates": [raw.dates[0], raw.dates[-1]],
            "missing_cells_by_tenor": missing,
            "synthesized_tenors": synthesized,
        }
    report_path = out / "panels" / "quality.json"
    _write_json(report_path, report)
    written.append(str(report_path))
    written.append(str(_write_manifest(out, "prepare", config, [config.reference, config.response])))
    return written


def _tenor_label(tenor: float) -> str:
    return str(int(tenor)) if float(tenor).is_integer() else repr(float(tenor))


def _fit_models(config: RunConfig, out: Path):
    """Shared fit stage: returns (response, reference, fit, factors, model, kernel)."""
    response = _prepared_panel(out, "response")
    reference = _prepared_panel(out, "reference")
    if config.model == "dns":
        fit = fit_mle(response, None, config.cov, 0, lam=config.lam,
                      n_starts=config.n_starts, max_evals=config.max_evals)
        return response, reference, fit, None, None, None
    if config.model != "dnsfr":
        raise ValueError(f"model must be 'dns' or 'dnsfr', got {config.model!r}")
    kernel = grid_search_gamma(reference, config.q, gammas=config.gamma_grid())
    model = fit_reference_model(reference, config.q, kernel)
    factors = extract_factors(model, reference)
    fit = fit_mle(response, factors, config.cov, config.q, lam=config.lam,
                  n_starts=config.n_starts, max_evals=config.max_evals)
    return response, reference, fit, factors, model, kernel


def cmd_fit(config: RunConfig) -> list[str]:
    """Fit the selected model and write parameter and RMSE artifacts."""
    out = Path(config.out)
    (out / "fits").mkdir(parents=True, exist_ok=True)
    response, _, fit, factors, model, kernel = _fit_models(config, out)
    lam_mat = loading_matrix(response.grid, config.lam)
    table = rmse_table(response, fitted_yields(fit, factors, lam_mat))
    written = []
    fit_path = out / "fits" / f"{config.model}_fit.json"
    fit.save_json(str(fit_path))
    written.append(str(fit_path))
    rmse_path = out / "fits" / f"{config.model}_rmse.csv"
    table.write_csv(str(rmse_path))
    written.append(str(rmse_path))
    if model is not None:
        kpca_path = out / "fits" / "kpca.json"
        model.save_json(str(kpca_path))
        written.append(str(kpca_path))
    written.append(str(_write_manifest(out, "fit", config, _panel_inputs(out))))
    return written


def _panel_inputs(out: Path) -> list[str]:
    return [str(out / "panels" / "reference.csv"), str(out / "panels" / "response.csv")]


def _forecast(config: RunConfig, out: Path) -> tuple[ForecastResult, YieldPanel]:
    response, reference, fit, factors, model, _ = _fit_models(config, out)
    lam_mat = loading_matrix(response.grid, config.lam)
    if config.model == "dns":
        fc = forecast_dns(fit, lam_mat, config.horizon)
    else:
        ref_fit = fit_mle(reference, None, config.cov, 0, lam=config.lam,
                          n_starts=config.n_starts, max_evals=config.max_evals)
        fc = forecast_dnsfr(fit, ref_fit, model, reference, config.horizon)
    return fc, response


def cmd_forecast(config: RunConfig) -> list[str]:
    """Forecast the response curve and write mean path plus covariance sidecar."""
    from .market_data import shift_month

    out = Path(config.out)
    (out / "forecasts").mkdir(parents=True, exist_ok=True)
    fc, response = _forecast(config, out)
    dates = fc.dates or tuple(
        shift_month(response.dates[-1], k + 1) for k in range(config.horizon)
    )
    csv_path = out / "forecasts" / f"{config.model}_forecast.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("date," + ",".join(_tenor_label(t) for t in response.grid.tenors) + "\n")
        for k in range(fc.horizon):
            fh.write(dates[k] + "," + ",".join(repr(float(v)) for v in fc.yields[k]) + "\n")
    cov_path = out / "forecasts" / f"{config.model}_covariance.json"
    _write_json(cov_path, {
        "dates": list(dates),
        "covariances": [fc.covariances[k].tolist() for k in range(fc.horizon)],
        "basis_changed": fc.basis_changed,
    })
    manifest = _write_manifest(out, "forecast", config, _panel_inputs(out))
    return [str(csv_path), str(cov_path), str(manifest)]


def cmd_stress(config: RunConfig) -> list[str]:
    """Run catalogued shock scenarios and write per-case bucket series."""
    out = Path(config.out)
    (out / "stress").mkdir(parents=True, exist_ok=True)
    response = _prepared_panel(out, "response")
    reference = _prepared_panel(out, "reference")
    catalog = scenario_catalog(multiplier=config.multiplier)
    if config.cases.strip().lower() == "all":
        selected = list(catalog)
    else:
        selected = [c.strip() for c in config.cases.split(",") if c.strip()]
        unknown = [c for c in selected if c not in catalog]
        if unknown:
            raise ValueError(f"unknown stress cases {unknown}; catalog has {sorted(catalog)}")
    baseline = run_pipeline(
        reference, response, config.q, cov_kind=config.cov, lam=config.lam,
        gammas=config.gamma_grid(), n_starts=config.n_starts, max_evals=config.max_evals,
    )
    written = []
    meta: dict = {"seed": config.seed, "band_samples": config.band_samples, "cases": {}}
    for case in selected:
        spec = catalog[case]
        diff = run_scenario(
            spec, reference, response, config.q,
            cov_kind=config.cov, lam=config.lam, gammas=config.gamma_grid(),
            n_starts=config.n_starts, max_evals=config.max_evals,
            band_samples=config.band_samples, seed=config.seed, baseline=baseline,
        )
        case_path = out / "stress" / f"case_{case.replace('.', '_')}.csv"
        diff.write_csv(str(case_path))
        written.append(str(case_path))
        meta["cases"][case] = {
            "start": spec.start,
            "end": spec.end,
            "tenors": [_tenor_label(t) for t in spec.tenors],
            "multiplier": spec.multiplier,
            "gamma_baseline": diff.gamma_baseline,
            "gamma_shocked": diff.gamma_shocked,
        }
    meta_path = out / "stress" / "scenarios.json"
    _write_json(meta_path, meta)
    written.append(str(meta_path))
    written.append(str(_write_manifest(out, "stress", config, _panel_inputs(out))))
    return written


def cmd_ladder(config: RunConfig) -> list[str]:
    """Simulate the bond ladder on the forecast curves and write its summary."""
    if not config.market:
        raise ValueError("ladder needs --market (date, effr_percent, fx CSV)")
    out = Path(config.out)
    (out / "ladder").mkdir(parents=True, exist_ok=True)
    fc, response = _forecast(config, out)
    market = load_market_csv(config.market)
    if market.dates[0] != response.dates[-1]:
        raise ValueError(
            f"market series must start at the last in-sample month "
            f"{response.dates[-1]}, got {market.dates[0]}"
        )
    ladder_config = LadderConfig(
        initial_wealth=config.initial_wealth,
        investments=config.investments,
        monthly_spend=config.monthly_spend,
        bond_tenor=config.bond_tenor,
        face_value=config.face_value,
    )
    path = simulate_ladder(
        ladder_config, market, fc, n=config.paths, seed=config.seed,
        initial_curve=response.values[-1],
    )
    csv_path = out / "ladder" / "ladder.csv"
    path.write_csv(str(csv_path))
    run_path = out / "ladder" / "run.json"
    _write_json(run_path, {
        "config": dataclasses.asdict(ladder_config),
        "seed": config.seed,
        "paths": config.paths,
        "purchases": [[month, count] for month, count in path.purchases],
    })
    manifest = _write_manifest(out, "ladder", config, _panel_inputs(out) + [config.market])
    return [str(csv_path), str(run_path), str(manifest)]


def cmd_window(config: RunConfig) -> list[str]:
    """Moving-window in/out-of-sample RMSE comparison of both models."""
    out = Path(config.out)
    (out / "window").mkdir(parents=True, exist_ok=True)
    response = _prepared_panel(out, "response")
    reference = _prepared_panel(out, "reference")
    spec = WindowSpec(
        window=config.window, horizon=config.horizon, q=config.q,
        cov_kind=config.cov, lam=config.lam, gammas=config.gamma_grid(),
        n_starts=config.n_starts, max_evals=config.max_evals,
    )
    rows = moving_window(response, reference, spec)
    csv_path = out / "window" / "moving_window.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("date,dns_in,dns_out,dnsfr_in,dnsfr_out\n")
        for row in rows:
            fh.write(
                f"{row.date},{float(row.dns_in)!r},{float(row.dns_out)!r},"
                f"{float(row.dnsfr_in)!r},{float(row.dnsfr_out)!r}\n"
            )
    manifest = _write_manifest(out, "window", config, _panel_inputs(out))
    return [str(csv_path), str(manifest)]


def dispatch(command: str, config: RunConfig) -> list[str]:
    handlers = {
        "prepare": cmd_prepare,
        "fit": cmd_fit,
        "forecast": cmd_forecast,
        "stress": cmd_stress,
        "ladder": cmd_ladder,
        "window": cmd_window,
    }
    if command not in handlers:
        raise ValueError(f"unknown command {command!r}")
    return handlers[command](config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnsfr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="flat key = value config file")
        cmd.add_argument("--reference", help="raw reference market yield CSV")
        cmd.add_argument("--response", help="raw response market yield CSV")
        cmd.add_argument("--market", help="money market rate / fx CSV for the ladder")
        cmd.add_argument("--out", help="output directory (default ./out)")
        cmd.add_argument("--seed", type=int, help="RNG seed for all sampling")
        cmd.add_argument("--model", choices=("dns", "dnsfr"), help="model variant")
        cmd.add_argument("--cov", type=int, choices=(1, 2, 3), help="measurement covariance kind")
        cmd.add_argument("--q", type=int, help="number of kernel components")
        cmd.add_argument("--lambda", dest="lam", type=float, help="loading decay rate per month")
        cmd.add_argument("--horizon", type=int, help="forecast horizon in months")
        cmd.add_argument("--gamma-min", type=float, dest="gamma_min")
        cmd.add_argument("--gamma-max", type=float, dest="gamma_max")
        cmd.add_argument("--gamma-step", type=float, dest="gamma_step")
        cmd.add_argument("--cases", help="comma-separated stress cases or 'all'")
        cmd.add_argument("--window", type=int, help="moving window length in months")
        cmd.add_argument("--paths", type=int, help="ladder sample paths")
        cmd.add_argument("--band-samples", type=int, dest="band_samples")
        cmd.add_argument("--n-starts", type=int, dest="n_starts")
        cmd.add_argument("--max-evals", type=int, dest="max_evals")
        cmd.add_argument("--bond-tenor", type=int, dest="bond_tenor")
        cmd.add_argument("--face-value", type=float, dest="face_value")
        cmd.add_argument("--initial-wealth", type=float, dest="initial_wealth")
        cmd.add_argument("--monthly-spend", type=float, dest="monthly_spend")
        cmd.add_argument("--investments", type=int)
        cmd.add_argument("--multiplier", type=float, help="stress shock multiplier")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config", None)
    try:
        file_values = parse_config_file(config_path) if config_path else {}
        config = build_config(file_values, args)
        written = dispatch(command, config)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc), "command": command}),
            file=sys.stderr,
        )
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
