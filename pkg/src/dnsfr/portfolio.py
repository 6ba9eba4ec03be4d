"""Bond ladder simulation against forecast yield curves.

Each month a fixed spend buys zero-coupon bonds of one tenor in the
response market (GBP face, valued in USD through the spot rate).  Cash
accrues at the money market rate, matured face flows back to cash, and
unsold bonds are marked on the month's yield curve.  Yield paths are
drawn from the forecast's per-step Gaussian marginals, independently
across steps; the first purchase happens on the last observed curve so
only later months are random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .forecasting import ForecastResult
from .market_data import month_to_index

VAR_MIN_SAMPLES = 100


@dataclass(frozen=True)
class LadderConfig:
    """Ladder setup: total wealth, purchase count and size, bond terms."""

    initial_wealth: float = 12e6
    investments: int = 13
    monthly_spend: float = 1e6
    bond_tenor: int = 12
    face_value: float = 100.0

    def __post_init__(self) -> None:
        if self.initial_wealth <= 0 or self.monthly_spend <= 0 or self.face_value <= 0:
            raise ValueError("wealth, spend and face value must be positive")
        if self.investments < 1:
            raise ValueError("need at least one investment")
        if self.bond_tenor < 1:
            raise ValueError("bond tenor must be at least one month")


@dataclass(frozen=True)
class MarketSeries:
    """Deterministic money market rate and FX path over the ladder months.

    ``effr`` holds annualized decimal rates; the first entry may be NaN
    because no interest accrues before the first month ends.  ``fx`` is
    the USD price of one unit of response currency.
    """

    dates: tuple[str, ...]
    effr: np.ndarray
    fx: np.ndarray

    def __post_init__(self) -> None:
        dates = tuple(str(d) for d in self.dates)
        effr = np.asarray(self.effr, dtype=float).reshape(len(dates))
        fx = np.asarray(self.fx, dtype=float).reshape(len(dates))
        idx = [month_to_index(d) for d in dates]
        for a, b in zip(idx, idx[1:]):
            if b != a + 1:
                raise ValueError("market series dates must advance by one month")
        if not np.all(np.isfinite(effr[1:])):
            raise ValueError("money market rate missing after the first month")
        if not np.all(np.isfinite(fx)) or not np.all(fx > 0):
            raise ValueError("fx must be positive and finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "effr", effr)
        object.__setattr__(self, "fx", fx)


def load_market_csv(path: str) -> MarketSeries:
    """Read (date, effr_percent, fx) rows; the percent rate is scaled to decimal."""
    frame = pd.read_csv(path, dtype=str)
    for col in ("date", "effr_percent", "fx"):
        if col not in frame.columns:
            raise ValueError(f"{path}: missing column {col!r}")
    effr = pd.to_numeric(frame["effr_percent"], errors="coerce").to_numpy(dtype=float) / 100.0
    fx = pd.to_numeric(frame["fx"], errors="coerce").to_numpy(dtype=float)
    return MarketSeries(dates=tuple(str(d).strip() for d in frame["date"]), effr=effr, fx=fx)


def bond_count(spend: float, face_usd: float, tenor_months: float, y: float) -> float:
    """Bonds bought when ``spend`` goes into discounted face value.

    ``y`` is the annualized decimal yield at the bond tenor; the price
    per bond is face_usd * exp(-(tenor_months / 12) * y).
    """
    if spend <= 0 or face_usd <= 0 or tenor_months <= 0:
        raise ValueError("spend, face and tenor must be positive")
    return spend / (face_usd * math.exp(-(tenor_months / 12.0) * y))


@dataclass(frozen=True)
class Bond:
    """One ladder rung: bond count and months left to maturity."""

    count: float
    remaining: int


def portfolio_value(
    inventory: list[Bond],
    cash_prev: float,
    y_curve,
    fx: float,
    rate: float,
    face_gbp: float = 100.0,
) -> float:
    """Mark the ladder to one month's curve.

    ``y_curve`` maps a tenor in months to an annualized decimal yield.
    Bonds with months remaining are discounted at the curve; bonds at
    zero remaining credit their full face to cash; cash accrues one
    month of simple interest at ``rate``.
    """
    bond_leg = 0.0
    cash = (1.0 + rate / 12.0) * cash_prev
    for bond in inventory:
        if bond.remaining > 0:
            y = float(y_curve(bond.remaining))
            bond_leg += bond.count * face_gbp * fx * math.exp(-(bond.remaining / 12.0) * y)
        elif bond.remaining == 0:
            cash += bond.count * face_gbp * fx
        else:
            raise ValueError("bond with negative remaining tenor in inventory")
    return bond_leg + cash


@dataclass(frozen=True)
class LadderPath:
    """Simulated ladder summary, one entry per purchase month.

    ``values``, ``cash_paths`` and ``bond_paths`` keep the full path
    matrices (n paths x months) so the accounting identity
    value = cash + bond value can be checked per path.
    """

    months: tuple[str, ...]
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    var5: np.ndarray
    cash: np.ndarray
    bond_value: np.ndarray
    purchases: tuple[tuple[str, float], ...]
    values: np.ndarray = field(repr=False)
    cash_paths: np.ndarray = field(repr=False)
    bond_paths: np.ndarray = field(repr=False)
    seed: int | None = None

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("month,mean,lo,hi,var5,cash,bond_value\n")
            for i, month in enumerate(self.months):
                fh.write(
                    f"{month},{float(self.mean[i])!r},{float(self.lo[i])!r},"
                    f"{float(self.hi[i])!r},{float(self.var5[i])!r},"
                    f"{float(self.cash[i])!r},{float(self.bond_value[i])!r}\n"
                )


def var_5(path_values: np.ndarray) -> np.ndarray:
    """Empirical 5th percentile of portfolio value per month (needs >= 100 paths)."""
    path_values = np.asarray(path_values, dtype=float)
    if path_values.ndim != 2 or path_values.shape[0] < VAR_MIN_SAMPLES:
        raise ValueError(f"need a paths-by-months matrix with >= {VAR_MIN_SAMPLES} paths")
    return np.percentile(path_values, 5.0, axis=0)


def simulate_ladder(
    config: LadderConfig,
    market: MarketSeries,
    forecast: ForecastResult,
    n: int = 1000,
    seed: int = 0,
    *,
    initial_curve: np.ndarray,
) -> LadderPath:
    """Monte Carlo ladder over sampled forecast curves.

    Month 0 buys on ``initial_curve`` (the last observed curve, in
    percent on the forecast grid); months 1..k buy and mark on curves
    drawn from the forecast marginals, independent across months, one
    RNG stream per path spawned from ``seed``.  Raises when the spend
    cannot be funded from cash at some purchase month.
    """
    if forecast.grid is None:
        raise ValueError("forecast carries no maturity grid")
    k = config.investments - 1
    if forecast.horizon < k:
        raise ValueError(f"forecast horizon {forecast.horizon} < {k} later purchase months")
    if len(market.dates) < config.investments:
        raise ValueError(f"market series covers {len(market.dates)} months, need {config.investments}")
    if forecast.dates:
        if market.dates[1 : k + 1] != forecast.dates[:k]:
            raise ValueError("market series months do not line up with the forecast months")
    tenors = forecast.grid.as_array()
    initial_curve = np.asarray(initial_curve, dtype=float).reshape(len(tenors))

    factors = [_curve_factor(forecast.covariances[i]) for i in range(k)]
    streams = np.random.SeedSequence(seed).spawn(n)
    months = market.dates[: k + 1]

    values = np.empty((n, k + 1))
    cash_paths = np.empty((n, k + 1))
    bond_paths = np.empty((n, k + 1))
    counts = np.zeros((n, k + 1))
    for p in range(n):
        rng = np.random.default_rng(streams[p])
        curves = np.empty((k + 1, len(tenors)))
        curves[0] = initial_curve
        for i in range(1, k + 1):
            curves[i] = forecast.yields[i - 1] + factors[i - 1] @ rng.standard_normal(len(tenors))
        _one_path(config, market, tenors, curves, values[p], cash_paths[p], bond_paths[p], counts[p])

    mean_counts = counts.mean(axis=0)
    return LadderPath(
        months=months,
        mean=values.mean(axis=0),
        lo=np.percentile(values, 2.5, axis=0),
        hi=np.percentile(values, 97.5, axis=0),
        var5=var_5(values) if n >= VAR_MIN_SAMPLES else np.full(k + 1, np.nan),
        cash=cash_paths.mean(axis=0),
        bond_value=bond_paths.mean(axis=0),
        purchases=tuple((months[i], float(mean_counts[i])) for i in range(k + 1)),
        values=values,
        cash_paths=cash_paths,
        bond_paths=bond_paths,
        seed=seed,
    )


def _curve_factor(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))[None, :]


def _one_path(
    config: LadderConfig,
    market: MarketSeries,
    tenors: np.ndarray,
    curves: np.ndarray,
    values_out: np.ndarray,
    cash_out: np.ndarray,
    bond_out: np.ndarray,
    counts_out: np.ndarray,
) -> None:
    k = config.investments - 1
    cash = config.initial_wealth
    inventory: list[tuple[float, int]] = []  # (count, purchase month)
    for i in range(k + 1):
        fx = market.fx[i]
        if i > 0:
            cash *= 1.0 + market.effr[i] / 12.0
        matured = [b for b in inventory if b[1] + config.bond_tenor == i]
        inventory = [b for b in inventory if b[1] + config.bond_tenor > i]
        for count, _ in matured:
            cash += count * config.face_value * fx

        y_buy = float(np.interp(config.bond_tenor, tenors, curves[i])) / 100.0
        count_new = bond_count(config.monthly_spend, config.face_value * fx, config.bond_tenor, y_buy)
        cash -= config.monthly_spend
        if cash < 0:
            raise ValueError(
                f"spend of {config.monthly_spend} cannot be funded at month {market.dates[i]}"
            )
        inventory.append((count_new, i))
        counts_out[i] = count_new

        bond_leg = 0.0
        for count, bought in inventory:
            remaining = config.bond_tenor - (i - bought)
            y = float(np.interp(remaining, tenors, curves[i])) / 100.0
            bond_leg += count * config.face_value * fx * math.exp(-(remaining / 12.0) * y)
        cash_out[i] = cash
        bond_out[i] = bond_leg
        values_out[i] = bond_leg + cash
