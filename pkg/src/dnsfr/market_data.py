"""Yield panel ingestion and preparation.

A yield panel is a monthly table of zero-coupon yields in percent, one
column per tenor (months) and one row per month stamp ("YYYY-MM").  Raw
panels may have missing cells and tenor grids that differ by market, so
preparation runs in two steps: fill gaps along the maturity axis by
linear interpolation, then move every market onto a common tenor grid
with a per-date Nelson-Siegel cross-sectional fit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

# Common tenor grid, in months: 1m-12m money market points, then
# 2y, 3y, 5y, 7y, 10y, 20y, 30y bond points.
CANONICAL_TENORS = (1, 3, 6, 9, 12, 24, 36, 60, 84, 120, 240, 360)

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_to_index(stamp: str) -> int:
    """Convert a "YYYY-MM" month stamp to a serial month count."""
    m = _MONTH_RE.match(stamp.strip())
    if m is None:
        raise ValueError(f"bad month stamp {stamp!r}, expected YYYY-MM")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"bad month stamp {stamp!r}, month out of range")
    return year * 12 + (month - 1)


def index_to_month(index: int) -> str:
    """Inverse of :func:`month_to_index`."""
    year, month = divmod(int(index), 12)
    return f"{year:04d}-{month + 1:02d}"


def shift_month(stamp: str, months: int) -> str:
    """Return the month stamp ``months`` steps after ``stamp``."""
    return index_to_month(month_to_index(stamp) + months)


@dataclass(frozen=True)
class MaturityGrid:
    """Strictly increasing tenor grid in months, at least four points."""

    tenors: tuple[float, ...]

    def __post_init__(self) -> None:
        tenors = tuple(float(t) for t in self.tenors)
        if len(tenors) < 4:
            raise ValueError(f"grid needs at least 4 tenors, got {len(tenors)}")
        if any(t <= 0 for t in tenors):
            raise ValueError("tenors must be positive months")
        if any(b <= a for a, b in zip(tenors, tenors[1:])):
            raise ValueError("tenors must be strictly increasing")
        object.__setattr__(self, "tenors", tenors)

    def __len__(self) -> int:
        return len(self.tenors)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.tenors, dtype=float)

    def index_of(self, tenor: float) -> int:
        try:
            return self.tenors.index(float(tenor))
        except ValueError:
            raise ValueError(f"tenor {tenor} not on grid {self.tenors}") from None


def canonical_grid() -> MaturityGrid:
    return MaturityGrid(tenors=CANONICAL_TENORS)


@dataclass(frozen=True)
class YieldPanel:
    """Monthly yield observations on a fixed tenor grid.

    ``values`` is T x N in percent, ``mask`` is T x N with 1 where a value
    is recorded and 0 where it is missing.  Dates are consecutive month
    stamps.  Values must be finite wherever the mask is 1.
    """

    dates: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray
    grid: MaturityGrid = field(repr=False)

    def __post_init__(self) -> None:
        dates = tuple(str(d) for d in self.dates)
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask)
        n = len(self.grid)
        t = len(dates)
        if values.shape != (t, n):
            raise ValueError(f"values must be {t}x{n}, got {values.shape}")
        if mask.shape != (t, n):
            raise ValueError(f"mask must be {t}x{n}, got {mask.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(np.uint8)
        idx = [month_to_index(d) for d in dates]
        for a, b, d in zip(idx, idx[1:], dates[1:]):
            if b != a + 1:
                raise ValueError(f"dates must advance by one month, broken at {d}")
        if not np.all(np.isfinite(values[mask == 1])):
            raise ValueError("recorded values must be finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def is_complete(self) -> bool:
        return bool(np.all(self.mask == 1))

    def date_index(self, stamp: str) -> int:
        try:
            return self.dates.index(stamp)
        except ValueError:
            raise ValueError(f"date {stamp} not in panel") from None

    def window(self, start: int, length: int) -> "YieldPanel":
        """Contiguous sub-panel of ``length`` months starting at row ``start``."""
        if start < 0 or start + length > self.n_dates:
            raise ValueError("window out of range")
        return YieldPanel(
            dates=self.dates[start : start + length],
            values=self.values[start : start + length],
            mask=self.mask[start : start + length],
            grid=self.grid,
        )


def _parse_tenor_header(name: str) -> float | None:
    try:
        tenor = float(name.strip())
    except ValueError:
        return None
    return tenor if tenor > 0 else None


def load_yield_csv(path: str, grid: MaturityGrid | None = None) -> YieldPanel:
    """Read a yield panel from CSV.

    The file needs a ``date`` column of "YYYY-MM" stamps plus one column
    per tenor whose header is the tenor in months.  Empty or non-numeric
    cells become missing (mask 0).  Rows are sorted by date.  When
    ``grid`` is given the tenor columns must match it exactly (any
    order); otherwise the grid is taken from the headers.
    """
    try:
        frame = pd.read_csv(path, dtype=str)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ValueError(f"cannot read yield CSV {path}: {exc}") from exc
    cols = list(frame.columns)
    if "date" not in cols:
        raise ValueError(f"{path}: no 'date' column in header {cols}")
    tenor_cols = [(c, _parse_tenor_header(c)) for c in cols if c != "date"]
    tenor_cols = [(c, t) for c, t in tenor_cols if t is not None]
    if not tenor_cols:
        raise ValueError(f"{path}: no tenor columns parse as positive months")
    tenor_cols.sort(key=lambda ct: ct[1])
    tenors = tuple(t for _, t in tenor_cols)
    if grid is not None:
        if tuple(sorted(tenors)) != tuple(grid.tenors):
            raise ValueError(
                f"{path}: tenor columns {tenors} do not match requested grid {grid.tenors}"
            )
    else:
        grid = MaturityGrid(tenors=tenors)

    raw_dates = []
    for row, cell in enumerate(frame["date"]):
        stamp = str(cell).strip()
        try:
            month_to_index(stamp)
        except ValueError as exc:
            raise ValueError(f"{path}: row {row + 2}: {exc}") from exc
        raw_dates.append(stamp)
    if len(set(raw_dates)) != len(raw_dates):
        dupes = sorted({d for d in raw_dates if raw_dates.count(d) > 1})
        raise ValueError(f"{path}: duplicate dates {dupes}")

    t = len(raw_dates)
    n = len(grid)
    values = np.full((t, n), np.nan)
    mask = np.zeros((t, n), dtype=np.uint8)
    for j, (col, tenor) in enumerate(tenor_cols):
        dest = grid.index_of(tenor)
        parsed = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
        ok = np.isfinite(parsed)
        values[ok, dest] = parsed[ok]
        mask[ok, dest] = 1

    order = np.argsort([month_to_index(d) for d in raw_dates], kind="stable")
    return YieldPanel(
        dates=tuple(raw_dates[i] for i in order),
        values=values[order],
        mask=mask[order],
        grid=grid,
    )


def interpolate_missing(panel: YieldPanel) -> YieldPanel:
    """Fill missing cells by per-date linear interpolation along maturity.

    Interior gaps are interpolated linearly in tenor between the nearest
    recorded tenors; tenors outside the recorded range take the nearest
    recorded value (flat extrapolation).  Recorded cells are unchanged
    and the returned mask is all ones.  Every date must have at least
    two recorded tenors.
    """
    tenors = panel.grid.as_array()
    values = panel.values.copy()
    for t in range(panel.n_dates):
        have = panel.mask[t] == 1
        if have.sum() < 2:
            raise ValueError(
                f"date {panel.dates[t]} has {int(have.sum())} recorded tenors, need >= 2"
            )
        if have.all():
            continue
        values[t, ~have] = np.interp(tenors[~have], tenors[have], values[t, have])
    return YieldPanel(
        dates=panel.dates,
        values=values,
        mask=np.ones_like(panel.mask),
        grid=panel.grid,
    )


def fit_cross_section(
    yields: np.ndarray, tenors: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares Nelson-Siegel factors for one date's curve.

    Returns (factors, residuals) where ``factors`` is the length-3 OLS
    solution of yields on the loading rows at ``tenors`` and
    ``residuals`` the per-tenor fit errors.
    """
    from .nelson_siegel import loading_row

    design = np.vstack([loading_row(tau, lam) for tau in tenors])
    factors, _, rank, _ = np.linalg.lstsq(design, yields, rcond=None)
    if rank < 3:
        raise ValueError("rank-deficient Nelson-Siegel design")
    return factors, yields - design @ factors


def match_maturities(panel: YieldPanel, target: MaturityGrid, lam: float) -> YieldPanel:
    """Move a panel onto ``target`` tenors with per-date Nelson-Siegel fits.

    For each date the recorded yields are regressed on the loading rows
    at their own tenors; target tenors missing from the source grid take
    the fitted curve value, while recorded source values at shared
    tenors are carried through unchanged.  Output mask is all ones.
    Each date needs at least three recorded tenors.
    """
    from .nelson_siegel import loading_row

    source = panel.grid.as_array()
    tgt = target.as_array()
    tgt_rows = np.vstack([loading_row(tau, lam) for tau in tgt])
    shared = {float(tau): panel.grid.index_of(tau) for tau in tgt if float(tau) in panel.grid.tenors}

    out = np.empty((panel.n_dates, len(target)))
    for t in range(panel.n_dates):
        have = panel.mask[t] == 1
        if have.sum() < 3:
            raise ValueError(
                f"date {panel.dates[t]} has {int(have.sum())} recorded tenors, need >= 3"
            )
        factors, _ = fit_cross_section(panel.values[t, have], source[have], lam)
        out[t] = tgt_rows @ factors
        for j, tau in enumerate(tgt):
            src = shared.get(float(tau))
            if src is not None and panel.mask[t, src] == 1:
                out[t, j] = panel.values[t, src]
    return YieldPanel(
        dates=panel.dates,
        values=out,
        mask=np.ones((panel.n_dates, len(target)), dtype=np.uint8),
        grid=target,
    )


def save_yield_csv(panel: YieldPanel, path: str) -> None:
    """Write a panel back to the CSV layout accepted by :func:`load_yield_csv`."""
    headers = ["date"] + [_format_tenor(t) for t in panel.grid.tenors]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(headers) + "\n")
        for t, date in enumerate(panel.dates):
            cells = [date]
            for j in range(len(panel.grid)):
                cells.append(repr(float(panel.values[t, j])) if panel.mask[t, j] else "")
            fh.write(",".join(cells) + "\n")


def _format_tenor(tenor: float) -> str:
    return str(int(tenor)) if float(tenor).is_integer() else repr(float(tenor))
