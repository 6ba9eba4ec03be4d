"""CSV ingestion, panel validation, gap filling and maturity matching."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_panel

from dnsfr.market_data import (
    MaturityGrid,
    YieldPanel,
    canonical_grid,
    fit_cross_section,
    index_to_month,
    interpolate_missing,
    load_yield_csv,
    match_maturities,
    month_to_index,
    save_yield_csv,
    shift_month,
)
from dnsfr.nelson_siegel import loading_matrix


# ---------------------------------------------------------------------------
# month stamps
# ---------------------------------------------------------------------------

def test_month_index_round_trip_examples():
    assert month_to_index("2010-01") + 1 == month_to_index("2010-02")
    assert index_to_month(month_to_index("1994-07")) == "1994-07"
    assert shift_month("2015-12", 1) == "2016-01"
    assert shift_month("2015-01", -1) == "2014-12"
    assert shift_month("2010-06", 25) == "2012-07"


@given(year=st.integers(1900, 2100), month=st.integers(1, 12))
def test_month_index_round_trip(year, month):
    stamp = f"{year:04d}-{month:02d}"
    assert index_to_month(month_to_index(stamp)) == stamp


@pytest.mark.parametrize("stamp", ["2010", "2010-00", "2010-13", "10-01", "2010/01", "2010-1"])
def test_bad_month_stamp_rejected(stamp):
    with pytest.raises(ValueError):
        month_to_index(stamp)


# ---------------------------------------------------------------------------
# grid and panel validation
# ---------------------------------------------------------------------------

def test_canonical_grid():
    assert canonical_grid().tenors == (1, 3, 6, 9, 12, 24, 36, 60, 84, 120, 240, 360)
    assert len(canonical_grid()) == 12


def test_grid_validation():
    with pytest.raises(ValueError):
        MaturityGrid(tenors=(1, 3, 6))
    with pytest.raises(ValueError):
        MaturityGrid(tenors=(0, 3, 6, 9))
    with pytest.raises(ValueError):
        MaturityGrid(tenors=(1, 3, 3, 9))
    grid = MaturityGrid(tenors=(1, 3, 6, 9))
    assert grid.index_of(6) == 2
    with pytest.raises(ValueError):
        grid.index_of(12)


def test_panel_validation():
    grid = MaturityGrid(tenors=(1, 3, 6, 9))
    vals = np.ones((3, 4))
    with pytest.raises(ValueError):
        YieldPanel(dates=("2010-01", "2010-03", "2010-04"), values=vals,
                   mask=np.ones((3, 4)), grid=grid)
    with pytest.raises(ValueError):
        YieldPanel(dates=("2010-01", "2010-02", "2010-03"), values=vals,
                   mask=np.full((3, 4), 0.5), grid=grid)
    holed = vals.copy()
    holed[1, 2] = np.nan
    with pytest.raises(ValueError):
        make_panel(holed, grid=grid)
    mask = np.ones((3, 4))
    mask[1, 2] = 0.0
    panel = make_panel(holed, grid=grid, mask=mask)
    assert not panel.is_complete()


def test_panel_window():
    panel = make_panel(np.arange(24.0).reshape(6, 4) + 1.0)
    win = panel.window(2, 3)
    assert win.dates == panel.dates[2:5]
    np.testing.assert_array_equal(win.values, panel.values[2:5])


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------

def test_load_complete_csv(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,1,3,6,9\n2010-01,1,2,3,4\n2010-02,1.5,2.5,3.5,4.5\n2010-03,2,3,4,5\n")
    panel = load_yield_csv(str(path))
    assert panel.n_dates == 3
    assert panel.grid.tenors == (1.0, 3.0, 6.0, 9.0)
    assert panel.is_complete()
    np.testing.assert_array_equal(panel.values[1], [1.5, 2.5, 3.5, 4.5])


def test_load_csv_single_hole(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,1,3,6,84\n2010-01,1,2,3,4\n2010-02,1,2,3,4\n2010-03,1,2,,4\n")
    panel = load_yield_csv(str(path))
    assert panel.mask[2, panel.grid.index_of(6)] == 0.0
    assert panel.mask.sum() == 11


def test_load_csv_sorts_dates(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,1,3,6,9\n2010-03,3,3,3,3\n2010-01,1,1,1,1\n2010-02,2,2,2,2\n")
    panel = load_yield_csv(str(path))
    assert panel.dates == ("2010-01", "2010-02", "2010-03")
    np.testing.assert_array_equal(panel.values[:, 0], [1.0, 2.0, 3.0])


def test_load_csv_duplicate_dates_rejected(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,1,3,6,9\n2010-01,1,1,1,1\n2010-01,2,2,2,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_yield_csv(str(path))


def test_load_csv_no_tenor_columns_rejected(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,alpha,beta\n2010-01,1,2\n")
    with pytest.raises(ValueError, match="tenor"):
        load_yield_csv(str(path))


def test_load_csv_grid_cross_check(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("date,1,3,6,9\n2010-01,1,2,3,4\n")
    with pytest.raises(ValueError):
        load_yield_csv(str(path), canonical_grid())


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.uniform(0.5, 6.0, size=(5, 4))
    mask = np.ones((5, 4))
    mask[3, 1] = 0.0
    vals = np.where(mask == 1.0, vals, np.nan)
    panel = make_panel(vals, grid=MaturityGrid(tenors=(1, 3, 6, 9)), mask=mask)
    path = tmp_path / "y.csv"
    save_yield_csv(panel, str(path))
    back = load_yield_csv(str(path))
    assert back.dates == panel.dates
    np.testing.assert_array_equal(back.mask, panel.mask)
    np.testing.assert_array_equal(back.values[mask == 1.0], panel.values[mask == 1.0])


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def test_interpolation_midpoint_and_flat_ends():
    grid = MaturityGrid(tenors=(1, 3, 12, 24, 36))
    vals = np.array([[np.nan, 0.5, 1.0, np.nan, 3.0]])
    mask = np.array([[0.0, 1.0, 1.0, 0.0, 1.0]])
    panel = YieldPanel(dates=("2010-01",), values=vals, mask=mask, grid=grid)
    filled = interpolate_missing(panel)
    assert filled.is_complete()
    # hole between (12, 1.0) and (36, 3.0) at tau=24 -> 2.0
    assert filled.values[0, 3] == pytest.approx(2.0, abs=1e-12)
    # hole at tau=1 below the shortest recorded tenor -> flat from (3, 0.5)
    assert filled.values[0, 0] == 0.5
    # recorded cells untouched
    assert filled.values[0, 1] == 0.5 and filled.values[0, 2] == 1.0


def test_interpolation_idempotent():
    rng = np.random.default_rng(1)
    vals = rng.uniform(0.5, 5.0, size=(8, 6))
    mask = (rng.uniform(size=(8, 6)) > 0.25).astype(float)
    mask[:, 0] = 1.0
    mask[:, -1] = 1.0
    vals = np.where(mask == 1.0, vals, np.nan)
    panel = make_panel(vals, grid=MaturityGrid(tenors=(1, 3, 6, 12, 24, 60)), mask=mask)
    once = interpolate_missing(panel)
    twice = interpolate_missing(once)
    np.testing.assert_array_equal(once.values, twice.values)
    np.testing.assert_array_equal(once.mask, twice.mask)


def test_interpolation_matches_piecewise_linear_oracle():
    rng = np.random.default_rng(2)
    tenors = (1, 3, 6, 9, 12, 24, 36, 60)
    grid = MaturityGrid(tenors=tenors)
    taus = np.array(tenors, dtype=float)
    for _ in range(20):
        vals = rng.uniform(0.2, 6.0, size=(6, 8))
        mask = (rng.uniform(size=(6, 8)) > 0.3).astype(float)
        for t in range(6):  # keep >= 2 recorded per date
            if mask[t].sum() < 2:
                mask[t, :2] = 1.0
        panel = make_panel(np.where(mask == 1.0, vals, np.nan), grid=grid, mask=mask)
        filled = interpolate_missing(panel)
        for t in range(6):
            rec = mask[t] == 1.0
            expect = np.interp(taus, taus[rec], vals[t, rec])
            np.testing.assert_allclose(filled.values[t], expect, rtol=0, atol=1e-12)


def test_interpolation_needs_two_recorded_tenors():
    grid = MaturityGrid(tenors=(1, 3, 6, 9))
    vals = np.array([[1.0, np.nan, np.nan, np.nan]])
    mask = np.array([[1.0, 0.0, 0.0, 0.0]])
    panel = YieldPanel(dates=("2010-01",), values=vals, mask=mask, grid=grid)
    with pytest.raises(ValueError):
        interpolate_missing(panel)


# ---------------------------------------------------------------------------
# static cross-section fits and maturity matching
# ---------------------------------------------------------------------------

def test_cross_section_recovers_exact_factors():
    grid = MaturityGrid(tenors=(1, 3, 6, 9, 12, 24, 36, 60))
    lam = 0.0609
    factors = np.array([2.0, -1.0, 0.5])
    curve = loading_matrix(grid, lam).matrix @ factors
    fitted, resid = fit_cross_section(curve, grid.as_array(), lam)
    np.testing.assert_allclose(fitted, factors, rtol=0, atol=1e-10)
    np.testing.assert_allclose(resid, 0.0, atol=1e-10)


def test_cross_section_constant_curve():
    grid = MaturityGrid(tenors=(1, 3, 6, 9, 12, 24))
    fitted, _ = fit_cross_section(np.full(6, 3.0), grid.as_array(), 0.0609)
    np.testing.assert_allclose(fitted, [3.0, 0.0, 0.0], rtol=0, atol=1e-10)


def test_cross_section_matches_normal_equations_oracle():
    rng = np.random.default_rng(3)
    grid = MaturityGrid(tenors=(1, 3, 6, 9, 12, 24, 60, 120))
    lam = 0.0609
    design = loading_matrix(grid, lam).matrix
    for _ in range(10):
        y = design @ rng.normal(size=3) + rng.normal(scale=0.1, size=8)
        fitted, _ = fit_cross_section(y, grid.as_array(), lam)
        oracle = np.linalg.solve(design.T @ design, design.T @ y)
        np.testing.assert_allclose(fitted, oracle, rtol=0, atol=1e-10)


def test_cross_section_rank_deficient_rejected():
    with pytest.raises(ValueError, match="rank"):
        fit_cross_section(np.array([1.0, 2.0, 3.0]), np.array([5.0, 5.0, 5.0]), 0.0609)


def test_match_maturities_synthesizes_missing_tenors_only():
    lam = 0.0609
    target = canonical_grid()
    source_tenors = tuple(t for t in target.tenors if t not in (9, 84))
    source = MaturityGrid(tenors=source_tenors)
    factors = np.array([[2.0, -1.0, 0.5], [3.0, 0.5, -0.2]])
    vals = factors @ loading_matrix(source, lam).matrix.T
    panel = make_panel(vals, grid=source)
    matched = match_maturities(panel, target, lam)
    assert matched.grid.tenors == target.tenors
    assert matched.is_complete()
    # observed tenors carried through bitwise
    for tenor in source_tenors:
        np.testing.assert_array_equal(
            matched.values[:, target.index_of(tenor)], vals[:, source.index_of(tenor)])
    # synthesized tenors equal the fitted curve
    expect = factors @ loading_matrix(target, lam).matrix.T
    for tenor in (9, 84):
        np.testing.assert_allclose(
            matched.values[:, target.index_of(tenor)],
            expect[:, target.index_of(tenor)], rtol=0, atol=1e-8)


def test_match_maturities_needs_three_recorded(tmp_path):
    grid = MaturityGrid(tenors=(1, 3, 6, 9))
    vals = np.array([[1.0, 2.0, np.nan, np.nan]])
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    panel = YieldPanel(dates=("2010-01",), values=vals, mask=mask, grid=grid)
    with pytest.raises(ValueError):
        match_maturities(panel, canonical_grid(), 0.0609)


def test_prepare_chain_is_identity_on_complete_canonical_panel(tmp_path):
    rng = np.random.default_rng(4)
    factors = rng.normal(size=(6, 3)) * [1.0, 0.5, 0.3] + [3.0, -1.0, 0.5]
    vals = factors @ loading_matrix(canonical_grid()).matrix.T
    panel = make_panel(vals, grid=canonical_grid())
    path = tmp_path / "y.csv"
    save_yield_csv(panel, str(path))
    loaded = load_yield_csv(str(path), canonical_grid())
    chained = match_maturities(interpolate_missing(loaded), canonical_grid(), 0.0609)
    np.testing.assert_array_equal(chained.values, loaded.values)
    assert chained.dates == panel.dates
