"""Regenerate the bundled sample data under data/.

Produces two correlated synthetic yield panels (a complete reference
market on the canonical grid and a response market missing two tenor
columns plus a few scattered cells) and a matching money market /
exchange rate series for the bond ladder.  Everything is seeded, so
rerunning this script reproduces the repository files byte for byte.
"""

import argparse
from pathlib import Path

import numpy as np

from dnsfr.market_data import MaturityGrid, canonical_grid, shift_month
from dnsfr.nelson_siegel import loading_matrix

START = "2010-01"
T_LEN = 84  # 2010-01 .. 2016-12
SEED = 20170101

RESPONSE_TENORS = (1, 3, 6, 12, 24, 36, 60, 120, 240, 360)  # drops 9 and 84


def factor_paths(rng, t_len, level0, slope0, curve0, couple=None):
    """AR(1) level/slope/curvature paths, optionally pulled toward another set."""
    phi = np.array([0.97, 0.94, 0.90])
    scale = np.array([0.10, 0.08, 0.06])
    mean = np.array([level0, slope0, curve0])
    out = np.empty((t_len, 3))
    state = mean.copy()
    for t in range(t_len):
        state = mean + phi * (state - mean) + scale * rng.standard_normal(3)
        if couple is not None:
            state = 0.85 * state + 0.15 * couple[t]
        out[t] = state
    return out


def write_panel(path, dates, tenors, values, holes):
    lines = ["date," + ",".join(str(t) for t in tenors)]
    for i, date in enumerate(dates):
        cells = [date]
        for j in range(len(tenors)):
            cells.append("" if (i, j) in holes else f"{values[i, j]:.4f}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(SEED)
    dates = tuple(shift_month(START, k) for k in range(T_LEN))

    ref_factors = factor_paths(rng, T_LEN, level0=3.6, slope0=-1.8, curve0=0.6)
    resp_factors = factor_paths(rng, T_LEN, level0=3.0, slope0=-1.4, curve0=0.4,
                                couple=ref_factors)

    ref_grid = canonical_grid()
    ref_lam = loading_matrix(ref_grid).matrix
    ref_vals = ref_factors @ ref_lam.T + 0.02 * rng.standard_normal((T_LEN, 12))
    ref_vals = np.clip(ref_vals, 0.8, 6.0)

    resp_grid = MaturityGrid(tenors=RESPONSE_TENORS)
    resp_lam = loading_matrix(resp_grid).matrix
    resp_vals = resp_factors @ resp_lam.T + 0.02 * rng.standard_normal((T_LEN, 10))
    resp_vals = np.clip(resp_vals, 0.8, 6.0)

    # a few scattered missing cells, never in the final month
    ref_holes = {(int(i), int(j)) for i, j in
                 zip(rng.integers(0, T_LEN - 1, size=6), rng.integers(0, 12, size=6))}
    resp_holes = {(int(i), int(j)) for i, j in
                  zip(rng.integers(0, T_LEN - 1, size=6), rng.integers(0, 10, size=6))}

    write_panel(out / "us_sample.csv", dates,
                [int(t) for t in ref_grid.tenors], ref_vals, ref_holes)
    write_panel(out / "uk_sample.csv", dates,
                [int(t) for t in resp_grid.tenors], resp_vals, resp_holes)

    # ladder market series: last in-sample month plus twelve forecast months
    market_dates = [dates[-1]] + [shift_month(dates[-1], k + 1) for k in range(12)]
    effr = 0.60 + 0.05 * np.arange(13) + 0.02 * rng.standard_normal(13)
    fx = 1.25 * np.exp(np.cumsum(0.004 * rng.standard_normal(13)))
    lines = ["date,effr_percent,fx"]
    for k, date in enumerate(market_dates):
        rate = "" if k == 0 else f"{effr[k]:.4f}"
        lines.append(f"{date},{rate},{fx[k]:.4f}")
    (out / "market_sample.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    for name in ("us_sample.csv", "uk_sample.csv", "market_sample.csv"):
        print(out / name)


if __name__ == "__main__":
    main()
