"""Regenerate the bundled synthetic fixture in src/cpiforecast/data.

The CPI-like series is a (1,1,0)x(0,1,1)12 process with Spring Festival
effects (window (4,0,12)) and one additive outlier in 2008-02, placed at
a level near 100 with a drift of 0.15 a month.  The covariate panel holds
eight positive series driven by a common factor tied to the target's
monthly changes, with a few missing cells at the start.
"""

from pathlib import Path

import numpy as np

from cpiforecast.calendar import HolidayWindow, intervention_column, sf_regressors
from cpiforecast.sarimax import SarimaParams, SarimaSpec, simulate
from cpiforecast.timeseries import write_matrix_csv, write_series_csv

START = (2002, 1)
T = 179  # 2002-01 .. 2016-11
OUT = Path(__file__).resolve().parents[1] / "src" / "cpiforecast" / "data"


def main() -> None:
    sf = sf_regressors(START, T, HolidayWindow(4, 0, 12))
    ao = intervention_column(START, T, "AO", (2008, 2))
    spec = SarimaSpec(1, 1, 0, 0, 1, 1, mean_regressors=(sf[0], sf[2], ao))
    prm = SarimaParams([0.35], [], [], [0.6], beta=[1.2, -0.6, 1.5], sigma2=0.25)
    z = simulate(spec, prm, T, 20170105, start=START)
    # a linear trend is annihilated by the differencing, so swapping the
    # simulated drift for a gentle one leaves the model unchanged
    t = np.arange(T)
    x = z.values - np.polyval(np.polyfit(t, z.values, 1), t)
    cpi = z.with_values(np.round(100.0 + 0.15 * t + x - x[0], 4), name="cpi")
    write_series_csv(OUT / "synthetic_cpi.csv", cpi, ["synthetic fixture, see scripts/make_fixture.py"])

    rng = np.random.default_rng(7)
    dz = np.r_[0.0, np.diff(cpi.values)]
    factor = np.convolve(dz, np.ones(3) / 3, mode="same") + 0.1 * rng.standard_normal(T)
    names = [f"cov{i + 1}" for i in range(8)]
    load = rng.uniform(0.3, 1.0, 8) * rng.choice([-1.0, 1.0], 8)
    growth = 0.01 * np.outer(factor, load) + 0.004 * rng.standard_normal((T, 8)) + 0.002
    levels = 50.0 * np.exp(np.cumsum(growth, axis=0))
    levels[:4, 6] = np.nan
    levels[:2, 7] = np.nan
    write_matrix_csv(OUT / "synthetic_panel.csv", START, names, np.round(levels, 6),
                     ["synthetic fixture, see scripts/make_fixture.py"])


if __name__ == "__main__":
    main()
