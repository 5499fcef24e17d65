"""Spring Festival removal, classical seasonal decomposition and
seasonality forecasting.

The decomposition is the classical moving-average one: a centred 2x12
trend, calendar-month averages of the detrended series as seasonal
factors, and the remainder as irregular.  It stands in for X-13ARIMA-SEATS,
so seasonal factors will differ somewhat from official adjusted series.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .sarimax import FittedModel, SarimaSpec, fit, forecast
from .timeseries import MonthlySeries, format_month

SUBSTITUTION_NOTE = "classical 2x12 moving-average decomposition used in place of X-13ARIMA-SEATS"

CN_SEASONAL_SPEC = SarimaSpec(0, 0, 1, 0, 1, 1)
US_SEASONAL_SPEC = SarimaSpec(2, 0, 0, 2, 1, 0)


class Mode(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class Decomposition:
    mode: Mode
    raw: MonthlySeries
    sf_effect: MonthlySeries
    trend: MonthlySeries
    seasonal: MonthlySeries
    irregular: MonthlySeries
    adjusted: MonthlySeries

    def export(self, path: str | Path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in (*header_lines, SUBSTITUTION_NOTE):
                fh.write(f"# {line}\n")
            fh.write("date,raw,sf_effect,trend,seasonal,irregular,adjusted\n")
            cols = (self.raw, self.sf_effect, self.trend, self.seasonal, self.irregular, self.adjusted)
            for i in range(len(self.raw)):
                vals = ",".join(repr(float(c.values[i])) for c in cols)
                fh.write(f"{format_month(self.raw.month_at(i))},{vals}\n")


def remove_sf(series: MonthlySeries, fitted: FittedModel) -> tuple[MonthlySeries, MonthlySeries]:
    """(Z - H, H) with H the fitted Spring Festival effect."""
    if fitted.spec.sf_window is None:
        raise DataError("model has no Spring Festival regressors")
    if series.start != fitted.series.start or len(series) != len(fitted.series):
        raise DataError("model was not fitted on this series")
    H = fitted.sf_effect()
    return series.with_values(series.values - H), series.with_values(H, name="sf_effect")


def centred_trend(x: np.ndarray, period: int = 12) -> np.ndarray:
    """2 x period centred moving average; the first and last period/2
    values repeat the nearest computable one."""
    half = period // 2
    w = np.full(period + 1, 1.0 / period)
    w[0] = w[-1] = 0.5 / period
    inner = np.convolve(x, w, mode="valid")
    return np.concatenate([np.full(half, inner[0]), inner, np.full(half, inner[-1])])


def decompose(series: MonthlySeries, mode: Mode | str = Mode.ADDITIVE, sf_effect: MonthlySeries | None = None,
              raw: MonthlySeries | None = None, period: int = 12) -> Decomposition:
    """Classical decomposition of a (Spring Festival adjusted) series.

    Seasonal factors are calendar-month means of the detrended values over
    the months where the centred average exists, normalised to sum to zero
    (additive) or average one (multiplicative) across the year.
    """
    mode = Mode(mode)
    series.require_complete("seasonal decomposition")
    x = series.values
    n = x.size
    if n < 3 * period:
        raise DataError(f"decomposition needs at least {3 * period} months, got {n}")
    if mode is Mode.MULTIPLICATIVE and np.any(x <= 0):
        raise DataError("multiplicative decomposition needs positive values")
    trend = centred_trend(x, period)
    half = period // 2
    detr = x - trend if mode is Mode.ADDITIVE else x / trend
    cal = (np.arange(n) + series.start[1] - 1) % period
    interior = np.zeros(n, dtype=bool)
    interior[half : n - half] = True
    factors = np.array([detr[(cal == m) & interior].mean() for m in range(period)])
    if mode is Mode.ADDITIVE:
        factors -= factors.mean()
    else:
        factors /= factors.mean()
    seasonal = factors[cal]
    if mode is Mode.ADDITIVE:
        irregular = x - trend - seasonal
        adjusted_tilde = x - seasonal
    else:
        irregular = x / (trend * seasonal)
        adjusted_tilde = x / seasonal
    H = sf_effect if sf_effect is not None else series.with_values(np.zeros(n))
    raw = raw if raw is not None else series.with_values(x + H.values)
    return Decomposition(mode, raw, H, series.with_values(trend, name="trend"),
                         series.with_values(seasonal, name="seasonal"),
                         series.with_values(irregular, name="irregular"),
                         series.with_values(adjusted_tilde, name="adjusted"))


def seasonal_adjust(raw: MonthlySeries, fitted: FittedModel | None = None,
                    mode: Mode | str = Mode.ADDITIVE) -> Decomposition:
    """Remove the Spring Festival effect (when a model is given) and the
    seasonal component: saZ = Z - H - S, or (Z - H) / S."""
    if fitted is not None:
        tilde, H = remove_sf(raw, fitted)
    else:
        tilde, H = raw, raw.with_values(np.zeros(len(raw)))
    return decompose(tilde, mode, H, raw)


def seasonality_from_adjusted(raw: MonthlySeries, adjusted: MonthlySeries) -> MonthlySeries:
    """S_t = CPI_t / saCPI_t when an official adjusted series is available."""
    if raw.start != adjusted.start or len(raw) != len(adjusted):
        raise DataError("raw and adjusted series are not aligned")
    if np.any(adjusted.values <= 0):
        raise DataError("adjusted series must be positive")
    return raw.with_values(raw.values / adjusted.values, name="seasonal")


def forecast_seasonality(S: MonthlySeries, h: int, spec: SarimaSpec = CN_SEASONAL_SPEC,
                         log: bool = False, **fit_kw) -> np.ndarray:
    """h-step forecasts of seasonal factors from an S-ARIMA model, fitted to
    the levels or (``log=True``) to log S with the forecasts exponentiated.

    A series that is exactly periodic has an identically zero seasonal
    difference, which carries no likelihood information; its forecast is
    the periodic continuation, which is also the model forecast under zero
    MA coefficients.
    """
    if h < 1:
        raise ValueError("forecast horizon must be at least 1")
    x = np.log(S.values) if log else S.values
    if log and np.any(S.values <= 0):
        raise DataError("log seasonality needs positive factors")
    s = spec.season
    if spec.D and len(x) > s and np.allclose(x[s:], x[:-s], rtol=0, atol=1e-12 * (1 + np.abs(x).max())):
        out = np.array([x[len(x) - s + (j % s)] for j in range(h)])
    else:
        model = fit(S.with_values(x), spec, compute_se=False, **fit_kw)
        out, _ = forecast(model, h)
    return np.exp(out) if log else out
