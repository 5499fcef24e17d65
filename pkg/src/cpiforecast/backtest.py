"""Out-of-sample evaluation with expanding or rolling training windows.

For a target month t and horizon h the forecast origin is t - h.  The
expanding scheme trains on [training_start, t - h]; the rolling scheme on
the last 49 - h months ending at t - h.  Every forecast is produced from
a slice of data that ends at the origin, read through an accessor that
records what was read.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import DataError
from .sarimax import FittedModel, SarimaSpec, fit, forecast
from .timeseries import Month, MonthlySeries, add_months, difference_array, format_month, months_between

logger = logging.getLogger(__name__)

HORIZONS = (1, 2, 3, 6, 9, 12)
ROLLING_BASE = 49


class Scheme(str, enum.Enum):
    EXPANDING = "expanding"
    ROLLING = "rolling"


@dataclass(frozen=True)
class BacktestProtocol:
    scheme: Scheme = Scheme.EXPANDING
    training_start: Month = (2002, 1)
    span_start: Month = (2009, 1)
    span_end: Month = (2016, 11)
    horizons: tuple[int, ...] = HORIZONS
    rolling_base: int = ROLLING_BASE
    refit_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "horizons", tuple(sorted(set(int(h) for h in self.horizons))))
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be positive")
        if months_between(self.training_start, self.span_start) <= 0:
            raise ValueError("forecast span must start after the training start")
        if months_between(self.span_start, self.span_end) < 0:
            raise ValueError("forecast span is empty")
        if self.refit_stride < 1:
            raise ValueError("refit stride must be at least 1")
        if self.scheme is Scheme.ROLLING and self.rolling_base - max(self.horizons) < 2:
            raise ValueError("rolling window too short for the largest horizon")

    def targets(self) -> list[Month]:
        n = months_between(self.span_start, self.span_end) + 1
        return [add_months(self.span_start, i) for i in range(n)]

    def window(self, target: Month, h: int) -> tuple[Month, Month]:
        """First and last training month for forecasting ``target`` h ahead."""
        last = add_months(target, -h)
        if self.scheme is Scheme.EXPANDING:
            return self.training_start, last
        return add_months(last, -(self.rolling_base - h) + 1), last

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "training_start": format_month(self.training_start),
            "span": [format_month(self.span_start), format_month(self.span_end)],
            "horizons": list(self.horizons),
            "rolling_window": f"{self.rolling_base} - h months",
            "refit_stride": self.refit_stride,
        }


class Forecaster(Protocol):
    min_length: int

    def fit(self, train: MonthlySeries) -> Any: ...

    def update(self, state: Any, train: MonthlySeries) -> Any: ...

    def predict(self, state: Any, horizons: Sequence[int]) -> dict[int, float]: ...


class DataAccessor:
    """Hands out training slices and realised values, logging each read.

    ``reads`` holds (origin, last month read, purpose) tuples."""

    def __init__(self, series: MonthlySeries):
        self._series = series
        self.reads: list[tuple[Month, Month, str]] = []

    def training(self, first: Month, last: Month) -> MonthlySeries:
        self.reads.append((last, last, "train"))
        return self._series.slice(first, last)

    def actual(self, origin: Month, target: Month) -> float:
        self.reads.append((origin, target, "evaluate"))
        return self._series.value_at(target)


@dataclass
class HorizonResult:
    h: int
    origins: list[Month]
    targets: list[Month]
    forecasts: np.ndarray
    actuals: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return self.forecasts - self.actuals

    @property
    def rmse(self) -> float:
        e = self.errors
        return math.sqrt(float(e @ e) / e.size)


@dataclass
class ForecastReport:
    protocol: BacktestProtocol
    sigma0: float
    results: dict[int, HorizonResult]
    metadata: dict = field(default_factory=dict)

    def rmse(self, h: int) -> float:
        return self.results[h].rmse

    def rmse_over_sigma0(self, h: int) -> float:
        return self.results[h].rmse / self.sigma0

    def summary(self) -> list[tuple[int, float, float]]:
        return [(h, self.rmse(h), self.rmse_over_sigma0(h)) for h in sorted(self.results)]

    def export(self, directory: str | Path, prefix: str = "backtest", header_lines: Sequence[str] = ()) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        head = "".join(f"# {line}\n" for line in header_lines)
        paths = []
        for h, r in sorted(self.results.items()):
            p = directory / f"{prefix}_h{h}.csv"
            rows = [f"{format_month(o)},{f!r},{a!r},{e!r}" for o, f, a, e in zip(r.origins, r.forecasts, r.actuals, r.errors)]
            p.write_text(head + "origin,forecast,actual,error\n" + "".join(x + "\n" for x in rows))
            paths.append(p)
            p = directory / f"{prefix}_trace_h{h}.csv"
            rows = [f"{format_month(t)},{e!r}" for t, e in zip(r.targets, r.errors)]
            p.write_text(head + "month,error\n" + "".join(x + "\n" for x in rows))
            paths.append(p)
        p = directory / f"{prefix}_summary.csv"
        p.write_text(head + "h,rmse,rmse_over_sigma0\n" + "".join(f"{h},{a!r},{b!r}\n" for h, a, b in self.summary()))
        paths.append(p)
        return paths


def sigma0(series: MonthlySeries, d: int = 1, D: int = 1, season: int = 12) -> float:
    """Sample sd of the (doubly) differenced series: the baseline variation."""
    series.require_complete("baseline variation")
    w = difference_array(series.values, d, D, season)
    if w.size < 2:
        raise DataError("series too short for the baseline variation")
    return float(np.std(w, ddof=1))


# --------------------------------------------------------------------------
# Forecasters


@dataclass
class RandomWalkForecaster:
    min_length: int = 1

    def fit(self, train):
        return float(train.values[-1])

    def update(self, state, train):
        return self.fit(train)

    def predict(self, state, horizons):
        return {h: state for h in horizons}


@dataclass
class SarimaxForecaster:
    """Re-estimates an S-ARIMAX spec on each training slice.

    Regressors are regenerated over the slice; columns the slice cannot
    identify (an intervention dated after the origin, say, or a holiday
    column proportional to another after differencing) are left out of
    that fit.  With ``warm_start`` every fit starts from the
    coefficients estimated on the first training slice of the backtest.
    """

    spec: SarimaSpec
    warm_start: bool = True
    fit_options: dict = field(default_factory=dict)
    start: np.ndarray | None = None

    @property
    def min_length(self) -> int:
        return self.spec.diff_order + self.spec.n_arma + len(self.spec.mean_regressors) + 6

    def spec_for(self, train: MonthlySeries) -> SarimaSpec:
        spec = self.spec.over(train.start, len(train))
        # a regressor is dropped when the window cannot identify it: it
        # vanishes after differencing, or it lies in the span of those kept
        # (short windows can make holiday columns proportional)
        keep, cols = [], []
        for c in spec.mean_regressors:
            d = difference_array(c.values, spec.d, spec.D, spec.season)
            if not np.any(d != 0):
                continue
            if cols:
                A = np.column_stack(cols)
                resid = d - A @ np.linalg.lstsq(A, d, rcond=None)[0]
                if np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(d):
                    logger.debug("%s is not identified in %s..%s; dropped", c.name, train.start, train.end)
                    continue
            keep.append(c)
            cols.append(d)
        pulses = [c for c in spec.innovation_pulses if np.any(c.values[spec.diff_order :] != 0)]
        return SarimaSpec(spec.p, spec.d, spec.q, spec.P, spec.D, spec.Q, spec.season, tuple(keep), tuple(pulses))

    def prepare(self, train: MonthlySeries) -> None:
        if self.warm_start and self.start is None and self.spec.n_arma:
            m = fit(train, self.spec_for(train), compute_se=False, **self.fit_options)
            self.start = m.params.arma

    def fit(self, train: MonthlySeries) -> FittedModel:
        return fit(train, self.spec_for(train), compute_se=False, start=self.start, **self.fit_options)

    def update(self, state: FittedModel, train: MonthlySeries) -> FittedModel:
        # new data, same ARMA coefficients
        start = state.params.arma if state.spec.n_arma else None
        return fit(train, self.spec_for(train), compute_se=False, start=start, estimate=False, restarts=0)

    def predict(self, state: FittedModel, horizons):
        point, _ = forecast(state, max(horizons))
        return {h: float(point[h - 1]) for h in horizons}


# --------------------------------------------------------------------------
# Runner


@dataclass(frozen=True)
class _Job:
    windows: tuple[tuple[Month, Month], ...]  # consecutive training windows sharing one estimation
    horizons: tuple[tuple[int, ...], ...]


def _jobs(series: MonthlySeries, protocol: BacktestProtocol) -> list[_Job]:
    targets = protocol.targets()
    by_window: dict[tuple[Month, Month], list[int]] = {}
    for h in protocol.horizons:
        for t in targets:
            by_window.setdefault(protocol.window(t, h), []).append(h)
    windows = sorted(by_window, key=lambda w: (w[1], w[0]))
    # consecutive windows form one refit block; rolling blocks share a horizon
    blocks: list[_Job] = []
    if protocol.scheme is Scheme.EXPANDING:
        for i in range(0, len(windows), protocol.refit_stride):
            chunk = windows[i : i + protocol.refit_stride]
            blocks.append(_Job(tuple(chunk), tuple(tuple(by_window[w]) for w in chunk)))
    else:
        for h in protocol.horizons:
            ws = [w for w in windows if h in by_window[w]]
            for i in range(0, len(ws), protocol.refit_stride):
                chunk = ws[i : i + protocol.refit_stride]
                blocks.append(_Job(tuple(chunk), tuple((h,) for _ in chunk)))
    return blocks


def _check_coverage(series: MonthlySeries, protocol: BacktestProtocol, forecaster) -> None:
    first = min(protocol.window(protocol.span_start, h)[0] for h in protocol.horizons)
    if months_between(series.start, first) < 0:
        raise DataError(f"series starts after the first training month {format_month(first)}")
    if months_between(protocol.span_end, series.end) < 0:
        raise DataError(f"series ends before the forecast span end {format_month(protocol.span_end)}")
    for h in protocol.horizons:
        a, b = protocol.window(protocol.span_start, h)
        if months_between(a, b) + 1 < forecaster.min_length:
            raise DataError(f"training slice of {months_between(a, b) + 1} months is shorter than the "
                            f"forecaster minimum {forecaster.min_length}")


def _run_job(args):
    forecaster, series, job = args
    acc = DataAccessor(series)
    out = []
    state = None
    for window, hs in zip(job.windows, job.horizons):
        train = acc.training(*window)
        state = forecaster.fit(train) if state is None else forecaster.update(state, train)
        out.append((window[1], forecaster.predict(state, hs)))
    return out, acc.reads


def run(series: MonthlySeries, forecaster, protocol: BacktestProtocol, sigma0_value: float | None = None,
        workers: int | None = None, accessor_log: list | None = None) -> ForecastReport:
    """Forecast every month of the span at every horizon and collect errors."""
    _check_coverage(series, protocol, forecaster)
    jobs = _jobs(series, protocol)
    if hasattr(forecaster, "prepare"):
        first = jobs[0].windows[0]
        forecaster.prepare(series.slice(*first))
    tasks = [(forecaster, series, j) for j in jobs]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]

    acc = DataAccessor(series)
    preds: dict[tuple[int, Month], float] = {}
    for out, reads in results:
        if accessor_log is not None:
            accessor_log.extend(reads)
        for origin, fc in out:
            for h, v in fc.items():
                preds[(h, origin)] = v
    report = {}
    for h in protocol.horizons:
        origins, targets, fcs, acts = [], [], [], []
        for t in protocol.targets():
            o = add_months(t, -h)
            origins.append(o)
            targets.append(t)
            fcs.append(preds[(h, o)])
            acts.append(acc.actual(o, t))
        report[h] = HorizonResult(h, origins, targets, np.array(fcs), np.array(acts))
    if accessor_log is not None:
        accessor_log.extend(acc.reads)
    s0 = sigma0(series.slice(protocol.training_start, protocol.span_end)) if sigma0_value is None else sigma0_value
    meta = {"protocol": protocol.to_json(),
            "rmse_divisor": "number of forecasts in the span"}
    if protocol.scheme is Scheme.ROLLING:
        meta["rolling_note"] = "rolling window of 49 - h months applied to every engine"
    return ForecastReport(protocol, s0, report, meta)


def compare(a: ForecastReport, b: ForecastReport) -> dict[int, float]:
    """Per-horizon RMSE(a) / RMSE(b)."""
    if set(a.results) != set(b.results):
        raise DataError("reports cover different horizons")
    for h in a.results:
        if a.results[h].targets != b.results[h].targets:
            raise DataError(f"reports cover different forecast spans at h={h}")
    return {h: a.rmse(h) / b.rmse(h) for h in sorted(a.results)}


def export_ratios(path: str | Path, ratios: dict[int, float], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("h,ratio\n")
        for h, r in sorted(ratios.items()):
            fh.write(f"{h},{r!r}\n")
