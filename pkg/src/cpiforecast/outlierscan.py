"""Chen-Liu outlier detection against a fitted S-ARIMAX model.

With Psi(B) the full MA representation of the model (differencing
included) and pi(B) = 1 / Psi(B), the filtered residuals

    e_t = pi(B) (Z_t - regression effects)

satisfy e_t = omega x_t + a_t near an outlier at t1, where x_t is pi(B)
applied to the outlier shape (AO: impulse, LS: step, TC: geometric decay)
or x_t = P_t for an innovation outlier.  Each candidate month and type is
tested with the t-ratio of the least-squares omega.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .calendar import RegressorKind, intervention_column
from .errors import DataError, NumericalError
from .sarimax import FittedModel, SarimaSpec, arma_polynomials, fit
from .timeseries import Month, MonthlySeries, add_months, difference_polynomial, format_month

logger = logging.getLogger(__name__)

DEFAULT_C = 3.5
TC_DELTA = 0.8
MAX_ROUNDS = 10
MAD_SCALE = 1.4826


class OutlierKind(str, enum.Enum):
    AO = "AO"
    IO = "IO"
    LS = "LS"
    TC = "TC"


@dataclass(frozen=True)
class OutlierFinding:
    month: Month
    kind: OutlierKind
    omega: float
    t_stat: float

    def regressor(self, start: Month, length: int):
        return intervention_column(start, length, RegressorKind(self.kind.value), self.month,
                                   TC_DELTA if self.kind is OutlierKind.TC else 0.8)


def _templates(ar_poly: np.ndarray, ma_poly: np.ndarray, dpoly: np.ndarray, n: int) -> dict:
    """Response of each outlier shape on the differenced axis, for an
    outlier at differenced index 0."""
    impulse = np.zeros(n)
    impulse[0] = 1.0

    def pi_of(shape):
        # difference the original-axis shape, then apply the ARMA inverse
        d = np.convolve(shape, dpoly)[:n]
        return signal.lfilter(ar_poly, ma_poly, d)

    k = np.arange(n)
    out = {
        OutlierKind.AO: pi_of(impulse),
        OutlierKind.IO: impulse,
        OutlierKind.LS: pi_of(np.ones(n)),
        OutlierKind.TC: pi_of(TC_DELTA**k),
    }
    if not all(np.all(np.isfinite(v)) and np.abs(v).max() < 1e12 for v in out.values()):
        raise NumericalError("pi-weight filter exploded; is the MA part invertible?")
    return out


def filtered_residuals(model: FittedModel) -> np.ndarray:
    """pi(B) applied to the regressor-adjusted series with IO effects
    removed, zero before the differenced sample."""
    spec, prm = model.spec, model.params
    z = model.series.values - model.regression_effect()
    dpoly = difference_polynomial(spec.d, spec.D, spec.season)
    order = spec.diff_order
    w = np.convolve(z, dpoly)[order : len(z)]
    ar_poly, ma_poly = arma_polynomials(prm, spec.season)
    e = signal.lfilter(ar_poly, ma_poly, w)
    for om, col in zip(prm.omega, spec.innovation_pulses):
        e = e - om * col.values[order:]
    if not np.all(np.isfinite(e)):
        raise NumericalError("filtered residuals are not finite")
    return e


def _scan_type(e: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """omega and t for an outlier at each differenced index."""
    n = e.size
    omega = np.zeros(n)
    t = np.zeros(n)
    for k in range(n):
        x = g[: n - k]
        sxx = float(x @ x)
        seg = e[k:]
        om = float(seg @ x) / sxx
        resid = e.copy()
        resid[k:] -= om * x
        mad = np.median(np.abs(resid - np.median(resid)))
        scale = MAD_SCALE * mad
        omega[k] = om
        t[k] = om * np.sqrt(sxx) / scale if scale > 0 else np.inf * np.sign(om)
    return omega, t


def scan(model: FittedModel) -> tuple[dict, dict]:
    """omega and t-statistics of every type at every differenced month."""
    spec = model.spec
    e = filtered_residuals(model)
    ar_poly, ma_poly = arma_polynomials(model.params, spec.season)
    dpoly = difference_polynomial(spec.d, spec.D, spec.season)
    g = _templates(ar_poly, ma_poly, dpoly, e.size)
    omegas, ts = {}, {}
    for kind, gk in g.items():
        omegas[kind], ts[kind] = _scan_type(e, gk)
    return omegas, ts


def detect(series: MonthlySeries, model: FittedModel, C: float = DEFAULT_C) -> list[OutlierFinding]:
    """Months whose strongest outlier type has |t| >= C, by decreasing |t|."""
    if not C > 0:
        raise ValueError("critical value C must be positive")
    if model.residuals is None or model.residuals.size == 0:
        raise DataError("model carries no residuals")
    if series.start != model.series.start or len(series) != len(model.series):
        raise DataError("model was not fitted on this series")
    if not np.array_equal(series.values, model.series.values):
        raise DataError("model was not fitted on this series")
    omegas, ts = scan(model)
    kinds = list(ts)
    T = np.abs(np.vstack([ts[k] for k in kinds]))
    best = np.argmax(T, axis=0)  # first max wins: AO before IO before LS before TC
    order = model.spec.diff_order
    found = []
    for j in range(T.shape[1]):
        kind = kinds[best[j]]
        if abs(ts[kind][j]) >= C:
            found.append(OutlierFinding(series.month_at(order + j), kind, float(omegas[kind][j]), float(ts[kind][j])))
    found.sort(key=lambda f: (-abs(f.t_stat), f.month))
    return found


@dataclass
class IterativeDetection:
    model: FittedModel
    findings: list[OutlierFinding]
    rounds: int
    complete: bool

    def __iter__(self):
        return iter((self.model, self.findings))


def detect_iterative(series: MonthlySeries, spec: SarimaSpec, C: float = DEFAULT_C,
                     max_rounds: int = MAX_ROUNDS, **fit_kw) -> IterativeDetection:
    """Alternate detection and refitting.  Each round adds the strongest
    new outlier to the model (AO/LS/TC as a mean regressor, IO as an
    innovation pulse); weaker ones wait for the refit, since echoes of a
    large outlier through contaminated estimates vanish once it is modelled.
    """
    model = fit(series, spec, **fit_kw)
    findings: list[OutlierFinding] = []
    seen: set[Month] = set()
    for rnd in range(1, max_rounds + 1):
        new = [f for f in detect(series, model, C) if f.month not in seen]
        if not new:
            return IterativeDetection(model, findings, rnd, True)
        f = new[0]
        col = f.regressor(series.start, len(series))
        seen.add(f.month)
        findings.append(f)
        spec = spec.with_regressors(*(((), (col,)) if col.innovation_side else ((col,), ())))
        start = np.concatenate([model.ar, model.sar, model.ma, model.sma])
        model = fit(series, spec, start=start, **fit_kw)
    logger.warning("outlier iteration still finding new outliers after %d rounds", max_rounds)
    return IterativeDetection(model, findings, max_rounds, False)


@dataclass(frozen=True)
class OutlierCensus:
    start: Month
    counts: np.ndarray  # models reporting an outlier, per month
    n_models: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def share(self) -> dict:
        """Fractions of all reported outliers in January, February and other months."""
        months = np.array([(self.start[1] - 1 + i) % 12 + 1 for i in range(self.counts.size)])
        tot = self.total
        if tot == 0:
            return {"jan": 0.0, "feb": 0.0, "other": 0.0}
        jan = int(self.counts[months == 1].sum())
        feb = int(self.counts[months == 2].sum())
        return {"jan": jan / tot, "feb": feb / tot, "other": (tot - jan - feb) / tot}


def _detect_job(args):
    series, model, C = args
    return detect(series, model, C)


def census(series: MonthlySeries, models: Sequence[FittedModel], C: float = DEFAULT_C,
           workers: int | None = None) -> OutlierCensus:
    if not models:
        raise ValueError("census needs at least one model")
    jobs = [(series, m, C) for m in models]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_detect_job, jobs))
    else:
        results = [_detect_job(j) for j in jobs]
    counts = np.zeros(len(series), dtype=int)
    for found in results:
        for month in {f.month for f in found}:
            counts[series.position(month)] += 1
    return OutlierCensus(series.start, counts, len(models))


def export_findings(path: str | Path, findings: Iterable[OutlierFinding], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("date,type,omega,t_stat\n")
        for f in findings:
            fh.write(f"{format_month(f.month)},{f.kind.value},{f.omega!r},{f.t_stat!r}\n")


def export_census(path: str | Path, c: OutlierCensus, header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("date,count\n")
        for i, n in enumerate(c.counts):
            fh.write(f"{format_month(add_months(c.start, i))},{int(n)}\n")


def type_counts(findings: Iterable[OutlierFinding]) -> Counter:
    return Counter(f.kind for f in findings)
