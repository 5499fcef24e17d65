"""Monthly series container, differencing, stationarity diagnostics and
the covariate transforms used before factor extraction."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

Month = tuple[int, int]


def month_index(year: int, month: int) -> int:
    """Absolute month counter (year * 12 + month - 1)."""
    if not 1 <= month <= 12:
        raise DataError(f"month out of range: {month}")
    return year * 12 + month - 1


def month_from_index(idx: int) -> Month:
    return divmod(idx, 12)[0], idx % 12 + 1


def parse_month(text: str) -> Month:
    text = text.strip()
    try:
        year, month = text.split("-")[:2]
        out = int(year), int(month)
    except ValueError as exc:
        raise DataError(f"bad month {text!r}; expected YYYY-MM") from exc
    month_index(*out)
    return out


def format_month(m: Month) -> str:
    return f"{m[0]:04d}-{m[1]:02d}"


def add_months(m: Month, k: int) -> Month:
    return month_from_index(month_index(*m) + k)


def months_between(a: Month, b: Month) -> int:
    """Number of months from ``a`` to ``b`` (b - a)."""
    return month_index(*b) - month_index(*a)


@dataclass(frozen=True)
class MonthlySeries:
    """Contiguous monthly observations; NaN marks a missing value.

    ``start`` is ``(year, month)`` of the first observation.
    """

    start: Month
    values: np.ndarray
    name: str = field(default="value", compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.size < 1:
            raise DataError("a MonthlySeries needs at least one observation")
        if np.isinf(vals).any():
            raise DataError("series contains infinite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        month_index(*self.start)

    def __len__(self) -> int:
        return self.values.size

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def has_missing(self) -> bool:
        return bool(self.missing.any())

    @property
    def end(self) -> Month:
        return add_months(self.start, len(self) - 1)

    def month_at(self, i: int) -> Month:
        return add_months(self.start, i)

    def position(self, m: Month) -> int:
        """Index of month ``m`` (may fall outside the series)."""
        return months_between(self.start, m)

    def months(self) -> list[Month]:
        return [self.month_at(i) for i in range(len(self))]

    def calendar_months(self) -> np.ndarray:
        """Calendar month number (1..12) of every entry."""
        first = self.start[1] - 1
        return (np.arange(len(self)) + first) % 12 + 1

    def value_at(self, m: Month) -> float:
        i = self.position(m)
        if not 0 <= i < len(self):
            raise DataError(f"{format_month(m)} outside series")
        return float(self.values[i])

    def slice(self, first: Month | None = None, last: Month | None = None) -> "MonthlySeries":
        """Sub-series between two months, both inclusive."""
        i0 = 0 if first is None else self.position(first)
        i1 = len(self) - 1 if last is None else self.position(last)
        if i0 < 0 or i1 >= len(self) or i1 < i0:
            raise DataError(
                f"slice {first}..{last} outside series {format_month(self.start)}..{format_month(self.end)}"
            )
        return MonthlySeries(self.month_at(i0), self.values[i0 : i1 + 1], self.name)

    def with_values(self, values, start: Month | None = None, name: str | None = None) -> "MonthlySeries":
        return MonthlySeries(self.start if start is None else start, values, self.name if name is None else name)

    def require_complete(self, what: str = "operation") -> None:
        if self.has_missing:
            bad = format_month(self.month_at(int(np.argmax(self.missing))))
            raise DataError(f"{what} refuses missing values (first at {bad})")


# --------------------------------------------------------------------------
# Differencing


def difference_polynomial(d: int, D: int, season: int = 12) -> np.ndarray:
    """Coefficients (lag 0 first) of (1-B)^d (1-B^season)^D."""
    if d < 0 or D < 0:
        raise ValueError("difference orders must be nonnegative")
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    seasonal = np.zeros(season + 1)
    seasonal[0], seasonal[-1] = 1.0, -1.0
    for _ in range(D):
        poly = np.convolve(poly, seasonal)
    return poly


def difference_array(x: np.ndarray, d: int, D: int, season: int = 12) -> np.ndarray:
    """Apply the differencing filter along axis 0, dropping the first d + D*season rows."""
    poly = difference_polynomial(d, D, season)
    order = poly.size - 1
    x = np.asarray(x, dtype=float)
    if x.shape[0] <= order:
        raise DataError(f"series of length {x.shape[0]} too short for differencing of order {order}")
    out = np.zeros((x.shape[0] - order,) + x.shape[1:])
    for k, c in enumerate(poly):
        if c != 0.0:
            out += c * x[order - k : x.shape[0] - k]
    return out


def difference(s: MonthlySeries, d: int = 1, D: int = 1, season: int = 12) -> MonthlySeries:
    """(1-B)^d (1-B^season)^D s, starting d + D*season months later."""
    s.require_complete("differencing")
    order = d + D * season
    if len(s) <= order:
        raise DataError(f"series of length {len(s)} too short for differencing of order {order}")
    return MonthlySeries(add_months(s.start, order), difference_array(s.values, d, D, season), s.name)


# --------------------------------------------------------------------------
# Correlation diagnostics


def acf_pacf(s: MonthlySeries | np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample ACF and PACF at lags 0..max_lag plus the 1.96/sqrt(T) band.

    Index 0 of both arrays is 1 by definition.
    """
    if isinstance(s, MonthlySeries):
        s.require_complete("acf")
        x = s.values
    else:
        x = np.asarray(s, dtype=float)
    T = x.size
    if not 1 <= max_lag < T:
        raise ValueError(f"max_lag must be in [1, {T - 1}], got {max_lag}")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise DataError("acf of a constant series is undefined")
    acf = np.array([1.0] + [float(xc[k:] @ xc[:-k]) / denom for k in range(1, max_lag + 1)])
    return acf, durbin_levinson(acf), 1.96 / math.sqrt(T)


def durbin_levinson(acf: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from autocorrelations (lag 0 included)."""
    max_lag = acf.size - 1
    pacf = np.ones(max_lag + 1)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        a = (acf[k] - phi @ acf[k - 1 : 0 : -1]) / v if k > 1 else acf[1]
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
        pacf[k] = a
    return pacf


# --------------------------------------------------------------------------
# Augmented Dickey-Fuller

# Fuller's tabulated quantiles of the Dickey-Fuller t statistic (rows: sample
# size, columns: lower-tail probabilities).
_ADF_PROBS = np.array([0.01, 0.025, 0.05, 0.10, 0.90, 0.95, 0.975, 0.99])
_ADF_SIZES = np.array([25.0, 50.0, 100.0, 250.0, 500.0, 100000.0])
_ADF_TABLES = {
    "c": np.array([
        [-3.75, -3.33, -3.00, -2.63, -0.37, 0.00, 0.34, 0.72],
        [-3.58, -3.22, -2.93, -2.60, -0.40, -0.03, 0.29, 0.66],
        [-3.51, -3.17, -2.89, -2.58, -0.42, -0.05, 0.26, 0.63],
        [-3.46, -3.14, -2.88, -2.57, -0.42, -0.06, 0.24, 0.62],
        [-3.44, -3.13, -2.87, -2.57, -0.43, -0.07, 0.24, 0.61],
        [-3.43, -3.12, -2.86, -2.57, -0.44, -0.07, 0.23, 0.60],
    ]),
    "ct": np.array([
        [-4.38, -3.95, -3.60, -3.24, -1.14, -0.80, -0.50, -0.15],
        [-4.15, -3.80, -3.50, -3.18, -1.19, -0.87, -0.58, -0.24],
        [-4.04, -3.73, -3.45, -3.15, -1.22, -0.90, -0.62, -0.28],
        [-3.99, -3.69, -3.43, -3.13, -1.23, -0.92, -0.64, -0.31],
        [-3.98, -3.68, -3.42, -3.13, -1.24, -0.93, -0.65, -0.32],
        [-3.96, -3.66, -3.41, -3.12, -1.25, -0.94, -0.66, -0.33],
    ]),
}


@dataclass(frozen=True)
class AdfResult:
    stat: float
    p_value: float
    lags: int
    nobs: int
    regression: str


def schwert_lags(T: int) -> int:
    return int(math.floor(12.0 * (T / 100.0) ** 0.25))


def adf_pvalue(stat: float, nobs: int, regression: str = "c") -> float:
    """Interpolated p-value, clipped to the table range [0.01, 0.99]."""
    table = _ADF_TABLES[regression]
    quantiles = np.array([np.interp(nobs, _ADF_SIZES, table[:, j]) for j in range(table.shape[1])])
    return float(np.interp(stat, quantiles, _ADF_PROBS))


def _adf_design(y: np.ndarray, k: int, regression: str, drop: int) -> tuple[np.ndarray, np.ndarray]:
    """Regressors and target of the augmented regression with k lagged
    differences, skipping the first ``drop`` usable rows."""
    T = y.size
    dy = np.diff(y)
    first = max(k, drop)
    n = dy.size - first
    cols = [np.ones(n), y[first : T - 1]]
    if regression == "ct":
        cols.append(np.arange(first + 1, T, dtype=float))
    for j in range(1, k + 1):
        cols.append(dy[first - j : dy.size - j])
    return np.column_stack(cols), dy[first:]


def _ols(X: np.ndarray, target: np.ndarray):
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    return beta, float(resid @ resid)


def adf_test(s: MonthlySeries | np.ndarray, lags: int | str = "auto", regression: str = "c") -> AdfResult:
    """Augmented Dickey-Fuller test of a unit root.

    ``lags`` is an integer (fixed order), ``"schwert"`` (fixed at
    floor(12 (T/100)^(1/4))) or ``"auto"``: the Schwert value bounds the
    order, which is then chosen by AIC on a common sample.
    ``regression`` is "c" (constant) or "ct" (constant and linear trend).
    Small p-values favour stationarity.
    """
    if isinstance(s, MonthlySeries):
        s.require_complete("ADF test")
        y = s.values
    else:
        y = np.asarray(s, dtype=float)
    if regression not in _ADF_TABLES:
        raise ValueError(f"regression must be one of {sorted(_ADF_TABLES)}")
    T = y.size
    if np.ptp(y) == 0.0:
        raise DataError("ADF test on a constant series is degenerate")
    if lags in ("auto", "schwert"):
        k = schwert_lags(T)
    else:
        k = int(lags)
    if k < 0:
        raise ValueError("lag order must be nonnegative")
    n_params = 2 + k + (regression == "ct")
    if T - 1 - k < n_params + 5:
        raise DataError(f"series of length {T} too short for ADF with {k} lags")
    if lags == "auto":
        best = None
        for j in range(k + 1):
            X, target = _adf_design(y, j, regression, drop=k)
            _, ssr = _ols(X, target)
            aic = target.size * math.log(ssr / target.size) + 2 * X.shape[1]
            if best is None or aic < best[0]:
                best = (aic, j)
        k = best[1]
    X, target = _adf_design(y, k, regression, drop=0)
    n = target.size
    beta, ssr = _ols(X, target)
    cov = ssr / (n - X.shape[1]) * np.linalg.inv(X.T @ X)
    stat = float(beta[1] / math.sqrt(cov[1, 1]))
    return AdfResult(stat, adf_pvalue(stat, n, regression), k, n, regression)


# --------------------------------------------------------------------------
# Covariate transforms


class TransformCode(enum.IntEnum):
    DIFF = 1
    DIFF_LOG = 2
    DIFF2_LOG = 3


def apply_transform(s: MonthlySeries, code: TransformCode | int) -> MonthlySeries:
    """Code 1: (1-B)Z; code 2: (1-B) log Z; code 3: (1-B)^2 log Z.

    Missing inputs propagate to every output they touch.
    """
    code = TransformCode(code)
    x = s.values
    if code is not TransformCode.DIFF:
        observed = x[~np.isnan(x)]
        if (observed <= 0).any():
            raise DataError(f"{s.name}: log transform needs strictly positive values")
        x = np.log(x)
    order = 2 if code is TransformCode.DIFF2_LOG else 1
    if len(s) <= order:
        raise DataError(f"{s.name}: too short for transform code {int(code)}")
    for _ in range(order):
        x = x[1:] - x[:-1]
    return MonthlySeries(add_months(s.start, order), x, s.name)


@dataclass(frozen=True)
class Standardized:
    Z: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    def __iter__(self):
        return iter((self.Z, self.means, self.sds))

    def invert(self, Z: np.ndarray | None = None) -> np.ndarray:
        return (self.Z if Z is None else Z) * self.sds + self.means


def standardize(X: np.ndarray) -> Standardized:
    """Column-wise zero mean, unit sd (divisor n-1) over observed cells."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    observed = ~np.isnan(X)
    counts = observed.sum(axis=0)
    if (counts < 2).any():
        raise DataError(f"columns {np.flatnonzero(counts < 2).tolist()} have fewer than 2 observed cells")
    means = np.nanmean(X, axis=0)
    sds = np.nanstd(X, axis=0, ddof=1)
    if (sds == 0).any():
        raise DataError(f"zero-variance columns: {np.flatnonzero(sds == 0).tolist()}")
    return Standardized((X - means) / sds, means, sds)


# --------------------------------------------------------------------------
# CSV formats


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [
            r for r in csv.reader(fh)
            if r and any(c.strip() for c in r) and not r[0].lstrip().startswith("#")
        ]
    if not rows:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def _parse_value(text: str, path, line: int, col: str) -> float:
    text = text.strip()
    if text == "" or text.upper() in {"NA", "NAN"}:
        return math.nan
    try:
        v = float(text)
    except ValueError as exc:
        raise DataError(f"{path}: row {line}, column {col!r}: not a number: {text!r}") from exc
    if not math.isfinite(v):
        raise DataError(f"{path}: row {line}, column {col!r}: non-finite value")
    return v


def _check_contiguous(months: Sequence[Month], path) -> None:
    for i in range(1, len(months)):
        if months_between(months[i - 1], months[i]) != 1:
            raise DataError(
                f"{path}: row {i + 2}: {format_month(months[i])} does not follow {format_month(months[i - 1])}"
            )


def read_matrix_csv(path: str | Path) -> tuple[Month, list[str], np.ndarray]:
    """Read a ``date,<col1>,<col2>,...`` file; returns (start, names, T x n array)."""
    path = Path(path)
    header, rows = _read_rows(path)
    if header[0].lower() != "date" or len(header) < 2:
        raise DataError(f"{path}: header must start with 'date' followed by value columns")
    names = header[1:]
    months, data = [], []
    for line, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        try:
            months.append(parse_month(row[0]))
        except DataError as exc:
            raise DataError(f"{path}: row {line}: {exc}") from exc
        data.append([_parse_value(c, path, line, n) for c, n in zip(row[1:], names)])
    if not months:
        raise DataError(f"{path}: no data rows")
    _check_contiguous(months, path)
    return months[0], names, np.array(data, dtype=float)


def read_series_csv(path: str | Path) -> MonthlySeries:
    start, names, data = read_matrix_csv(path)
    if len(names) != 1:
        raise DataError(f"{path}: expected header 'date,value'")
    return MonthlySeries(start, data[:, 0], names[0])


def write_matrix_csv(path: str | Path, start: Month, names: Iterable[str], data: np.ndarray,
                     header_lines: Sequence[str] = ()) -> None:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *names])
        for i, row in enumerate(data):
            w.writerow([format_month(add_months(start, i))] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def write_series_csv(path: str | Path, s: MonthlySeries, header_lines: Sequence[str] = ()) -> None:
    write_matrix_csv(path, s.start, [s.name], s.values, header_lines)
