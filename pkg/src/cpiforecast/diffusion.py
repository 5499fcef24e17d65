"""Diffusion-index forecasting: principal-component factors from a
covariate panel (with EM for missing cells), the h-step inflation target,
the BIC-tuned direct forecasting regression and CPI reconstruction.

Factor normalisation (Stock-Watson): with Z = U D V' the SVD of the
standardised T x n panel, loadings are sqrt(n) V_r (so Lambda'Lambda / n
= I) and factors F = Z V_r / sqrt(n), giving Z ~ F Lambda'.  Each loading
column's largest-magnitude entry is made positive.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .sarimax import SarimaSpec, fit
from .seasadj import CN_SEASONAL_SPEC, US_SEASONAL_SPEC, forecast_seasonality, seasonal_adjust, seasonality_from_adjusted
from .timeseries import Month, MonthlySeries, TransformCode, add_months, apply_transform, month_index, standardize

logger = logging.getLogger(__name__)

NORMALIZATION = "Stock-Watson: loadings = sqrt(n) * eigenvectors, factors = Z eigenvectors / sqrt(n)"
EM_TOL = 1e-6
EM_MAX_ITER = 200


@dataclass(frozen=True)
class FactorModel:
    loadings: np.ndarray  # n x r
    factors: np.ndarray  # T x r
    eigenvalues: np.ndarray  # all eigenvalues of the sample covariance, descending
    means: np.ndarray
    sds: np.ndarray
    r: int
    normalization: str = NORMALIZATION

    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T

    def variance_share(self) -> np.ndarray:
        return self.eigenvalues[: self.r] / self.eigenvalues.sum()


def pca_factors(Z: np.ndarray, r: int, means: np.ndarray | None = None, sds: np.ndarray | None = None) -> FactorModel:
    """Leading r principal-component factors of a complete, standardised
    T x n matrix (columns with mean zero)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError("panel must be a matrix")
    if np.isnan(Z).any():
        raise DataError("pca_factors needs a complete matrix; use em_impute for missing cells")
    T, n = Z.shape
    if not 1 <= r <= min(n, T):
        raise ValueError(f"r must lie in 1..{min(n, T)}")
    # Z is standardised, so Z'Z / (T - 1) is its sample covariance
    U, d, Vt = np.linalg.svd(Z, full_matrices=False)
    eig = d**2 / (T - 1)
    rank = int(np.sum(d > d[0] * max(T, n) * np.finfo(float).eps)) if d[0] > 0 else 0
    if rank < r:
        logger.warning("panel rank %d below requested %d factors; truncating", rank, r)
        r = max(rank, 1)
    V = Vt[:r].T
    signs = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(r)])
    V = V * signs
    loadings = math.sqrt(n) * V
    factors = Z @ V / math.sqrt(n)
    full = np.zeros(n)
    full[: eig.size] = eig
    return FactorModel(loadings, factors, full, np.zeros(n) if means is None else means,
                       np.ones(n) if sds is None else sds, r)


@dataclass(frozen=True)
class EmResult:
    completed: np.ndarray
    model: FactorModel
    iterations: int
    converged: bool
    errors: np.ndarray  # observed-cell reconstruction error (Frobenius) per iteration

    def __iter__(self):
        return iter((self.completed, self.model))


def em_impute(Z: np.ndarray, r: int, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER) -> EmResult:
    """Fill missing cells of a standardised panel by iterating r-factor PCA.

    Missing cells start at zero (the post-standardisation mean) and are
    replaced by the common component until their relative change is below
    ``tol``.  Observed cells are never modified.
    """
    Z = np.asarray(Z, dtype=float)
    miss = np.isnan(Z)
    if np.any((~miss).sum(axis=0) < 2):
        raise DataError("every column needs at least two observed cells")
    X = np.where(miss, 0.0, Z)
    if not miss.any():
        fm = pca_factors(X, r)
        err = np.linalg.norm(X - fm.common_component())
        return EmResult(Z.copy(), fm, 0, True, np.array([err]))
    errors = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fm = pca_factors(X, r)
        C = fm.common_component()
        errors.append(float(np.linalg.norm((X - C)[~miss])))
        new = C[miss]
        old = X[miss]
        change = np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12)
        X[miss] = new
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("EM imputation stopped at %d iterations without converging", max_iter)
    fm = pca_factors(X, r)
    out = Z.copy()
    out[miss] = X[miss]
    return EmResult(out, fm, it, converged, np.array(errors))


@dataclass(frozen=True)
class Panel:
    """Covariate panel on the month grid, columns by name."""

    start: Month
    names: tuple[str, ...]
    data: np.ndarray  # T x n, NaN for missing

    def rows_through(self, last: Month) -> "Panel":
        k = month_index(*last) - month_index(*self.start) + 1
        if k < 1:
            raise DataError("panel starts after the requested month")
        return Panel(self.start, self.names, self.data[:k])

    def column(self, j: int) -> MonthlySeries:
        return MonthlySeries(self.start, self.data[:, j], self.names[j])


def transform_panel(panel: Panel, codes: Sequence[int]) -> Panel:
    """Apply one transform code per column; the result starts where every
    transformed column can exist (two months later for code 3)."""
    if len(codes) != len(panel.names):
        raise DataError("one transform code per covariate is required")
    cols = [apply_transform(panel.column(j), TransformCode(c)) for j, c in enumerate(codes)]
    start = max((c.start for c in cols), key=lambda m: month_index(*m))
    data = np.column_stack([c.values[month_index(*start) - month_index(*c.start):] for c in cols])
    return Panel(start, panel.names, data)


def extract_factors(panel: Panel, r: int) -> tuple[FactorModel, EmResult]:
    """Standardise on observed cells, impute by EM and return factors."""
    Z, means, sds = standardize(panel.data)
    em = em_impute(Z, r)
    fm = em.model
    return FactorModel(fm.loadings, fm.factors, fm.eigenvalues, means, sds, fm.r), em


# --------------------------------------------------------------------------
# Target and reconstruction


def make_target(sa: MonthlySeries, h: int) -> tuple[MonthlySeries, MonthlySeries]:
    """y_t = 1200 ln(sa_t / sa_{t-1}) and
    y^h_{t+h} = (1200 / h) ln(sa_{t+h} / sa_t) - y_t, dated t+h."""
    if h < 1:
        raise ValueError("horizon must be at least 1")
    v = sa.values
    if np.any(~(v > 0)):
        raise DataError("seasonally adjusted series must be positive")
    if v.size <= h + 1:
        raise DataError("series too short for this horizon")
    lv = np.log(v)
    y = 1200.0 * np.diff(lv)
    yh = 1200.0 / h * (lv[1 + h :] - lv[1:-h]) - y[:-h]
    return (MonthlySeries(add_months(sa.start, 1), y, "y"),
            MonthlySeries(add_months(sa.start, 1 + h), yh, f"y{h}"))


def sa_forecast(sa_t0: float, sa_prev: float, yh: float, h: int) -> float:
    """Invert the target: exp(h yh / 1200) sa_t0^(h+1) / sa_prev^h, in logs."""
    return math.exp(h * yh / 1200.0 + (h + 1) * math.log(sa_t0) - h * math.log(sa_prev))


def reconstruct_cpi(sa_history: MonthlySeries, yh: float, h: int, S: float | None = None, H: float | None = None,
                    mode: str = "additive") -> float:
    """CPI forecast at t0 + h from the adjusted history ending at t0."""
    v = sa_history.values
    if v.size < 2:
        raise DataError("need the last two adjusted values")
    sa = sa_forecast(float(v[-1]), float(v[-2]), yh, h)
    if mode == "additive":
        if S is None:
            raise DataError("additive reconstruction needs a seasonal forecast")
        return sa + S + (0.0 if H is None else H)
    if mode == "multiplicative":
        if S is None:
            raise DataError("multiplicative reconstruction needs a seasonal factor")
        if H not in (None, 0.0):
            raise DataError("multiplicative reconstruction takes no holiday term")
        return sa * S
    raise ValueError(f"unknown reconstruction mode {mode!r}")


# --------------------------------------------------------------------------
# DI regression


@dataclass(frozen=True)
class DiTuning:
    max_k: int
    k: int
    p: int
    m: int
    bic: dict  # (k, p, m) -> BIC
    n_obs: int


def _lagged(x: np.ndarray, lags: int, rows: np.ndarray) -> np.ndarray:
    return np.column_stack([x[rows - j] for j in range(lags)])


def _design(y: np.ndarray, F: np.ndarray, k: int, p: int, m: int, rows: np.ndarray) -> np.ndarray:
    parts = [np.ones((rows.size, 1)), _lagged(y, p, rows)]
    for j in range(m):
        parts.append(F[rows - j, :k])
    return np.column_stack(parts)


def di_forecast(y: MonthlySeries, yh: MonthlySeries, F: np.ndarray, F_start: Month, t0: Month, h: int,
                max_k: int = 5, max_p: int = 6, max_m: int = 6) -> tuple[float, DiTuning]:
    """Direct h-step forecast of y^h_{t0+h} from y and factor lags at t0.

    Every (k, p, m) in 1..max_k x 1..max_p x 1..max_m is fitted by OLS on
    the same rows (those usable by the largest lags) and the minimum BIC
    wins; BIC uses the Gaussian likelihood with variance SSR / n_obs.
    Candidates with fewer than two residual degrees of freedom on those
    rows are skipped.
    """
    i0 = month_index(*t0)
    ys, fs = month_index(*y.start), month_index(*F_start)
    if max_k > F.shape[1]:
        raise DataError(f"only {F.shape[1]} factors available for max_k={max_k}")
    # common time axis = months of y, restricted to rows where factors exist
    base = max(ys, fs)
    last = i0
    if last - base + 1 < 1:
        raise DataError("no overlapping training months")
    yv = y.values[base - ys : last - ys + 1]
    Fv = F[base - fs : last - fs + 1]
    if Fv.shape[0] != yv.size:
        raise DataError("factor matrix does not cover the training span")
    lag = max(max_p, max_m) - 1
    # regression rows: predictor date t with target y^h_{t+h} observed (t+h <= t0)
    yh_idx = np.arange(yv.size) + base + h - month_index(*yh.start)
    valid = (np.arange(yv.size) >= lag) & (yh_idx >= 0) & (yh_idx < len(yh)) & (np.arange(yv.size) + h <= yv.size - 1)
    rows = np.flatnonzero(valid)
    target = yh.values[yh_idx[rows]] if rows.size else np.zeros(0)
    n_obs = rows.size
    if n_obs < 5:
        raise DataError(f"{n_obs} training rows cannot support the smallest DI regression")
    if np.isnan(target).any() or np.isnan(yv).any():
        raise DataError("missing values in the target")
    results = {}
    for k, p, m in itertools.product(range(1, max_k + 1), range(1, max_p + 1), range(1, max_m + 1)):
        # short (rolling) samples cannot carry the largest candidates;
        # each one needs two residual degrees of freedom
        if 1 + p + m * k > n_obs - 2:
            continue
        X = _design(yv, Fv, k, p, m, rows)
        coef, *_ = np.linalg.lstsq(X, target, rcond=None)
        resid = target - X @ coef
        s2 = float(resid @ resid) / n_obs
        ll = -0.5 * n_obs * (math.log(2 * math.pi * s2) + 1.0)
        results[(k, p, m)] = (-2.0 * ll + math.log(n_obs) * X.shape[1], coef)
    best = min(results, key=lambda key: (results[key][0], key))
    k, p, m = best
    x0 = _design(yv, Fv, k, p, m, np.array([yv.size - 1]))
    pred = float((x0 @ results[best][1])[0])
    tuning = DiTuning(max_k, k, p, m, {key: v[0] for key, v in results.items()}, n_obs)
    return pred, tuning


def in_sample_fit(y: MonthlySeries, yh: MonthlySeries, F: np.ndarray, F_start: Month, t0: Month, h: int,
                  k: int, p: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Fitted values and residuals of one (k, p, m) regression, same rows as
    :func:`di_forecast` with matching maxima."""
    i0 = month_index(*t0)
    ys, fs = month_index(*y.start), month_index(*F_start)
    base = max(ys, fs)
    yv = y.values[base - ys : i0 - ys + 1]
    Fv = F[base - fs : i0 - fs + 1]
    lag = max(p, m) - 1
    yh_idx = np.arange(yv.size) + base + h - month_index(*yh.start)
    valid = (np.arange(yv.size) >= lag) & (yh_idx >= 0) & (yh_idx < len(yh)) & (np.arange(yv.size) + h <= yv.size - 1)
    rows = np.flatnonzero(valid)
    target = yh.values[yh_idx[rows]]
    X = _design(yv, Fv, k, p, m, rows)
    coef, *_ = np.linalg.lstsq(X, target, rcond=None)
    return X @ coef, target - X @ coef


# --------------------------------------------------------------------------
# Per-origin seasonal adjustment


class _Components:
    """Seasonal (and holiday) forecasts for one origin, computed once for
    the longest horizon asked so far."""

    def __init__(self, S: MonthlySeries, seasonal_spec: SarimaSpec, log: bool, holiday=None):
        self.S, self.spec, self.log, self.holiday = S, seasonal_spec, log, holiday
        self._fc = np.zeros(0)

    def __call__(self, h: int):
        if h > self._fc.size:
            self._fc = forecast_seasonality(self.S, max(h, 12), self.spec, log=self.log)
        return float(self._fc[h - 1]), (None if self.holiday is None else self.holiday(h))


@dataclass
class SfAdjuster:
    """Adjustment of a raw target with Spring Festival effects.

    On each training slice the S-ARIMAX ``spec`` is refitted, its holiday
    effect removed and the rest decomposed additively; seasonal factors
    are forecast with ``seasonal_spec`` and the holiday effect at the
    target month comes from the calendar regressors and the fitted betas.
    """

    spec: SarimaSpec | None
    seasonal_spec: SarimaSpec = CN_SEASONAL_SPEC
    fit_options: dict = field(default_factory=dict)
    start: np.ndarray | None = None  # warm start for the ARMA coefficients

    def prepare(self, train: MonthlySeries) -> None:
        if self.spec is not None and self.spec.sf_window is not None and self.start is None and self.spec.n_arma:
            from .backtest import SarimaxForecaster

            spec = SarimaxForecaster(self.spec).spec_for(train)
            self.start = fit(train, spec, compute_se=False, **self.fit_options).params.arma

    def __call__(self, train: MonthlySeries):
        from .backtest import SarimaxForecaster

        spec = None if self.spec is None or self.spec.sf_window is None else SarimaxForecaster(self.spec).spec_for(train)
        if spec is None or not any(c.kind.is_sf for c in spec.mean_regressors):
            dec = seasonal_adjust(train, None, "additive")
            return dec.adjusted, _Components(dec.seasonal, self.seasonal_spec, False, lambda h: 0.0)
        model = fit(train, spec, compute_se=False, start=self.start, **self.fit_options)
        dec = seasonal_adjust(train, model, "additive")
        betas = [(b, c) for b, c in zip(model.beta, spec.mean_regressors) if c.kind.is_sf]

        def holiday(h):
            return float(sum(b * c.over(train.start, len(train) + h).values[-1] for b, c in betas))

        return dec.adjusted, _Components(dec.seasonal, self.seasonal_spec, False, holiday)


@dataclass
class OfficialAdjuster:
    """Adjustment from a published seasonally adjusted series: S = CPI / saCPI,
    forecast in logs, multiplicative reconstruction."""

    adjusted: MonthlySeries
    seasonal_spec: SarimaSpec = US_SEASONAL_SPEC

    def __call__(self, train: MonthlySeries):
        sa = self.adjusted.slice(train.start, train.end)
        S = seasonality_from_adjusted(train, sa)
        return sa, _Components(S, self.seasonal_spec, True)


# --------------------------------------------------------------------------
# Backtest engine


@dataclass
class DiForecaster:
    """Diffusion-index engine for :func:`cpiforecast.backtest.run`.

    At each origin the covariate panel is cut at the origin, standardised
    and imputed afresh, and factors are re-extracted; the target series is
    treated as seasonally adjusted (``adjust=None``) or adjusted per origin
    by a callable returning (saCPI, seasonal forecaster) for the slice.
    """

    panel: Panel  # already transformed
    max_k: int = 5
    max_p: int = 6
    max_m: int = 6
    mode: str = "multiplicative"
    adjust: object = None  # callable(train) -> (sa MonthlySeries, callable(h) -> (S, H))
    min_length: int = 36
    tunings: list = field(default_factory=list)

    def fit(self, train: MonthlySeries):
        panel = self.panel.rows_through(train.end)
        fm, _ = extract_factors(panel, self.max_k)
        if self.adjust is None:
            sa, comp = train, (lambda h: (1.0, None) if self.mode == "multiplicative" else (0.0, 0.0))
        else:
            sa, comp = self.adjust(train)
        return {"sa": sa, "F": fm.factors, "F_start": panel.start, "components": comp}

    def prepare(self, train: MonthlySeries) -> None:
        if hasattr(self.adjust, "prepare"):
            self.adjust.prepare(train)

    def update(self, state, train):
        return self.fit(train)

    def predict(self, state, horizons):
        sa = state["sa"]
        out = {}
        for h in horizons:
            y, yh = make_target(sa, h)
            pred, tuning = di_forecast(y, yh, state["F"], state["F_start"], sa.end, h,
                                       self.max_k, self.max_p, self.max_m)
            S, H = state["components"](h)
            out[h] = reconstruct_cpi(sa, pred, h, S, H, self.mode)
        return out


def export_loadings(path: str | Path, names: Sequence[str], fm: FactorModel, n_factors: int = 5,
                    header_lines: Sequence[str] = ()) -> None:
    r = min(n_factors, fm.r)
    with open(path, "w", encoding="utf-8") as fh:
        for line in (*header_lines, f"normalization: {fm.normalization}"):
            fh.write(f"# {line}\n")
        fh.write("covariate," + ",".join(f"factor{j + 1}" for j in range(r)) + "\n")
        for i, name in enumerate(names):
            fh.write(name + "," + ",".join(repr(float(x)) for x in fm.loadings[i, :r]) + "\n")
        share = fm.variance_share()
        fh.write("variance_share," + ",".join(repr(float(x)) for x in share[:r]) + "\n")
        fh.write("cumulative_share," + ",".join(repr(float(x)) for x in np.cumsum(share)[:r]) + "\n")
