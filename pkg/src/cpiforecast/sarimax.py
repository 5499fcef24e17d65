"""Seasonal ARIMA with exogenous regressors: exact Gaussian likelihood,
maximum-likelihood fitting, forecasting and simulation.

The model for a monthly level series z_t is

    phi(B) Phi(B^12) (1-B)^d (1-B^12)^D (z_t - sum_i beta_i x_it)
        = theta(B) Theta(B^12) (a_t + sum_j omega_j P_jt)

with mean-side regressors x (holiday shares, AO / LS / TC shapes) and
innovation-side pulses P (IO).  All lag polynomials use the Box-Jenkins
sign convention ``1 - c_1 B - c_2 B^2 - ...`` for both AR and MA parts.

Estimation differences the data and regressors, then evaluates the exact
likelihood of the stationary ARMA remainder with a Kalman filter started
from the stationary covariance.  Regression and pulse coefficients and the
innovation variance are concentrated out by GLS, so the optimiser only
sees the ARMA coefficients, each polynomial mapped to an unconstrained
vector through its partial autocorrelations.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, signal

from . import __version__
from ._kalman import arma_filter, arma_forecast_state
from .calendar import HolidayWindow, LunarTable, RegressorColumn, RegressorKind
from .errors import ConvergenceError, DataError, NumericalError
from .timeseries import (
    Month,
    MonthlySeries,
    difference_array,
    difference_polynomial,
    format_month,
    parse_month,
)

logger = logging.getLogger(__name__)

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SarimaSpec:
    p: int = 0
    d: int = 1
    q: int = 0
    P: int = 0
    D: int = 1
    Q: int = 0
    season: int = 12
    mean_regressors: tuple[RegressorColumn, ...] = ()
    innovation_pulses: tuple[RegressorColumn, ...] = ()

    def __post_init__(self):
        if min(self.p, self.d, self.q, self.P, self.D, self.Q) < 0:
            raise ValueError("model orders must be nonnegative")
        object.__setattr__(self, "mean_regressors", tuple(self.mean_regressors))
        object.__setattr__(self, "innovation_pulses", tuple(self.innovation_pulses))
        if any(c.innovation_side for c in self.mean_regressors):
            raise ValueError("IO pulses belong in innovation_pulses")
        if any(not c.innovation_side for c in self.innovation_pulses):
            raise ValueError("innovation_pulses only takes IO columns")

    @property
    def order(self) -> tuple[int, int, int, int]:
        """(p, q, P, Q)"""
        return self.p, self.q, self.P, self.Q

    @property
    def n_arma(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def diff_order(self) -> int:
        return self.d + self.D * self.season

    @property
    def sf_window(self) -> HolidayWindow | None:
        for c in self.mean_regressors:
            if c.kind.is_sf:
                return c.window
        return None

    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})x({self.P},{self.D},{self.Q}){self.season}"

    def over(self, start: Month, length: int) -> "SarimaSpec":
        """Regenerate every regressor over another span."""
        return replace(
            self,
            mean_regressors=tuple(c.over(start, length) for c in self.mean_regressors),
            innovation_pulses=tuple(c.over(start, length) for c in self.innovation_pulses),
        )

    def with_regressors(self, mean=(), pulses=()) -> "SarimaSpec":
        return replace(
            self,
            mean_regressors=self.mean_regressors + tuple(mean),
            innovation_pulses=self.innovation_pulses + tuple(pulses),
        )

    def to_json(self) -> dict:
        return {
            "orders": {"p": self.p, "d": self.d, "q": self.q, "P": self.P, "D": self.D, "Q": self.Q},
            "season": self.season,
            "mean_regressors": [c.to_json() for c in self.mean_regressors],
            "innovation_pulses": [c.to_json() for c in self.innovation_pulses],
        }


@dataclass(frozen=True)
class SarimaParams:
    """Natural-scale parameters; lag coefficients follow ``1 - c_1 B - ...``."""

    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("ar", "sar", "ma", "sma", "beta", "omega"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    @property
    def arma(self) -> np.ndarray:
        return np.concatenate([self.ar, self.sar, self.ma, self.sma])

    def check(self, spec: SarimaSpec) -> None:
        sizes = (self.ar.size, self.sar.size, self.ma.size, self.sma.size, self.beta.size, self.omega.size)
        want = (spec.p, spec.P, spec.q, spec.Q, len(spec.mean_regressors), len(spec.innovation_pulses))
        if sizes != want:
            raise ValueError(f"parameter sizes {sizes} do not match spec {want}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


# --------------------------------------------------------------------------
# Lag polynomials


def lag_polynomial(coefs: np.ndarray, step: int = 1) -> np.ndarray:
    """1 - c_1 B^step - c_2 B^(2 step) - ...  (lag-0 first)."""
    poly = np.zeros(step * len(coefs) + 1)
    poly[0] = 1.0
    poly[step::step] = -np.asarray(coefs, dtype=float)
    return poly


def arma_polynomials(params: SarimaParams, season: int = 12) -> tuple[np.ndarray, np.ndarray]:
    ar = np.convolve(lag_polynomial(params.ar), lag_polynomial(params.sar, season))
    ma = np.convolve(lag_polynomial(params.ma), lag_polynomial(params.sma, season))
    return ar, ma


def is_admissible(coefs: np.ndarray) -> bool:
    """All roots of 1 - c_1 z - ... strictly outside the unit circle.

    Tested by the Durbin-Levinson step-down (every partial autocorrelation
    inside (-1, 1)) rather than by root finding, which loses about half the
    digits at the near-double roots the optimiser can reach.
    """
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0:
        return True
    if not np.all(np.isfinite(coefs)):
        return False
    try:
        r = coefs_to_pacf(coefs)
    except ValueError:
        return False
    return bool(np.all(np.isfinite(r)) and np.all(np.abs(r) < 1.0))


def pacf_to_coefs(r: np.ndarray) -> np.ndarray:
    """Partial autocorrelations in (-1, 1) -> coefficients of an admissible
    polynomial 1 - c_1 B - ... - c_k B^k."""
    c = np.zeros(0)
    for rj in r:
        c = np.concatenate([c - rj * c[::-1], [rj]])
    return c


def coefs_to_pacf(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float).copy()
    k = c.size
    r = np.zeros(k)
    for j in range(k - 1, -1, -1):
        r[j] = c[j]
        if j == 0:
            break
        if abs(r[j]) >= 1.0:
            raise ValueError("polynomial not admissible")
        c = (c[:j] + r[j] * c[:j][::-1]) / (1.0 - r[j] ** 2)
    return r


# tanh saturates to exactly 1 in floating point; the bound keeps every
# partial autocorrelation, and hence every root, off the unit circle
PACF_BOUND = 1.0 - 1e-7


def constrain(x: np.ndarray) -> np.ndarray:
    return pacf_to_coefs(PACF_BOUND * np.tanh(x))


def unconstrain(c: np.ndarray) -> np.ndarray:
    r = np.clip(coefs_to_pacf(c) / PACF_BOUND, -0.999999, 0.999999)
    return np.arctanh(r)


# --------------------------------------------------------------------------
# Likelihood machinery


def _harvey_form(ar_poly: np.ndarray, ma_poly: np.ndarray):
    a_coef = -ar_poly[1:]
    b_coef = ma_poly[1:]
    r = max(a_coef.size, b_coef.size + 1, 1)
    a = np.zeros(r)
    a[: a_coef.size] = a_coef
    R = np.zeros(r)
    R[0] = 1.0
    R[1 : 1 + b_coef.size] = b_coef
    return a, R


def stationary_covariance(a: np.ndarray, R: np.ndarray) -> np.ndarray:
    r = a.size
    T = np.zeros((r, r))
    T[:, 0] = a
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    Q = np.outer(R, R)
    with warnings.catch_warnings():
        # the bilinear method degrades when T has an eigenvalue near -1
        warnings.simplefilter("error", RuntimeWarning)
        try:
            return linalg.solve_discrete_lyapunov(T, Q)
        except RuntimeWarning:
            pass
        try:
            return linalg.solve_discrete_lyapunov(T, Q, method="direct")
        except RuntimeWarning as exc:
            # only reached next to the unit circle, where P0 is meaningless
            raise NumericalError(f"stationary covariance is ill-conditioned: {exc}") from None


@dataclass
class _Design:
    """Differenced data and regressors for one series/spec pair."""

    w: np.ndarray  # differenced series (n,)
    Xd: np.ndarray  # differenced mean regressors (n, m)
    pulses: np.ndarray  # IO pulses on the original time axis (T, k)
    order: int


def _design(series: MonthlySeries, spec: SarimaSpec) -> _Design:
    series.require_complete("S-ARIMAX estimation")
    T = len(series)
    for col in spec.mean_regressors + spec.innovation_pulses:
        if col.start != series.start or len(col) != T:
            raise DataError(f"regressor {col.name} is not aligned to the series")
    X = np.column_stack([c.values for c in spec.mean_regressors]) if spec.mean_regressors else np.zeros((T, 0))
    pulses = (
        np.column_stack([c.values for c in spec.innovation_pulses]) if spec.innovation_pulses else np.zeros((T, 0))
    )
    order = spec.diff_order
    if T <= order + 1:
        raise DataError(f"series of length {T} too short for differencing of order {order}")
    return _Design(
        difference_array(series.values, spec.d, spec.D, spec.season),
        difference_array(X, spec.d, spec.D, spec.season),
        pulses,
        order,
    )


def _pulse_effects(pulses: np.ndarray, ar_poly: np.ndarray, ma_poly: np.ndarray, order: int) -> np.ndarray:
    """psi(B) P on the differenced time axis."""
    if pulses.shape[1] == 0:
        return np.zeros((pulses.shape[0] - order, 0))
    return signal.lfilter(ma_poly, ar_poly, pulses, axis=0)[order:]


@dataclass
class _FilterOut:
    v: np.ndarray
    F: np.ndarray
    state: np.ndarray
    a: np.ndarray


def _run_filter(Y: np.ndarray, ar_poly, ma_poly) -> _FilterOut:
    a, R = _harvey_form(ar_poly, ma_poly)
    P0 = stationary_covariance(a, R)
    if not np.all(np.isfinite(P0)):
        raise NumericalError("stationary covariance is not finite")
    v, F, state, ok = arma_filter(np.ascontiguousarray(Y, dtype=float), a, R, P0, 1e-13)
    if not ok:
        raise NumericalError("non-positive prediction variance in Kalman filter")
    return _FilterOut(v, F, state, a)


@dataclass
class _Profile:
    loglik: float
    sigma2: float
    beta: np.ndarray
    omega: np.ndarray
    cov_reg: np.ndarray
    innovations: np.ndarray
    F: np.ndarray


def _profile(design: _Design, arma_params: SarimaParams, season: int) -> _Profile:
    """Likelihood with regression coefficients and sigma^2 concentrated out."""
    ar_poly, ma_poly = arma_polynomials(arma_params, season)
    io = _pulse_effects(design.pulses, ar_poly, ma_poly, design.order)
    Xall = np.column_stack([design.Xd, io])
    out = _run_filter(np.column_stack([design.w, Xall]), ar_poly, ma_poly)
    n = design.w.size
    scale = np.sqrt(out.F)[:, None]
    ys = out.v[:, 0] / scale[:, 0]
    Xs = out.v[:, 1:] / scale
    if Xs.shape[1]:
        coef, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
        resid_std = ys - Xs @ coef
    else:
        coef = np.zeros(0)
        resid_std = ys
    ssr = float(resid_std @ resid_std)
    sigma2 = ssr / n
    if not sigma2 > 0:
        raise NumericalError("zero residual variance")
    sumlogF = float(np.sum(np.log(out.F)))
    ll = -0.5 * n * (LOG2PI + math.log(sigma2) + 1.0) - 0.5 * sumlogF
    if Xs.shape[1]:
        cov_reg = sigma2 * np.linalg.pinv(Xs.T @ Xs)
    else:
        cov_reg = np.zeros((0, 0))
    m = design.Xd.shape[1]
    innovations = out.v[:, 0] - out.v[:, 1:] @ coef if coef.size else out.v[:, 0]
    return _Profile(ll, sigma2, coef[:m], coef[m:], cov_reg, innovations, out.F)


def _split_arma(spec: SarimaSpec, vec: np.ndarray) -> SarimaParams:
    p, q, P, Q = spec.order
    i = np.cumsum([0, p, P, q, Q])
    return SarimaParams(vec[i[0] : i[1]], vec[i[1] : i[2]], vec[i[2] : i[3]], vec[i[3] : i[4]])


def _constrain_all(spec: SarimaSpec, x: np.ndarray) -> np.ndarray:
    p, q, P, Q = spec.order
    out, i = [], 0
    for k in (p, P, q, Q):
        out.append(constrain(x[i : i + k]))
        i += k
    return np.concatenate(out) if out else np.zeros(0)


def _unconstrain_all(spec: SarimaSpec, c: np.ndarray) -> np.ndarray:
    p, q, P, Q = spec.order
    out, i = [], 0
    for k in (p, P, q, Q):
        out.append(unconstrain(c[i : i + k]))
        i += k
    return np.concatenate(out) if out else np.zeros(0)


def _all_admissible(prm: SarimaParams) -> bool:
    return all(is_admissible(c) for c in (prm.ar, prm.sar, prm.ma, prm.sma))


def loglik(series: MonthlySeries, spec: SarimaSpec, params: SarimaParams) -> float:
    """Exact Gaussian log-likelihood of the differenced, regressor-adjusted
    series at fixed parameters (sigma^2 included, nothing concentrated)."""
    params.check(spec)
    if not _all_admissible(params):
        raise NumericalError("AR or MA polynomial has a root on or inside the unit circle")
    design = _design(series, spec)
    u = _adjusted_noise(design, params, spec.season)
    ar_poly, ma_poly = arma_polynomials(params, spec.season)
    out = _run_filter(u[:, None], ar_poly, ma_poly)
    v = out.v[:, 0]
    n = v.size
    s2 = params.sigma2
    return float(-0.5 * (n * (LOG2PI + math.log(s2)) + np.sum(np.log(out.F)) + np.sum(v * v / out.F) / s2))


def _adjusted_noise(design: _Design, params: SarimaParams, season: int) -> np.ndarray:
    """w - Xd beta - psi(B) P omega: the ARMA part of the differenced series."""
    ar_poly, ma_poly = arma_polynomials(params, season)
    u = design.w - design.Xd @ params.beta
    if design.pulses.shape[1]:
        u = u - _pulse_effects(design.pulses, ar_poly, ma_poly, design.order) @ params.omega
    return u


def kalman_innovations(series: MonthlySeries, spec: SarimaSpec, params: SarimaParams) -> tuple[np.ndarray, np.ndarray]:
    """One-step prediction errors of the differenced series and their
    relative variances F_t (prediction variance = sigma^2 F_t)."""
    params.check(spec)
    design = _design(series, spec)
    ar_poly, ma_poly = arma_polynomials(params, spec.season)
    out = _run_filter(_adjusted_noise(design, params, spec.season)[:, None], ar_poly, ma_poly)
    return out.v[:, 0], out.F


# --------------------------------------------------------------------------
# Fitting


@dataclass(frozen=True)
class FittedModel:
    spec: SarimaSpec
    series: MonthlySeries
    params: SarimaParams
    loglik: float
    residuals: np.ndarray
    se: dict
    converged: bool = True
    n_iter: int = 0

    @property
    def ar(self):
        return self.params.ar

    @property
    def sar(self):
        return self.params.sar

    @property
    def ma(self):
        return self.params.ma

    @property
    def sma(self):
        return self.params.sma

    @property
    def beta(self):
        return self.params.beta

    @property
    def omega_io(self):
        return self.params.omega

    @property
    def sigma2(self) -> float:
        return self.params.sigma2

    @property
    def sigma(self) -> float:
        return math.sqrt(self.params.sigma2)

    @property
    def n_effective(self) -> int:
        return len(self.series) - self.spec.diff_order

    def sf_effect(self) -> np.ndarray:
        """sum_i beta_i H_it over the SF regressors, aligned to the series."""
        out = np.zeros(len(self.series))
        for b, c in zip(self.params.beta, self.spec.mean_regressors):
            if c.kind.is_sf:
                out += b * c.values
        return out

    def regression_effect(self) -> np.ndarray:
        out = np.zeros(len(self.series))
        for b, c in zip(self.params.beta, self.spec.mean_regressors):
            out += b * c.values
        return out

    def to_json(self) -> dict:
        spec_json = self.spec.to_json()
        spec_json["regressor_span"] = {"start": format_month(self.series.start), "length": len(self.series)}
        table = next((c.table for c in self.spec.mean_regressors if c.table is not None), None)
        if table is not None:
            spec_json["lunar_table"] = table.to_json()
        return {
            "format": "cpiforecast.FittedModel",
            "version": __version__,
            "spec": spec_json,
            "series": {"start": format_month(self.series.start), "name": self.series.name,
                       "values": self.series.values.tolist()},
            "coefficients": {
                "ar": self.params.ar.tolist(), "sar": self.params.sar.tolist(),
                "ma": self.params.ma.tolist(), "sma": self.params.sma.tolist(),
                "beta": self.params.beta.tolist(), "omega_io": self.params.omega.tolist(),
            },
            "regressor_names": [c.name for c in self.spec.mean_regressors],
            "pulse_names": [c.name for c in self.spec.innovation_pulses],
            "sigma2": self.params.sigma2,
            "sigma_a": self.sigma,
            "loglik": self.loglik,
            "n_effective": self.n_effective,
            "residuals": self.residuals.tolist(),
            "standard_errors": {k: np.asarray(v).tolist() for k, v in self.se.items()},
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, allow_nan=True)

    @classmethod
    def from_json(cls, obj: dict) -> "FittedModel":
        s = obj["spec"]
        table = LunarTable.from_json(s["lunar_table"]) if "lunar_table" in s else None
        span_start = parse_month(s["regressor_span"]["start"])
        span_len = int(s["regressor_span"]["length"])

        def build(d):
            kind = RegressorKind(d["kind"])
            col = RegressorColumn(
                kind, span_start, np.zeros(span_len),
                anchor=parse_month(d["anchor"]) if "anchor" in d else None,
                delta=d.get("delta"),
                window=HolidayWindow(*d["window"]) if "window" in d else None,
                table=table if kind.is_sf else None,
            )
            return col.over(span_start, span_len)

        o = s["orders"]
        spec = SarimaSpec(o["p"], o["d"], o["q"], o["P"], o["D"], o["Q"], s["season"],
                          tuple(build(d) for d in s["mean_regressors"]),
                          tuple(build(d) for d in s["innovation_pulses"]))
        ser = obj["series"]
        series = MonthlySeries(parse_month(ser["start"]), np.array(ser["values"], dtype=float), ser["name"])
        c = obj["coefficients"]
        params = SarimaParams(c["ar"], c["sar"], c["ma"], c["sma"], c["beta"], c["omega_io"], obj["sigma2"])
        se = {k: np.array(v, dtype=float) for k, v in obj["standard_errors"].items()}
        return cls(spec, series, params, obj["loglik"], np.array(obj["residuals"], dtype=float), se,
                   obj["converged"], obj["n_iter"])

    @classmethod
    def loads(cls, text: str) -> "FittedModel":
        return cls.from_json(json.loads(text))


class _RelChangeStop:
    def __init__(self, rtol):
        self.rtol = rtol
        self.last = None
        self.hit = False

    def __call__(self, intermediate_result):
        f = intermediate_result.fun
        if self.last is not None and abs(f - self.last) <= self.rtol * max(abs(self.last), 1e-300):
            self.hit = True
            raise StopIteration
        self.last = f


def _num_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fit(series: MonthlySeries, spec: SarimaSpec, *, restarts: int = 3, seed: int = 0,
        gtol: float = 1e-6, rtol: float = 1e-10, maxiter: int = 500, compute_se: bool = True,
        start: np.ndarray | None = None, estimate: bool = True) -> FittedModel:
    """Gaussian maximum-likelihood fit of ``spec`` to ``series``.

    The optimiser is BFGS on the unconstrained ARMA parameters with central
    difference gradients.  It stops when the gradient norm drops below
    ``gtol`` or the mean log-likelihood changes by less than ``rtol``
    (relative).  If it fails, up to ``restarts`` multiplicative
    perturbations of the best point are tried (seeded by ``seed``).

    With ``estimate=False`` the ARMA coefficients stay at ``start`` and only
    the regression coefficients and sigma^2 are re-estimated.
    """
    if not estimate and start is None:
        raise ValueError("estimate=False needs start coefficients")
    design = _design(series, spec)
    n = design.w.size
    n_params = spec.n_arma + design.Xd.shape[1] + design.pulses.shape[1]
    if n < n_params + 5:
        raise DataError(f"{n} differenced observations cannot support {n_params} parameters")
    if design.Xd.shape[1]:
        norms = np.linalg.norm(design.Xd, axis=0)
        if (norms == 0).any():
            bad = [spec.mean_regressors[i].name for i in np.flatnonzero(norms == 0)]
            raise NumericalError(f"regressors vanish after differencing: {bad}")
        sv = np.linalg.svd(design.Xd / norms, compute_uv=False)
        if sv[-1] < 1e-8 * sv[0]:
            raise NumericalError("ill-conditioned regressor matrix")

    def profile_at(x) -> _Profile:
        return _profile(design, _split_arma(spec, _constrain_all(spec, x)), spec.season)

    def objective(x):
        try:
            return -profile_at(x).loglik / n
        except (NumericalError, np.linalg.LinAlgError, ValueError):
            return 1e10

    k = spec.n_arma
    rng = np.random.default_rng(seed)
    x0 = np.zeros(k) if start is None else _unconstrain_all(spec, np.asarray(start, dtype=float))
    best_x, best_f, converged, n_iter = x0, objective(x0), k == 0, 0
    if k and not estimate:
        converged = True
    elif k:
        x_try = x0
        for attempt in range(restarts + 1):
            stop = _RelChangeStop(rtol)
            res = optimize.minimize(objective, x_try, jac=lambda x: _num_grad(objective, x), method="BFGS",
                                    callback=stop, options={"gtol": gtol, "maxiter": maxiter})
            n_iter += int(res.nit)
            if res.fun <= best_f:
                best_x, best_f = res.x, res.fun
            ok = stop.hit or res.success or np.max(np.abs(_num_grad(objective, best_x))) < 10 * gtol
            if ok:
                converged = True
                break
            logger.debug("restart %d for %s: %s", attempt + 1, spec.label(), res.message)
            x_try = best_x * np.exp(0.3 * rng.standard_normal(k)) + 0.05 * rng.standard_normal(k)
        if not converged and best_f >= 1e10:
            raise ConvergenceError(f"{spec.label()}: optimiser failed to find an admissible optimum")
    arma = _constrain_all(spec, best_x)
    arma_params = _split_arma(spec, arma)
    if not _all_admissible(arma_params):
        raise NumericalError(f"{spec.label()}: optimum violates stationarity or invertibility")
    prof = profile_at(best_x)
    params = replace(arma_params, beta=prof.beta, omega=prof.omega, sigma2=prof.sigma2)
    se = _standard_errors(design, spec, arma, prof) if compute_se else {}
    if not converged:
        logger.warning("%s did not converge after %d restarts", spec.label(), restarts)
    return FittedModel(spec, series, params, prof.loglik, prof.innovations, se, converged, n_iter)


def _standard_errors(design: _Design, spec: SarimaSpec, arma: np.ndarray, prof: _Profile) -> dict:
    def f(c):
        prm = _split_arma(spec, c)
        if not _all_admissible(prm):
            return np.nan
        try:
            return _profile(design, prm, spec.season).loglik
        except (NumericalError, np.linalg.LinAlgError):
            return np.nan

    k = arma.size
    se_arma = np.zeros(0)
    if k:
        h = 1e-4
        H = np.zeros((k, k))
        f0 = prof.loglik
        for i in range(k):
            ei = np.zeros(k)
            ei[i] = h
            H[i, i] = (f(arma + ei) - 2 * f0 + f(arma - ei)) / h**2
            for j in range(i):
                ej = np.zeros(k)
                ej[j] = h
                H[i, j] = H[j, i] = (
                    f(arma + ei + ej) - f(arma + ei - ej) - f(arma - ei + ej) + f(arma - ei - ej)
                ) / (4 * h * h)
        try:
            cov = np.linalg.inv(-H)
            se_arma = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
        except np.linalg.LinAlgError:
            se_arma = np.full(k, np.nan)
    prm = _split_arma(spec, se_arma if k else np.zeros(0))
    se_reg = np.sqrt(np.maximum(np.diag(prof.cov_reg), 0.0)) if prof.cov_reg.size else np.zeros(0)
    m = design.Xd.shape[1]
    return {"ar": prm.ar, "sar": prm.sar, "ma": prm.ma, "sma": prm.sma,
            "beta": se_reg[:m], "omega_io": se_reg[m:]}


# --------------------------------------------------------------------------
# Forecasting


def psi_weights(ar_poly: np.ndarray, ma_poly: np.ndarray, n: int) -> np.ndarray:
    """Coefficients of ma_poly(B) / ar_poly(B) up to lag n-1."""
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return signal.lfilter(ma_poly, ar_poly, impulse)


def forecast(model: FittedModel, h: int, future_regressors: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-MSE forecasts of the undifferenced series for 1..h months
    after the sample end, with psi-weight standard errors.

    ``future_regressors`` (h x m) gives the mean regressors for the forecast
    months; when omitted each regressor is extended from its definition.
    """
    if h < 1:
        raise ValueError("forecast horizon must be at least 1")
    spec, series, prm = model.spec, model.series, model.params
    T = len(series)
    m = len(spec.mean_regressors)
    if future_regressors is None:
        ext = spec.over(series.start, T + h)
        X_full = np.column_stack([c.values for c in ext.mean_regressors]) if m else np.zeros((T + h, 0))
        pulses_full = (np.column_stack([c.values for c in ext.innovation_pulses])
                       if spec.innovation_pulses else np.zeros((T + h, 0)))
    else:
        fut = np.asarray(future_regressors, dtype=float).reshape(h, -1) if m else np.zeros((h, 0))
        if fut.shape != (h, m):
            raise DataError(f"future regressors must be {h} x {m}")
        if np.isnan(fut).any():
            raise DataError("missing future regressor values")
        X_past = np.column_stack([c.values for c in spec.mean_regressors]) if m else np.zeros((T, 0))
        X_full = np.vstack([X_past, fut])
        pulses_full = (np.column_stack([c.over(series.start, T + h).values for c in spec.innovation_pulses])
                       if spec.innovation_pulses else np.zeros((T + h, 0)))

    ar_poly, ma_poly = arma_polynomials(prm, spec.season)
    order = spec.diff_order
    design = _design(series, spec)
    u = _adjusted_noise(design, prm, spec.season)
    out = _run_filter(u[:, None], ar_poly, ma_poly)
    u_hat = arma_forecast_state(out.state, out.a, h)

    Xd_full = difference_array(X_full, spec.d, spec.D, spec.season)
    w_hat = u_hat + Xd_full[-h:] @ prm.beta
    if pulses_full.shape[1]:
        w_hat = w_hat + _pulse_effects(pulses_full, ar_poly, ma_poly, order)[-h:] @ prm.omega

    dpoly = difference_polynomial(spec.d, spec.D, spec.season)
    z = np.concatenate([series.values, np.zeros(h)])
    for j in range(h):
        t = T + j
        z[t] = w_hat[j] - sum(dpoly[k] * z[t - k] for k in range(1, dpoly.size) if dpoly[k] != 0.0)
    se = model.sigma * np.sqrt(np.cumsum(psi_weights(np.convolve(ar_poly, dpoly), ma_poly, h) ** 2))
    return z[T:], se


# --------------------------------------------------------------------------
# Simulation


def simulate(spec: SarimaSpec, params: SarimaParams, T: int, seed: int, start: Month = (2000, 1),
             burn: int = 200) -> MonthlySeries:
    """Draw a series of length T from the model, regressor effects included.

    Regressors in ``spec`` must span exactly the T output months.  The
    integrated part starts from zeros ``burn`` months before the output.
    """
    params.check(spec)
    if not _all_admissible(params):
        raise ValueError("simulation needs admissible AR and MA polynomials")
    if T <= spec.diff_order:
        raise ValueError("T must exceed the differencing order")
    for col in spec.mean_regressors + spec.innovation_pulses:
        if col.start != start or len(col) != T:
            raise DataError(f"regressor {col.name} must span the {T} simulated months from {format_month(start)}")
    rng = np.random.default_rng(seed)
    total = T + burn
    e = rng.standard_normal(total) * math.sqrt(params.sigma2)
    for om, col in zip(params.omega, spec.innovation_pulses):
        e[burn:] += om * col.values
    ar_poly, ma_poly = arma_polynomials(params, spec.season)
    u = signal.lfilter(ma_poly, ar_poly, e)
    dpoly = difference_polynomial(spec.d, spec.D, spec.season)
    z = signal.lfilter([1.0], dpoly, u)[burn:]
    for b, col in zip(params.beta, spec.mean_regressors):
        z = z + b * col.values
    return MonthlySeries(start, z, "simulated")
