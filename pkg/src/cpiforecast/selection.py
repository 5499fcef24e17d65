"""Model selection by three criteria and a two-step rank-sum search.

C_Fit = sigma_a / sigma_0 measures in-sample fit, BIC = -2 loglik +
log(n) (p + q + P + Q + |tau|) trades fit against size, and C_FC is the
one-step expanding-window forecast RMSE over sigma_0.  For each ARMA order
the holiday window tau* with the smallest sum of the three ranks is kept;
orders are then ranked on their tau* scores.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backtest import BacktestProtocol, SarimaxForecaster, Scheme, run
from .calendar import HolidayWindow, LunarTable, RegressorColumn, holiday_grid, sf_regressors
from .errors import CpiForecastError
from .sarimax import FittedModel, SarimaSpec, fit
from .timeseries import MonthlySeries

logger = logging.getLogger(__name__)

Order = tuple[int, int, int, int]

C_FC_NOTE = ("C_FC divides the squared-error sum by the number of forecasts; the source formula "
             "sums 95 terms (t = 85..179) but divides by 83")


def order_grid(max_order: int = 2) -> list[Order]:
    """All (p, q, P, Q) with each order in 0..max_order; 81 for max_order 2."""
    r = range(max_order + 1)
    return list(itertools.product(r, r, r, r))


def model_spec(order: Order, window: HolidayWindow | None, series: MonthlySeries,
               extra: Sequence[RegressorColumn] = (), pulses: Sequence[RegressorColumn] = (),
               table: LunarTable | None = None) -> SarimaSpec:
    """(p,1,q)x(P,1,Q)12 spec with the nonzero Spring Festival columns of
    ``window`` plus any intervention columns."""
    p, q, P, Q = order
    cols: list[RegressorColumn] = []
    if window is not None:
        sf = sf_regressors(series.start, len(series), window, table)
        cols = [c for c, tau in zip(sf, window) if tau > 0]
    mean = cols + [c.over(series.start, len(series)) for c in extra]
    io = [c.over(series.start, len(series)) for c in pulses]
    return SarimaSpec(p, 1, q, P, 1, Q, 12, tuple(mean), tuple(io))


def c_fit(model: FittedModel, sigma0_value: float) -> float:
    if not sigma0_value > 0:
        raise ValueError("sigma0 must be positive")
    return model.sigma / sigma0_value


def n_holiday_terms(spec: SarimaSpec) -> int:
    w = spec.sf_window
    return 0 if w is None else w.n_nonzero


def bic(model: FittedModel) -> float:
    """-2 loglik + log(n) k, k counting ARMA terms and nonzero tau entries;
    intervention coefficients are not counted."""
    k = model.spec.n_arma + n_holiday_terms(model.spec)
    return -2.0 * model.loglik + math.log(model.n_effective) * k


def c_fc(series: MonthlySeries, spec: SarimaSpec, sigma0_value: float, protocol: BacktestProtocol | None = None,
         fit_options: dict | None = None) -> float:
    """One-step expanding-window forecast RMSE over sigma_0."""
    protocol = protocol or BacktestProtocol(horizons=(1,))
    if protocol.horizons != (1,) or protocol.scheme is not Scheme.EXPANDING:
        protocol = replace(protocol, horizons=(1,), scheme=Scheme.EXPANDING)
    report = run(series, SarimaxForecaster(spec, fit_options=dict(fit_options or {})), protocol, sigma0_value)
    return report.rmse(1) / sigma0_value


# --------------------------------------------------------------------------
# Ranking


@dataclass(frozen=True)
class ScoreTriple:
    c_fit: float
    bic: float
    c_fc: float
    ranks: tuple[int, int, int] = (0, 0, 0)

    @property
    def rank_sum(self) -> int:
        return sum(self.ranks)

    @property
    def values(self) -> tuple[float, float, float]:
        return self.c_fit, self.bic, self.c_fc


def _clean(v: float) -> float:
    return v if v == v else math.inf  # NaN ranks last


def rank(values: Sequence[float], keys: Sequence) -> list[int]:
    """Ascending ranks 1..N; ties go to the smaller key."""
    order = sorted(range(len(values)), key=lambda i: (_clean(values[i]), keys[i]))
    out = [0] * len(values)
    for r, i in enumerate(order, start=1):
        out[i] = r
    return out


def rank_pool(scores: Sequence[ScoreTriple], keys: Sequence) -> list[ScoreTriple]:
    """Rank each criterion within the pool and attach the ranks."""
    cols = [rank([s.values[c] for s in scores], keys) for c in range(3)]
    return [replace(s, ranks=(cols[0][i], cols[1][i], cols[2][i])) for i, s in enumerate(scores)]


def best_of_pool(ranked: Sequence[ScoreTriple], keys: Sequence) -> int:
    """Index with the smallest rank sum; ties go to the smaller key."""
    return min(range(len(ranked)), key=lambda i: (ranked[i].rank_sum, keys[i]))


def _window_key(w: HolidayWindow | None) -> tuple:
    return tuple(w) if w is not None else ()


# --------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class Cell:
    order: Order
    window: HolidayWindow | None
    score: ScoreTriple
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.order, _window_key(self.window))


@dataclass
class GridResult:
    sigma0: float
    cells: list[Cell]  # every (order, window) with within-order ranks
    best: list[Cell]  # per order: tau* with across-order ranks, sorted by rank sum
    metadata: dict = field(default_factory=dict)

    def top(self, n: int) -> list[Cell]:
        return self.best[:n]

    def table_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            w = c.window or HolidayWindow(0, 0, 0)
            rows.append({"p": c.order[0], "q": c.order[1], "P": c.order[2], "Q": c.order[3],
                         "tau1": w.tau1, "tau2": w.tau2, "tau3": w.tau3,
                         "c_fit": c.score.c_fit, "bic": c.score.bic, "c_fc": c.score.c_fc,
                         "r_fit": c.score.ranks[0], "r_bic": c.score.ranks[1], "r_fc": c.score.ranks[2],
                         "rank_sum": c.score.rank_sum})
        return rows

    def window_frequencies(self, n: int) -> dict[str, int]:
        """How often each window is tau* among the top n orders."""
        out: dict[str, int] = {}
        for c in self.best[:n]:
            out[str(c.window)] = out.get(str(c.window), 0) + 1
        return dict(sorted(out.items(), key=lambda kv: (-kv[1], kv[0])))

    def export(self, csv_path: str | Path, json_path: str | Path | None = None, top_n: int = 10,
               thresholds: dict | None = None, header_lines: Sequence[str] = ()) -> None:
        fields = ["p", "q", "P", "Q", "tau1", "tau2", "tau3", "c_fit", "bic", "c_fc",
                  "r_fit", "r_bic", "r_fc", "rank_sum"]
        with open(csv_path, "w", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(fields) + "\n")
            for r in self.table_rows():
                fh.write(",".join(repr(r[f]) if isinstance(r[f], float) else str(r[f]) for f in fields) + "\n")
        if json_path is None:
            return
        thresholds = thresholds or {}
        passing = [c for c in self.best
                   if all(getattr(c.score, k) <= v for k, v in thresholds.items())]
        summary = {
            "sigma0": self.sigma0,
            "metadata": self.metadata,
            "top": [_cell_json(c) for c in self.best[:top_n]],
            "thresholds": thresholds,
            "n_within_thresholds": len(passing) if thresholds else None,
            "window_frequencies_top": self.window_frequencies(top_n),
        }
        Path(json_path).write_text(json.dumps(summary, indent=1, sort_keys=True))


def _cell_json(c: Cell) -> dict:
    return {"order": list(c.order), "window": list(c.window) if c.window else None,
            "c_fit": c.score.c_fit, "bic": c.score.bic, "c_fc": c.score.c_fc,
            "ranks": list(c.score.ranks), "rank_sum": c.score.rank_sum, "error": c.error}


Evaluator = Callable[[Order, "HolidayWindow | None"], tuple[float, float, float]]


@dataclass
class SarimaxEvaluator:
    """Scores one grid cell by fitting it and running the C_FC backtest."""

    series: MonthlySeries
    sigma0: float
    protocol: BacktestProtocol
    extra: tuple[RegressorColumn, ...] = ()
    pulses: tuple[RegressorColumn, ...] = ()
    table: LunarTable | None = None
    fit_options: dict = field(default_factory=dict)

    def __call__(self, order: Order, window: HolidayWindow | None) -> tuple[float, float, float]:
        spec = model_spec(order, window, self.series, self.extra, self.pulses, self.table)
        m = fit(self.series, spec, compute_se=False, **self.fit_options)
        return c_fit(m, self.sigma0), bic(m), c_fc(self.series, spec, self.sigma0, self.protocol, self.fit_options)


def _evaluate(args) -> Cell:
    evaluator, order, window = args
    try:
        vals = evaluator(order, window)
        return Cell(order, window, ScoreTriple(*(float(v) for v in vals)))
    except (CpiForecastError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        logger.info("cell %s %s failed: %s", order, window, exc)
        return Cell(order, window, ScoreTriple(math.inf, math.inf, math.inf), f"{type(exc).__name__}: {exc}")


def grid_search(evaluator: Evaluator, orders: Sequence[Order], windows: Sequence[HolidayWindow | None],
                sigma0_value: float, workers: int | None = None,
                progress: Callable[[int, int], None] | None = None) -> GridResult:
    """Two-step rank-sum search over orders x windows.

    Cells are evaluated independently (in a process pool when ``workers``
    > 1) and reduced in a fixed order, so the result does not depend on
    scheduling.  Failed cells score +inf and rank last.
    """
    if not orders or not windows:
        raise ValueError("empty grid")
    tasks = [(evaluator, o, w) for o in orders for w in windows]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            cells = []
            for i, c in enumerate(pool.map(_evaluate, tasks, chunksize=max(1, len(tasks) // (8 * workers)))):
                cells.append(c)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        cells = []
        for i, t in enumerate(tasks):
            cells.append(_evaluate(t))
            if progress:
                progress(i + 1, len(tasks))
    by_key = {c.key: c for c in cells}

    ranked_cells: list[Cell] = []
    winners: list[Cell] = []
    for o in sorted(set(orders)):
        pool = [by_key[(o, _window_key(w))] for w in sorted(set(windows), key=_window_key)]
        keys = [c.key for c in pool]
        ranked = rank_pool([c.score for c in pool], keys)
        pool = [replace(c, score=s) for c, s in zip(pool, ranked)]
        ranked_cells.extend(pool)
        winners.append(pool[best_of_pool(ranked, keys)])

    keys = [c.key for c in winners]
    ranked = rank_pool([c.score for c in winners], keys)
    winners = [replace(c, score=s) for c, s in zip(winners, ranked)]
    winners.sort(key=lambda c: (c.score.rank_sum, c.key))
    meta = {"n_orders": len(set(orders)), "n_windows": len(set(windows)),
            "n_failed": sum(c.error is not None for c in cells),
            "tie_break": "smaller (p,q,P,Q,tau) wins ties in ranks and rank sums",
            "c_fc_divisor": C_FC_NOTE}
    return GridResult(sigma0_value, ranked_cells, winners, meta)


def default_grid() -> tuple[list[Order], list[HolidayWindow]]:
    return order_grid(2), holiday_grid()
