"""Spring Festival regressors, intervention shapes and the SF share of
annual inflation."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .timeseries import (
    Month,
    MonthlySeries,
    add_months,
    format_month,
    month_index,
    months_between,
    write_matrix_csv,
)

# Lunar new year (solar date) by year.  2015 follows the price-index
# convention of February 18 (one day before the astronomical new moon date).
_SPRING_FESTIVAL = {
    1990: (1, 27), 1991: (2, 15), 1992: (2, 4), 1993: (1, 23), 1994: (2, 10),
    1995: (1, 31), 1996: (2, 19), 1997: (2, 7), 1998: (1, 28), 1999: (2, 16),
    2000: (2, 5), 2001: (1, 24), 2002: (2, 12), 2003: (2, 1), 2004: (1, 22),
    2005: (2, 9), 2006: (1, 29), 2007: (2, 18), 2008: (2, 7), 2009: (1, 26),
    2010: (2, 14), 2011: (2, 3), 2012: (1, 23), 2013: (2, 10), 2014: (1, 31),
    2015: (2, 18), 2016: (2, 8), 2017: (1, 28), 2018: (2, 16), 2019: (2, 5),
    2020: (1, 25), 2021: (2, 12), 2022: (2, 1), 2023: (1, 22), 2024: (2, 10),
    2025: (1, 29), 2026: (2, 17), 2027: (2, 6), 2028: (1, 26), 2029: (2, 13),
    2030: (2, 3),
}


def _check_sf_date(year: int, month: int, day: int) -> None:
    d = dt.date(year, month, day)
    if not dt.date(year, 1, 21) <= d <= dt.date(year, 2, 20):
        raise DataError(f"Spring Festival {d} outside January 21 - February 20")


@dataclass(frozen=True)
class LunarTable:
    """Year -> Spring Festival solar date (month, day)."""

    dates: dict = field(default_factory=lambda: dict(_SPRING_FESTIVAL))
    source: str = "embedded"

    def __post_init__(self):
        for year, (m, d) in self.dates.items():
            _check_sf_date(year, m, d)

    @classmethod
    def default(cls) -> "LunarTable":
        return cls()

    @classmethod
    def load(cls, path: str | Path, merge: bool = True) -> "LunarTable":
        """Read a ``year,month,day`` override file.

        With ``merge`` the file's entries replace the embedded ones for
        the years it lists; other years keep the embedded dates.
        """
        path = Path(path)
        dates = dict(_SPRING_FESTIVAL) if merge else {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip().lower() for h in next(reader, [])]
            if header != ["year", "month", "day"]:
                raise DataError(f"{path}: header must be 'year,month,day'")
            for line, row in enumerate(reader, start=2):
                if not row or not any(c.strip() for c in row):
                    continue
                try:
                    y, m, d = (int(c) for c in row)
                    _check_sf_date(y, m, d)
                except (ValueError, TypeError) as exc:
                    raise DataError(f"{path}: row {line}: {exc}") from exc
                dates[y] = (m, d)
        return cls(dates, str(path))

    def date(self, year: int) -> dt.date:
        try:
            m, d = self.dates[year]
        except KeyError:
            raise DataError(f"lunar table has no Spring Festival date for {year}") from None
        return dt.date(year, m, d)

    def __contains__(self, year: int) -> bool:
        return year in self.dates

    def to_json(self) -> dict:
        return {"source": self.source, "dates": {str(y): list(md) for y, md in sorted(self.dates.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "LunarTable":
        return cls({int(y): tuple(md) for y, md in obj["dates"].items()}, obj.get("source", "json"))


@dataclass(frozen=True, order=True)
class HolidayWindow:
    """Lengths in days of the before / during / after sub-periods."""

    tau1: int = 0
    tau2: int = 0
    tau3: int = 0

    def __post_init__(self):
        if min(self.tau1, self.tau2, self.tau3) < 0:
            raise ValueError("holiday window lengths must be nonnegative")

    def __iter__(self):
        return iter((self.tau1, self.tau2, self.tau3))

    @property
    def n_nonzero(self) -> int:
        return sum(t > 0 for t in self)

    def __str__(self) -> str:
        return f"({self.tau1},{self.tau2},{self.tau3})"


TAU_OUTER = (0, 4, 8, 12, 16, 20, 24)
TAU_DURING = (0, 4, 8)


def holiday_grid(outer: Sequence[int] = TAU_OUTER, during: Sequence[int] = TAU_DURING) -> list[HolidayWindow]:
    """All (tau1, tau2, tau3) combinations; 147 with the defaults."""
    return [HolidayWindow(a, b, c) for a, b, c in itertools.product(outer, during, outer)]


class RegressorKind(str, enum.Enum):
    SF_BEFORE = "SFBefore"
    SF_DURING = "SFDuring"
    SF_AFTER = "SFAfter"
    AO = "AO"
    LS = "LS"
    TC = "TC"
    IO = "IO"

    @property
    def is_sf(self) -> bool:
        return self in (RegressorKind.SF_BEFORE, RegressorKind.SF_DURING, RegressorKind.SF_AFTER)


_SF_KINDS = (RegressorKind.SF_BEFORE, RegressorKind.SF_DURING, RegressorKind.SF_AFTER)


@dataclass(frozen=True)
class RegressorColumn:
    """A deterministic regressor aligned to a run of months.

    The definition fields (kind, anchor, delta, window, table) are enough to
    regenerate the column over any other span via :meth:`over`.
    """

    kind: RegressorKind
    start: Month
    values: np.ndarray
    anchor: Month | None = None
    delta: float | None = None
    window: HolidayWindow | None = None
    table: LunarTable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", RegressorKind(self.kind))

    def __len__(self) -> int:
        return self.values.size

    @property
    def name(self) -> str:
        if self.kind.is_sf:
            return f"{self.kind.value}{self.window}"
        return f"{self.kind.value}{format_month(self.anchor)}"

    @property
    def innovation_side(self) -> bool:
        return self.kind is RegressorKind.IO

    def over(self, start: Month, length: int) -> "RegressorColumn":
        """Same regressor definition evaluated over another span."""
        if self.kind.is_sf:
            values = _sf_values(start, length, self.table, self.window)[_SF_KINDS.index(self.kind)]
        else:
            values = _shape_values(self.kind, self.anchor, self.delta, start, length)
        return replace(self, start=start, values=values)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.anchor is not None:
            out["anchor"] = format_month(self.anchor)
        if self.delta is not None:
            out["delta"] = self.delta
        if self.window is not None:
            out["window"] = list(self.window)
        return out


# --------------------------------------------------------------------------
# Spring Festival day counts


def _sub_periods(sf: dt.date, w: HolidayWindow) -> list[tuple[dt.date, int]]:
    """(first day, length) of the before / during / after periods."""
    one = dt.timedelta(days=1)
    return [
        (sf - w.tau1 * one, w.tau1),
        (sf, w.tau2),
        (sf + w.tau2 * one, w.tau3),
    ]


def _sf_values(start: Month, length: int, table: LunarTable | None, w: HolidayWindow) -> np.ndarray:
    table = table or LunarTable.default()
    out = np.zeros((3, length))
    if length <= 0:
        return out
    first_idx = month_index(*start)
    end = add_months(start, length - 1)
    for year in range(start[0], end[0] + 2):
        if year not in table:
            if _periods_hit_range(year, start, end, w):
                raise DataError(f"lunar table has no Spring Festival date for {year}")
            continue
        for i, (first, n_days) in enumerate(_sub_periods(table.date(year), w)):
            for k in range(n_days):
                day = first + dt.timedelta(days=k)
                j = month_index(day.year, day.month) - first_idx
                if 0 <= j < length:
                    out[i, j] += 1.0
    for i, tau in enumerate(w):
        if tau > 0:
            out[i] /= tau
    return out


def _periods_hit_range(year: int, start: Month, end: Month, w: HolidayWindow) -> bool:
    # The festival falls on Jan 21 .. Feb 20, so only a before-period longer
    # than 20 days can reach December of the previous year.
    lo = month_index(year - 1, 12) if w.tau1 > 20 else month_index(year, 1)
    hi = month_index(year, 3)
    return not (hi < month_index(*start) or lo > month_index(*end))


def sf_regressors(start: Month, length: int, w: HolidayWindow,
                  table: LunarTable | None = None) -> tuple[RegressorColumn, RegressorColumn, RegressorColumn]:
    """Before / during / after Spring Festival regressors over ``length`` months.

    H_i(t) is the share of sub-period i's days falling in month t, and is
    identically zero when that sub-period has zero length.
    """
    table = table or LunarTable.default()
    values = _sf_values(start, length, table, w)
    return tuple(
        RegressorColumn(kind, start, values[i], window=w, table=table) for i, kind in enumerate(_SF_KINDS)
    )


# --------------------------------------------------------------------------
# Intervention shapes


def _shape_values(kind: RegressorKind, anchor: Month, delta: float | None, start: Month, length: int) -> np.ndarray:
    j = np.arange(length) - months_between(start, anchor)
    if kind in (RegressorKind.AO, RegressorKind.IO):
        return (j == 0).astype(float)
    if kind is RegressorKind.LS:
        return (j >= 0).astype(float)
    if kind is RegressorKind.TC:
        out = np.zeros(length)
        after = j >= 0
        out[after] = delta ** j[after]
        return out
    raise ValueError(f"{kind} is not an intervention shape")


def intervention_column(start: Month, length: int, kind: RegressorKind | str, anchor: Month,
                        delta: float = 0.8) -> RegressorColumn:
    """AO / IO pulse, LS step or TC geometric decay anchored at ``anchor``."""
    kind = RegressorKind(kind)
    if kind.is_sf:
        raise ValueError("use sf_regressors for Spring Festival columns")
    if not 0 <= months_between(start, anchor) < length:
        raise DataError(f"anchor {format_month(anchor)} outside the regressor span")
    if kind is RegressorKind.TC:
        if not 0.0 < delta < 1.0:
            raise ValueError("TC decay must lie in (0, 1)")
    else:
        delta = None
    return RegressorColumn(kind, start, _shape_values(kind, anchor, delta, start, length), anchor=anchor, delta=delta)


def export_regressors(path: str | Path, columns: Sequence[RegressorColumn], header_lines=()) -> None:
    if not columns:
        raise ValueError("nothing to export")
    start = columns[0].start
    if any(c.start != start or len(c) != len(columns[0]) for c in columns):
        raise DataError("regressor columns are not aligned")
    write_matrix_csv(path, start, [c.name for c in columns], np.column_stack([c.values for c in columns]),
                     header_lines)


# --------------------------------------------------------------------------
# Relative size of the SF effect in annual rates


def annual_rate(values: np.ndarray) -> np.ndarray:
    """12-month percent change; the first 12 entries are dropped."""
    return 100.0 * (values[12:] / values[:-12] - 1.0)


def sf_relative_percentage(raw: MonthlySeries, sf_effect: MonthlySeries,
                           months: Sequence[int] = (1, 2)) -> MonthlySeries:
    """|R_t - R~_t| / |R_t| where R is the annual rate of ``raw`` and R~
    that of ``raw - sf_effect``; reported for the calendar ``months``
    (other entries NaN).  Output starts 12 months after ``raw``."""
    if raw.start != sf_effect.start or len(raw) != len(sf_effect):
        raise DataError("raw series and SF effect are not aligned")
    if len(raw) < 13:
        raise DataError("annual rates need at least 13 months")
    raw.require_complete("relative SF percentage")
    r = annual_rate(raw.values)
    r_adj = annual_rate(raw.values - sf_effect.values)
    out_start = add_months(raw.start, 12)
    cal = (np.arange(r.size) + out_start[1] - 1) % 12 + 1
    report = np.isin(cal, list(months))
    if (r[report] == 0).any():
        bad = np.flatnonzero(report & (r == 0))[0]
        raise DataError(f"annual rate is zero at {format_month(add_months(out_start, int(bad)))}")
    out = np.full(r.size, np.nan)
    out[report] = np.abs(r[report] - r_adj[report]) / np.abs(r[report])
    return MonthlySeries(out_start, out, "sf_relative_percentage")
