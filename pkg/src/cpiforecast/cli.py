"""Command-line pipeline: ``cpiforecast <subcommand> [--config PATH] ...``.

Every run resolves a JSON configuration against the defaults below,
hashes it together with the bytes of the input files, and writes that
hash into a header on each artifact.  Exit status is 0 on success, 1 on
bad data or configuration and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .backtest import BacktestProtocol, SarimaxForecaster, Scheme, run, sigma0
from .calendar import (
    TAU_DURING,
    TAU_OUTER,
    HolidayWindow,
    LunarTable,
    RegressorKind,
    export_regressors,
    holiday_grid,
    intervention_column,
    sf_relative_percentage,
)
from .diffusion import (
    DiForecaster,
    OfficialAdjuster,
    Panel,
    SfAdjuster,
    di_forecast,
    export_loadings,
    extract_factors,
    make_target,
    reconstruct_cpi,
    transform_panel,
)
from .errors import CpiForecastError, DataError, NumericalError
from .outlierscan import census, detect, export_census, export_findings, type_counts
from .sarimax import fit
from .seasadj import Mode, decompose, seasonal_adjust, seasonality_from_adjusted
from .selection import SarimaxEvaluator, grid_search, model_spec, order_grid
from .timeseries import MonthlySeries, format_month, parse_month, read_matrix_csv, read_series_csv, write_series_csv

logger = logging.getLogger("cpiforecast")

SUBCOMMANDS = ("fit", "grid", "outliers", "sf-effects", "backtest", "seasadj", "di-forecast", "report")
FAST_STRIDE = 6

DEFAULTS: dict[str, Any] = {
    "series": None,  # bundled synthetic fixture when null
    "adjusted": None,  # official seasonally adjusted target (US pipeline)
    "panel": None,
    "lunar_table": None,
    "country": "CN",
    "order": [1, 0, 1, 2],
    "window": [4, 0, 12],
    "interventions": [],
    "max_order": 2,
    "orders": None,
    "tau_outer": list(TAU_OUTER),
    "tau_during": list(TAU_DURING),
    "windows": None,
    "outlier_C": 3.5,
    "outlier_window": None,
    "outlier_orders": None,
    "training_start": "2002-01",
    "span_start": "2009-01",
    "span_end": "2016-11",
    "horizons": [1, 2, 3, 6, 9, 12],
    "schemes": ["expanding", "rolling"],
    "engines": ["sarimax", "di"],
    "refit_stride": 1,
    "transform_codes": None,
    "covariate_modes": {},
    "seasadj_mode": None,
    "max_k": [1, 2, 3, 4, 5],
    "max_p": 6,
    "max_m": 6,
    "top_n": 10,
    "thresholds": {},
    "seed": 0,
    "threads": 1,
    "out": "out",
}
# keys that cannot change any artifact and stay out of the hash
_UNHASHED = ("out", "threads")


class ConfigError(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# --------------------------------------------------------------------------
# Configuration


@dataclass
class Context:
    config: dict
    base: Path  # directory that relative paths in the config refer to
    out: Path
    digest: str
    subcommand: str

    def header(self) -> list[str]:
        return [f"cpiforecast {__version__}", f"subcommand {self.subcommand}",
                f"config_sha256 {self.digest}", f"seed {self.config['seed']}"]

    def path(self, key: str) -> Path | None:
        v = self.config[key]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p


def _bundled(name: str) -> Path:
    return Path(str(resources.files("cpiforecast") / "data" / name))


def _validate(cfg: dict) -> None:
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    if cfg["country"] not in ("CN", "US"):
        raise ConfigError("country must be 'CN' or 'US'")
    if len(cfg["order"]) != 4 or any(not isinstance(o, int) or o < 0 for o in cfg["order"]):
        raise ConfigError("order must be four nonnegative integers [p, q, P, Q]")
    for key in ("window", "outlier_window"):
        if cfg[key] is not None and len(cfg[key]) != 3:
            raise ConfigError(f"{key} must be [tau1, tau2, tau3] or null")
    if cfg["orders"] is not None and not cfg["orders"]:
        raise ConfigError("orders must be nonempty")
    if cfg["windows"] is not None and not cfg["windows"]:
        raise ConfigError("windows must be nonempty")
    if not cfg["tau_outer"] or not cfg["tau_during"]:
        raise ConfigError("tau grids must be nonempty")
    if not cfg["horizons"] or any(int(h) < 1 for h in cfg["horizons"]):
        raise ConfigError("horizons must be positive integers")
    if not cfg["outlier_C"] > 0:
        raise ConfigError("outlier_C must be positive")
    if any(e not in ("sarimax", "di") for e in cfg["engines"]):
        raise ConfigError("engines must be drawn from 'sarimax' and 'di'")
    for s in cfg["schemes"]:
        Scheme(s)
    ks = cfg["max_k"] if isinstance(cfg["max_k"], list) else [cfg["max_k"]]
    if not ks or any(not 1 <= int(k) <= 5 for k in ks):
        raise ConfigError("max_k values must lie in 1..5")
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be at least 1")
    for item in cfg["interventions"]:
        if set(item) != {"kind", "month"} and set(item) != {"kind", "month", "delta"}:
            raise ConfigError("interventions are objects with 'kind', 'month' and optional 'delta'")
        RegressorKind(item["kind"])
        parse_month(item["month"])
    for name, mode in cfg["covariate_modes"].items():
        Mode(mode)


_INPUTS = ("series", "adjusted", "panel", "lunar_table")


def _input_paths(ctx: Context) -> dict[str, Path]:
    return {k: ctx.path(k) for k in _INPUTS if ctx.path(k) is not None}


def load_context(subcommand: str, config_path: str | None, overrides: dict) -> Context:
    cfg = dict(DEFAULTS)
    base = Path.cwd()
    if config_path:
        path = Path(config_path)
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        cfg.update(user)
        base = path.resolve().parent
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        _validate(cfg)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if cfg["series"] is None:
        cfg["series"] = str(_bundled("synthetic_cpi.csv"))
    if cfg["panel"] is None:
        cfg["panel"] = str(_bundled("synthetic_panel.csv"))
    ctx = Context(cfg, base, Path(cfg["out"]), "", subcommand)
    inputs = _input_paths(ctx)
    for p in inputs.values():
        if not p.is_file():
            raise ConfigError(f"input file not found: {p}")
    # inputs enter the hash by content, not by path
    hashed = {k: v for k, v in cfg.items() if k not in _UNHASHED and k not in _INPUTS}
    hashed["inputs"] = {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in inputs.items()}
    h = hashlib.sha256(json.dumps(hashed, sort_keys=True).encode())
    ctx.digest = h.hexdigest()
    return ctx


# --------------------------------------------------------------------------
# Shared builders


def _table(ctx: Context) -> LunarTable | None:
    p = ctx.path("lunar_table")
    return LunarTable.load(p) if p else None


def _series(ctx: Context) -> MonthlySeries:
    s = read_series_csv(ctx.path("series"))
    s.require_complete("the target series")
    return s


def _interventions(ctx: Context, series: MonthlySeries):
    mean, pulses = [], []
    for item in ctx.config["interventions"]:
        col = intervention_column(series.start, len(series), item["kind"], parse_month(item["month"]),
                                  item.get("delta"))
        (pulses if col.innovation_side else mean).append(col)
    return tuple(mean), tuple(pulses)


def _window(w) -> HolidayWindow | None:
    return None if w is None else HolidayWindow(*w)


def _spec(ctx: Context, series: MonthlySeries, order=None, window="config"):
    extra, pulses = _interventions(ctx, series)
    order = tuple(ctx.config["order"]) if order is None else order
    window = _window(ctx.config["window"]) if window == "config" else window
    return model_spec(order, window, series, extra, pulses, _table(ctx))


def _fit_options(ctx: Context) -> dict:
    return {"seed": int(ctx.config["seed"])}


def _protocol(ctx: Context, scheme: str, horizons=None, stride=None) -> BacktestProtocol:
    c = ctx.config
    return BacktestProtocol(Scheme(scheme), parse_month(c["training_start"]), parse_month(c["span_start"]),
                            parse_month(c["span_end"]), tuple(int(h) for h in (horizons or c["horizons"])),
                            refit_stride=int(stride or c["refit_stride"]))


def _grid(ctx: Context):
    c = ctx.config
    orders = [tuple(o) for o in c["orders"]] if c["orders"] is not None else order_grid(int(c["max_order"]))
    if c["windows"] is not None:
        windows = [HolidayWindow(*w) for w in c["windows"]]
    else:
        windows = holiday_grid(c["tau_outer"], c["tau_during"])
    return orders, windows


def _mode(ctx: Context) -> Mode:
    m = ctx.config["seasadj_mode"]
    if m is not None:
        return Mode(m)
    return Mode.ADDITIVE if ctx.config["country"] == "CN" else Mode.MULTIPLICATIVE


def _panel(ctx: Context) -> Panel:
    start, names, data = read_matrix_csv(ctx.path("panel"))
    data = data.copy()
    for name, mode in ctx.config["covariate_modes"].items():
        if name not in names:
            raise ConfigError(f"covariate_modes names unknown covariate {name!r}")
        j = names.index(name)
        dec = decompose(MonthlySeries(start, data[:, j], name), mode)
        data[:, j] = dec.adjusted.values
    codes = ctx.config["transform_codes"]
    if codes is None:
        codes = [2] * len(names)
    elif isinstance(codes, dict):
        missing = [n for n in names if n not in codes]
        if missing:
            raise ConfigError(f"transform_codes lacks covariates: {', '.join(missing)}")
        codes = [codes[n] for n in names]
    return transform_panel(Panel(start, tuple(names), data), codes)


def _adjuster(ctx: Context, series: MonthlySeries):
    if ctx.config["country"] == "US":
        p = ctx.path("adjusted")
        if p is None:
            raise ConfigError("the US pipeline needs the official adjusted series ('adjusted')")
        return OfficialAdjuster(read_series_csv(p)), "multiplicative"
    return SfAdjuster(_spec(ctx, series), fit_options=_fit_options(ctx)), "additive"


def _ks(ctx: Context) -> list[int]:
    k = ctx.config["max_k"]
    return [int(x) for x in (k if isinstance(k, list) else [k])]


def _write_json(path: Path, ctx: Context, payload: dict) -> None:
    payload = {"metadata": ctx.header(), **payload}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True, allow_nan=True) + "\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_fit(ctx: Context) -> list[Path]:
    """Fit the configured S-ARIMAX model and write its estimates."""
    z = _series(ctx)
    m = fit(z, _spec(ctx, z), **_fit_options(ctx))
    out = ctx.out / "model.json"
    _write_json(out, ctx, {"model": m.to_json(), "sigma0": sigma0(z)})
    return [out]


def cmd_grid(ctx: Context) -> list[Path]:
    """Rank-sum search over orders and holiday windows."""
    z = _series(ctx)
    extra, pulses = _interventions(ctx, z)
    s0 = sigma0(z)
    proto = _protocol(ctx, "expanding", horizons=(1,))
    ev = SarimaxEvaluator(z, s0, proto, extra, pulses, _table(ctx), _fit_options(ctx))
    orders, windows = _grid(ctx)

    def progress(i, n):
        if i == n or i % max(1, n // 20) == 0:
            logger.info("grid: %d of %d cells", i, n)

    res = grid_search(ev, orders, windows, s0, workers=int(ctx.config["threads"]), progress=progress)
    csv_path, json_path = ctx.out / "grid.csv", ctx.out / "grid.json"
    res.export(csv_path, json_path, top_n=int(ctx.config["top_n"]), thresholds=ctx.config["thresholds"],
               header_lines=ctx.header())
    return [csv_path, json_path]


def cmd_outliers(ctx: Context) -> list[Path]:
    """Outlier census over the order grid and findings of the configured model."""
    z = _series(ctx)
    c = ctx.config
    window = _window(c["outlier_window"])
    orders = [tuple(o) for o in c["outlier_orders"]] if c["outlier_orders"] is not None else order_grid(int(c["max_order"]))
    models = []
    for o in orders:
        try:
            models.append(fit(z, _spec(ctx, z, o, window), compute_se=False, **_fit_options(ctx)))
        except NumericalError as exc:
            logger.warning("order %s skipped in the census: %s", o, exc)
    if not models:
        raise NumericalError("no model in the outlier census could be fitted")
    cen = census(z, models, float(c["outlier_C"]), workers=int(c["threads"]))
    main = fit(z, _spec(ctx, z, window=window), compute_se=False, **_fit_options(ctx))
    found = detect(z, main, float(c["outlier_C"]))
    paths = [ctx.out / "outlier_census.csv", ctx.out / "outliers.csv", ctx.out / "outliers.json"]
    export_census(paths[0], cen, ctx.header())
    export_findings(paths[1], found, ctx.header())
    _write_json(paths[2], ctx, {"n_models": cen.n_models, "total": cen.total, "share": cen.share(),
                                "types_main_model": {k.value: v for k, v in sorted(type_counts(found).items())}})
    return paths


def cmd_sf_effects(ctx: Context) -> list[Path]:
    """Spring Festival regressors, fitted holiday effect and its share of the annual rate."""
    z = _series(ctx)
    spec = _spec(ctx, z)
    if spec.sf_window is None:
        raise ConfigError("sf-effects needs a nonzero holiday window")
    m = fit(z, spec, **_fit_options(ctx))
    H = z.with_values(m.sf_effect(), name="sf_effect")
    sf_cols = [c for c in spec.mean_regressors if c.kind.is_sf]
    paths = [ctx.out / "sf_regressors.csv", ctx.out / "sf_effect.csv", ctx.out / "sf_share.csv"]
    export_regressors(paths[0], sf_cols, ctx.header())
    write_series_csv(paths[1], H, ctx.header())
    write_series_csv(paths[2], sf_relative_percentage(z, H), ctx.header())
    return paths


def cmd_seasadj(ctx: Context) -> list[Path]:
    """Seasonal adjustment of the target (decomposition, or factors from an official series)."""
    z = _series(ctx)
    mode = _mode(ctx)
    if ctx.config["country"] == "US" and ctx.path("adjusted") is not None:
        sa = read_series_csv(ctx.path("adjusted"))
        S = seasonality_from_adjusted(z, sa)
        out = ctx.out / "seasonality.csv"
        write_series_csv(out, S, ctx.header())
        return [out]
    spec = _spec(ctx, z)
    fitted = fit(z, spec, **_fit_options(ctx)) if spec.sf_window is not None else None
    dec = seasonal_adjust(z, fitted, mode)
    out = ctx.out / "decomposition.csv"
    dec.export(out, ctx.header())
    return [out]


def _summary_name(engine: str, scheme: str, k: int | None = None) -> str:
    return f"{engine}_{scheme}" if k is None else f"{engine}_k{k}_{scheme}"


def cmd_backtest(ctx: Context) -> list[Path]:
    """Out-of-sample S-ARIMAX and diffusion-index backtests."""
    z = _series(ctx)
    c = ctx.config
    threads = int(c["threads"])
    paths: list[Path] = []
    s0 = sigma0(z.slice(parse_month(c["training_start"]), parse_month(c["span_end"])))
    for scheme in c["schemes"]:
        proto = _protocol(ctx, scheme)
        if "sarimax" in c["engines"]:
            engine = SarimaxForecaster(_spec(ctx, z), fit_options=_fit_options(ctx))
            rep = run(z, engine, proto, s0, workers=threads)
            paths += rep.export(ctx.out, _summary_name("sarimax", scheme), ctx.header())
        if "di" in c["engines"]:
            panel = _panel(ctx)
            for k in _ks(ctx):
                # a fresh adjuster per run keeps warm starts independent of run order
                adjust, mode = _adjuster(ctx, z)
                engine = DiForecaster(panel, k, int(c["max_p"]), int(c["max_m"]), mode, adjust)
                rep = run(z, engine, proto, s0, workers=threads)
                paths += rep.export(ctx.out, _summary_name("di", scheme, k), ctx.header())
    return paths


def _read_summary(path: Path) -> dict[int, float]:
    if not path.is_file():
        raise DataError(f"missing backtest summary {path}; run 'backtest' first")
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    if lines[0] != "h,rmse,rmse_over_sigma0":
        raise DataError(f"{path}: unexpected header {lines[0]!r}")
    out = {}
    for i, line in enumerate(lines[1:], start=2):
        try:
            h, rmse, _ = line.split(",")
            out[int(h)] = float(rmse)
        except ValueError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from exc
    return out


def cmd_report(ctx: Context) -> list[Path]:
    """Ratio of DI to S-ARIMAX RMSE per scheme, one row per max_k."""
    paths = []
    for scheme in ctx.config["schemes"]:
        base = _read_summary(ctx.out / f"{_summary_name('sarimax', scheme)}_summary.csv")
        hs = sorted(base)
        out = ctx.out / f"ratios_{scheme}.csv"
        with open(out, "w", encoding="utf-8") as fh:
            for line in ctx.header():
                fh.write(f"# {line}\n")
            fh.write("# RMSE of the diffusion-index engine over that of S-ARIMAX; below 1 favours DI\n")
            fh.write("max_k," + ",".join(f"h{h}" for h in hs) + "\n")
            for k in _ks(ctx):
                di = _read_summary(ctx.out / f"{_summary_name('di', scheme, k)}_summary.csv")
                if sorted(di) != hs:
                    raise DataError(f"DI and S-ARIMAX summaries cover different horizons ({scheme}, max_k={k})")
                fh.write(f"{k}," + ",".join(repr(di[h] / base[h]) for h in hs) + "\n")
        paths.append(out)
    return paths


def cmd_di_forecast(ctx: Context) -> list[Path]:
    """Forecasts from the end of the sample, plus the factor loadings."""
    z = _series(ctx)
    c = ctx.config
    panel = _panel(ctx).rows_through(z.end)
    max_k = max(_ks(ctx))
    fm, em = extract_factors(panel, max_k)
    adjust, mode = _adjuster(ctx, z)
    sa, components = adjust(z)
    rows = []
    for h in (int(h) for h in c["horizons"]):
        y, yh = make_target(sa, h)
        pred, tun = di_forecast(y, yh, fm.factors, panel.start, sa.end, h, max_k, int(c["max_p"]), int(c["max_m"]))
        S, H = components(h)
        cpi = reconstruct_cpi(sa, pred, h, S, H, mode)
        rows.append((h, tun.k, tun.p, tun.m, pred, cpi))
    paths = [ctx.out / "di_forecast.csv", ctx.out / "loadings.csv"]
    with open(paths[0], "w", encoding="utf-8") as fh:
        for line in ctx.header():
            fh.write(f"# {line}\n")
        fh.write(f"# origin {format_month(z.end)}; EM iterations {em.iterations}, converged {em.converged}\n")
        fh.write("h,k,p,m,yh,cpi_forecast\n")
        for h, k, p, m, pred, cpi in rows:
            fh.write(f"{h},{k},{p},{m},{pred!r},{cpi!r}\n")
    export_loadings(paths[1], panel.names, fm, max_k, ctx.header())
    return paths


COMMANDS = {
    "fit": cmd_fit,
    "grid": cmd_grid,
    "outliers": cmd_outliers,
    "sf-effects": cmd_sf_effects,
    "backtest": cmd_backtest,
    "seasadj": cmd_seasadj,
    "di-forecast": cmd_di_forecast,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpiforecast", description="Monthly CPI modelling and forecasting pipeline.")
    p.add_argument("--version", action="version", version=f"cpiforecast {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument("--seed", type=int, help="seed for optimizer restarts")
    common.add_argument("--fast", action="store_true", help=f"re-estimate every {FAST_STRIDE} origins in backtests")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=(COMMANDS[name].__doc__ or "").split("\n")[0] or None)
    return p


def run_subcommand(name: str, ctx: Context) -> list[Path]:
    if name not in COMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}")
    ctx.out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[name](ctx)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = {"out": args.out, "threads": args.threads, "seed": args.seed,
                     "refit_stride": FAST_STRIDE if args.fast else None}
        ctx = load_context(args.command, args.config, overrides)
        for p in run_subcommand(args.command, ctx):
            print(p)
        return 0
    except NumericalError as exc:
        print(f"cpiforecast: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (CpiForecastError, ValueError, OSError) as exc:
        print(f"cpiforecast: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
