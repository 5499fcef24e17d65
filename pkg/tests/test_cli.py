import hashlib
import json

import pytest

from cpiforecast import cli
from cpiforecast.backtest import BacktestProtocol, sigma0
from cpiforecast.calendar import HolidayWindow
from cpiforecast.selection import SarimaxEvaluator, grid_search
from cpiforecast.timeseries import read_series_csv

FIXTURE = cli._bundled("synthetic_cpi.csv")


def _config(tmp_path, **kw):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(kw))
    return str(p)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_fit_is_byte_identical_on_rerun(tmp_path):
    before = _digest(FIXTURE)
    assert cli.main(["fit", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["fit", "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    a = (tmp_path / "a" / "model.json").read_bytes()
    assert a == (tmp_path / "b" / "model.json").read_bytes()
    doc = json.loads(a)
    assert doc["metadata"][0].startswith("cpiforecast ")
    assert any(line.startswith("config_sha256 ") for line in doc["metadata"])
    assert doc["model"]["spec"]["orders"]["p"] == 1
    # inputs are never touched
    assert _digest(FIXTURE) == before


def test_seed_changes_the_hash(tmp_path):
    a = cli.load_context("fit", None, {"seed": 1})
    b = cli.load_context("fit", None, {"seed": 2})
    c = cli.load_context("fit", None, {"seed": 1, "out": "elsewhere", "threads": 8})
    assert a.digest != b.digest and a.digest == c.digest


def test_grid_two_by_two_matches_library(tmp_path):
    span = {"span_start": "2015-06", "span_end": "2016-11"}
    cfg = _config(tmp_path, orders=[[0, 0, 0, 1], [1, 0, 0, 1]], windows=[[4, 0, 12], [8, 0, 4]], **span)
    assert cli.main(["grid", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = [l for l in (tmp_path / "grid.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0].startswith("p,q,P,Q,tau1,tau2,tau3,")
    assert len(rows) == 1 + 4
    z = read_series_csv(FIXTURE)
    s0 = sigma0(z)
    proto = BacktestProtocol(span_start=(2015, 6), span_end=(2016, 11), horizons=(1,))
    ref = grid_search(SarimaxEvaluator(z, s0, proto, fit_options={"seed": 0}),
                      [(0, 0, 0, 1), (1, 0, 0, 1)], [HolidayWindow(4, 0, 12), HolidayWindow(8, 0, 4)], s0)
    summary = json.loads((tmp_path / "grid.json").read_text())
    assert [(tuple(c["order"]), tuple(c["window"])) for c in summary["top"]] == [c.key for c in ref.best]
    assert [c["rank_sum"] for c in summary["top"]] == [c.score.rank_sum for c in ref.best]


def test_backtest_then_report(tmp_path):
    cfg = _config(tmp_path, span_start="2016-03", span_end="2016-11", horizons=[1, 2], schemes=["expanding"],
                  max_k=[1, 2], max_p=2, max_m=2)
    out = str(tmp_path / "out")
    assert cli.main(["backtest", "--config", cfg, "--out", out, "--fast"]) == 0
    assert cli.main(["report", "--config", cfg, "--out", out]) == 0
    lines = [l for l in (tmp_path / "out" / "ratios_expanding.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "max_k,h1,h2"
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2"]
    ratios = [float(x) for x in lines[1].split(",")[1:]]
    assert all(r > 0 for r in ratios)


def test_report_without_backtest_is_a_data_error(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path)]) == 1
    assert "run 'backtest' first" in capsys.readouterr().err


def test_other_subcommands_emit_artifacts(tmp_path):
    cfg = _config(tmp_path, outlier_orders=[[0, 0, 0, 1]], horizons=[1, 2], max_k=[1], max_p=2, max_m=2)
    out = tmp_path / "o"
    for name in ("outliers", "sf-effects", "seasadj", "di-forecast"):
        assert cli.main([name, "--config", cfg, "--out", str(out)]) == 0
    for f in ("outlier_census.csv", "outliers.csv", "outliers.json", "sf_regressors.csv", "sf_effect.csv",
              "sf_share.csv", "decomposition.csv", "di_forecast.csv", "loadings.csv"):
        text = (out / f).read_text()
        assert "config_sha256" in text, f
    rows = [l for l in (out / "di_forecast.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "h,k,p,m,yh,cpi_forecast" and len(rows) == 3


def test_malformed_csv_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("date,cpi\n2002-01,100\n2002-02,abc\n")
    assert cli.main(["fit", "--config", _config(tmp_path, series=str(bad)), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "row 3" in err and "cpi" in err


def test_config_errors_exit_1(tmp_path):
    assert cli.main(["fit", "--config", _config(tmp_path, colour="blue")]) == 1
    assert cli.main(["fit", "--config", _config(tmp_path, order=[1, 0, 1])]) == 1
    assert cli.main(["fit", "--config", _config(tmp_path, series="nowhere.csv")]) == 1
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert cli.main(["fit", "--config", str(p)]) == 1
    assert cli.main(["nonsense"]) == 1


def test_numerical_failure_exit_2(tmp_path, capsys):
    # a level shift at the first month is a constant, which differencing removes
    cfg = _config(tmp_path, interventions=[{"kind": "LS", "month": "2002-01"}])
    assert cli.main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "numerical" in capsys.readouterr().err


def test_fast_flag_sets_stride():
    assert cli.load_context("backtest", None, {"refit_stride": cli.FAST_STRIDE}).config["refit_stride"] == 6
    with pytest.raises(cli.ConfigError):
        cli.load_context("backtest", None, {"threads": 0})


def test_us_pipeline_uses_the_official_adjusted_series(tmp_path):
    import numpy as np

    from cpiforecast.timeseries import write_series_csv

    z = read_series_csv(FIXTURE)
    S = 1.0 + 0.01 * np.sin(2 * np.pi * np.arange(len(z)) / 12)
    write_series_csv(tmp_path / "raw.csv", z.with_values(z.values * S))
    write_series_csv(tmp_path / "sa.csv", z)
    cfg = _config(tmp_path, country="US", series="raw.csv", adjusted="sa.csv", window=None,
                  horizons=[1], max_k=[1], max_p=2, max_m=2)
    out = tmp_path / "us"
    assert cli.main(["seasadj", "--config", cfg, "--out", str(out)]) == 0
    got = read_series_csv(out / "seasonality.csv")
    assert np.allclose(got.values, S, rtol=1e-12)
    assert cli.main(["di-forecast", "--config", cfg, "--out", str(out)]) == 0
    # without the adjusted series the US pipeline refuses to run
    assert cli.main(["di-forecast", "--config", _config(tmp_path, country="US", window=None)]) == 1
