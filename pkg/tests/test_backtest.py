import math

import numpy as np
import pytest

from cpiforecast.backtest import (
    BacktestProtocol,
    DataAccessor,
    RandomWalkForecaster,
    SarimaxForecaster,
    Scheme,
    compare,
    run,
    sigma0,
)
from cpiforecast.calendar import intervention_column
from cpiforecast.errors import DataError
from cpiforecast.sarimax import SarimaParams, SarimaSpec, fit, forecast, simulate
from cpiforecast.timeseries import add_months, months_between

from conftest import make_series


class Recorder:
    """Stub engine: forecasts the last value and remembers every slice."""

    min_length = 1

    def __init__(self):
        self.slices = []

    def fit(self, train):
        self.slices.append((train.start, train.end))
        return float(train.values[-1])

    def update(self, state, train):
        return self.fit(train)

    def predict(self, state, horizons):
        return {h: state for h in horizons}


def test_constant_series_random_walk_zero_error():
    s = make_series(np.full(60, 3.0), start=(2002, 1))
    proto = BacktestProtocol(span_start=(2004, 1), span_end=(2006, 12))
    rep = run(s, RandomWalkForecaster(), proto, sigma0_value=1.0)
    assert all(rep.rmse(h) == 0 for h in proto.horizons)


def test_windows_match_index_arithmetic():
    s = make_series(np.arange(120.0), start=(2002, 1))
    for scheme in Scheme:
        proto = BacktestProtocol(scheme=scheme, span_start=(2007, 1), span_end=(2008, 6), horizons=(1, 3, 12))
        rec = Recorder()
        rep = run(s, rec, proto, sigma0_value=1.0)
        expected = set()
        for h in proto.horizons:
            for i in range(18):
                t = 60 + i  # position of the target month
                last = t - h
                first = 0 if scheme is Scheme.EXPANDING else last - (49 - h) + 1
                expected.add((s.month_at(first), s.month_at(last)))
                # the stub forecasts the value at the origin
                assert rep.results[h].forecasts[i] == last
                assert rep.results[h].actuals[i] == t
        assert set(rec.slices) == expected


def test_no_look_ahead_full_sarimax_backtest():
    spec = SarimaSpec(1, 1, 0, 0, 1, 1)
    z = simulate(spec, SarimaParams([0.3], [], [], [0.5]), 96, 1, start=(2002, 1))
    proto = BacktestProtocol(training_start=(2002, 1), span_start=(2006, 1), span_end=(2009, 12), horizons=(1, 2, 3))
    log = []
    run(z, SarimaxForecaster(spec), proto, accessor_log=log)
    train_reads = [(o, last) for o, last, what in log if what == "train"]
    assert train_reads
    assert all(months_between(o, last) <= 0 for o, last in train_reads)
    # evaluation reads happen only after forecasting and only at targets
    evals = [(o, t) for o, t, what in log if what == "evaluate"]
    assert len(evals) == 3 * 48


def test_accessor_logs_reads():
    acc = DataAccessor(make_series(np.arange(24.0)))
    acc.training((2002, 1), (2002, 6))
    acc.actual((2002, 6), (2002, 8))
    assert acc.reads == [((2002, 6), (2002, 6), "train"), ((2002, 6), (2002, 8), "evaluate")]


def test_report_identities(tmp_path):
    rng = np.random.default_rng(0)
    s = make_series(rng.normal(size=90).cumsum())
    proto = BacktestProtocol(span_start=(2006, 1), span_end=(2008, 6), horizons=(1, 6))
    rep = run(s, RandomWalkForecaster(), proto)
    for h, r in rep.results.items():
        assert np.array_equal(r.errors, r.forecasts - r.actuals)
        assert r.rmse == pytest.approx(math.sqrt(np.mean(r.errors**2)), rel=1e-12)
        # random walk forecast at origin t - h is the value at t - h
        assert np.array_equal(r.errors, [s.value_at(o) - s.value_at(t) for o, t in zip(r.origins, r.targets)])
    assert rep.sigma0 == sigma0(s.slice((2002, 1), (2008, 6)))
    paths = rep.export(tmp_path, header_lines=["run 1"])
    assert len(paths) == 5
    trace = (tmp_path / "backtest_trace_h1.csv").read_text().splitlines()
    assert trace[1] == "month,error" and trace[2].startswith("2006-01,")
    text = (tmp_path / "backtest_summary.csv").read_text().splitlines()
    assert text[0] == "# run 1" and text[1] == "h,rmse,rmse_over_sigma0"


def test_random_walk_rmse_matches_innovation_sd():
    spec = SarimaSpec(0, 1, 0, 0, 0, 0)
    vals = []
    for seed in range(5):
        z = simulate(spec, SarimaParams(sigma2=4.0), 180, seed, start=(2002, 1))
        proto = BacktestProtocol(span_start=(2009, 1), span_end=(2016, 11), horizons=(1,))
        rep = run(z, SarimaxForecaster(spec), proto, sigma0_value=1.0)
        vals.append(rep.rmse(1))
    assert np.mean(vals) == pytest.approx(2.0, rel=0.1)


def test_compare():
    s = make_series(np.random.default_rng(1).normal(size=80).cumsum())
    proto = BacktestProtocol(span_start=(2006, 1), span_end=(2008, 8), horizons=(1, 2))
    a = run(s, RandomWalkForecaster(), proto)
    assert compare(a, a) == {1: 1.0, 2: 1.0}
    b = run(s, RandomWalkForecaster(), BacktestProtocol(span_start=(2006, 2), span_end=(2008, 8), horizons=(1, 2)))
    with pytest.raises(DataError):
        compare(a, b)
    # scaled copy: RMSE doubles
    s2 = s.with_values(2 * s.values)
    c = run(s2, RandomWalkForecaster(), proto)
    assert compare(a, c) == {1: pytest.approx(0.5), 2: pytest.approx(0.5)}


def test_parallel_equals_sequential():
    spec = SarimaSpec(0, 1, 1, 0, 1, 1)
    z = simulate(spec, SarimaParams([], [], [0.3], [0.4]), 84, 2, start=(2002, 1))
    proto = BacktestProtocol(span_start=(2006, 1), span_end=(2008, 12), horizons=(1, 3))
    a = run(z, SarimaxForecaster(spec), proto)
    b = run(z, SarimaxForecaster(spec), proto, workers=2)
    for h in proto.horizons:
        assert np.array_equal(a.results[h].forecasts, b.results[h].forecasts)


def test_h1_matches_manual_refit():
    spec = SarimaSpec(1, 1, 0, 0, 1, 1)
    z = simulate(spec, SarimaParams([0.3], [], [], [0.5]), 80, 3, start=(2002, 1))
    proto = BacktestProtocol(span_start=(2007, 6), span_end=(2008, 8), horizons=(1,))
    engine = SarimaxForecaster(spec, warm_start=False)
    rep = run(z, engine, proto)
    for o, f in zip(rep.results[1].origins, rep.results[1].forecasts):
        m = fit(z.slice(None, o), spec, compute_se=False)
        assert f == forecast(m, 1)[0][0]


def test_interventions_after_origin_are_dropped():
    spec = SarimaSpec(0, 1, 1, 0, 1, 1)
    base = simulate(spec, SarimaParams([], [], [0.3], [0.4]), 96, 4, start=(2002, 1))
    ao = intervention_column(base.start, 96, "AO", (2008, 2))
    z = base.with_values(base.values + 5 * ao.values)
    engine = SarimaxForecaster(spec.with_regressors([ao]))
    early = engine.spec_for(z.slice(None, (2007, 12)))
    late = engine.spec_for(z.slice(None, (2008, 6)))
    assert len(early.mean_regressors) == 0 and len(late.mean_regressors) == 1
    proto = BacktestProtocol(span_start=(2007, 1), span_end=(2009, 12), horizons=(1, 2))
    rep = run(z, engine, proto)
    assert np.all(np.isfinite(rep.results[1].forecasts))


def test_unidentified_regressors_are_dropped():
    from cpiforecast.calendar import HolidayWindow
    from cpiforecast.selection import model_spec

    z = make_series(np.arange(179.0))
    ao = intervention_column(z.start, len(z), "AO", (2008, 2))
    engine = SarimaxForecaster(model_spec((1, 0, 0, 1), HolidayWindow(4, 0, 12), z, extra=(ao,)))
    # after differencing this window, the after column is half the before column
    spec = engine.spec_for(z.slice((2007, 4), (2010, 10)))
    assert [c.name for c in spec.mean_regressors] == ["SFBefore(4,0,12)", "AO2008-02"]
    # a longer window identifies it
    assert len(engine.spec_for(z.slice((2006, 1), (2010, 10))).mean_regressors) == 3


def test_refit_stride_reuses_coefficients():
    spec = SarimaSpec(1, 1, 0, 0, 1, 1)
    z = simulate(spec, SarimaParams([0.3], [], [], [0.5]), 90, 5, start=(2002, 1))
    full = BacktestProtocol(span_start=(2007, 1), span_end=(2009, 6), horizons=(1,))
    fast = BacktestProtocol(span_start=(2007, 1), span_end=(2009, 6), horizons=(1,), refit_stride=6)
    a = run(z, SarimaxForecaster(spec), full)
    b = run(z, SarimaxForecaster(spec), fast)
    # the first origin of each block is estimated identically
    assert np.array_equal(a.results[1].forecasts[::6], b.results[1].forecasts[::6])
    assert b.rmse(1) == pytest.approx(a.rmse(1), rel=0.2)


def test_protocol_validation():
    with pytest.raises(ValueError):
        BacktestProtocol(span_start=(2001, 1))
    with pytest.raises(ValueError):
        BacktestProtocol(horizons=(0,))
    with pytest.raises(ValueError):
        BacktestProtocol(scheme="rolling", horizons=(48,))
    s = make_series(np.arange(40.0))
    with pytest.raises(DataError):
        run(s, RandomWalkForecaster(), BacktestProtocol())
    assert BacktestProtocol().window((2009, 1), 12) == ((2002, 1), (2008, 1))
    assert BacktestProtocol(scheme="rolling").window((2009, 1), 12) == (add_months((2008, 1), -36), (2008, 1))
