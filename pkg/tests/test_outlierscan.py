import numpy as np
import pytest

from cpiforecast.calendar import intervention_column
from cpiforecast.errors import DataError
from cpiforecast.outlierscan import (
    OutlierKind,
    census,
    detect,
    detect_iterative,
    export_census,
    export_findings,
    filtered_residuals,
    scan,
)
from cpiforecast.sarimax import FittedModel, SarimaParams, SarimaSpec, fit, simulate
from cpiforecast.timeseries import read_matrix_csv

SPEC = SarimaSpec(1, 1, 0, 0, 1, 1)
TRUTH = SarimaParams([0.4], [], [], [0.5])


def _fixed(series, spec=SPEC, params=TRUTH):
    n = len(series) - spec.diff_order
    return FittedModel(spec, series, params, 0.0, np.ones(n), {})


def test_filtered_residuals_recover_innovations():
    # with true parameters and a long sample, pi(B) Z is close to a_t
    # once the zero pre-sample transient has died out
    spec = SarimaSpec(1, 0, 0, 0, 0, 0)
    e = np.random.default_rng(3).standard_normal(400)
    z = np.zeros(400)
    for t in range(400):
        z[t] = 0.5 * (z[t - 1] if t else 0.0) + e[t]
    m = _fixed(simulate(spec, SarimaParams([0.5]), 10, 0).with_values(z), spec, SarimaParams([0.5]))
    assert np.allclose(filtered_residuals(m), e, atol=1e-12)


def test_templates_by_hand():
    # white-noise model after differencing: pi(B) = (1-B)(1-B^12)
    spec = SarimaSpec(0, 1, 0, 0, 1, 0)
    z = simulate(spec, SarimaParams(), 60, 1)
    omegas, ts = scan(_fixed(z, spec, SarimaParams()))
    e = filtered_residuals(_fixed(z, spec, SarimaParams()))
    k = 10
    x_ao = np.zeros(e.size)
    x_ao[k], x_ao[k + 1], x_ao[k + 12], x_ao[k + 13] = 1, -1, -1, 1
    assert omegas[OutlierKind.AO][k] == pytest.approx(e @ x_ao / 4, rel=1e-12)
    x_ls = np.zeros(e.size)
    x_ls[k], x_ls[k + 12] = 1, -1
    assert omegas[OutlierKind.LS][k] == pytest.approx(e @ x_ls / 2, rel=1e-12)
    assert omegas[OutlierKind.IO][k] == pytest.approx(e[k])


def test_ao_and_io_coincide_at_last_observation():
    z = simulate(SPEC, TRUTH, 120, 4)
    omegas, ts = scan(fit(z, SPEC))
    assert abs(ts[OutlierKind.AO][-1] - ts[OutlierKind.IO][-1]) <= 1e-10
    assert abs(omegas[OutlierKind.AO][-1] - omegas[OutlierKind.IO][-1]) <= 1e-10


def test_false_positive_rate_on_clean_series():
    total = 0
    for seed in range(100):
        z = simulate(SPEC, TRUTH, 180, seed)
        total += len(detect(z, fit(z, SPEC), 3.5))
    assert total / 100 <= 2.0


def test_additive_spike_detected():
    hits = 0
    for seed in range(100):
        z = simulate(SPEC, TRUTH, 180, seed)
        bumped = z.with_values(z.values + 8.0 * (np.arange(180) == 100))
        found = [f for f in detect(bumped, fit(bumped, SPEC)) if f.month == z.month_at(100)]
        hits += bool(found) and found[0].kind is OutlierKind.AO and abs(found[0].t_stat) > 3.5
    assert hits >= 90


def test_findings_invariants():
    z = simulate(SPEC, TRUTH, 150, 8)
    z = z.with_values(z.values + 6.0 * (np.arange(150) == 70) + 5.0 * (np.arange(150) >= 110))
    m = fit(z, SPEC)
    found = detect(z, m, 3.0)
    assert found and all(abs(f.t_stat) >= 3.0 for f in found)
    assert [abs(f.t_stat) for f in found] == sorted((abs(f.t_stat) for f in found), reverse=True)
    assert len({f.month for f in found}) == len(found)
    assert detect(z, m, 3.0) == found


def test_detect_errors():
    z = simulate(SPEC, TRUTH, 60, 1)
    m = fit(z, SPEC)
    with pytest.raises(ValueError):
        detect(z, m, 0.0)
    with pytest.raises(DataError):
        detect(z.with_values(z.values + 1), m)


def test_iterative_level_shift():
    right_type = 0
    for seed in range(10):
        z = simulate(SPEC, TRUTH, 180, seed)
        t1 = 90 + seed
        z = z.with_values(z.values + 8.0 * (np.arange(180) >= t1))
        res = detect_iterative(z, SPEC)
        assert res.complete
        hit = [f for f in res.findings if f.month == z.month_at(t1)]
        assert hit
        right_type += hit[0].kind is OutlierKind.LS
        # no seasonal or neighbouring echoes of the shift survive the refit
        others = [f for f in res.findings if f.month != z.month_at(t1)]
        assert all(abs(z.position(f.month) - t1) > 13 for f in others)
        model, findings = res
        assert all(f.month in {g.month for g in findings} for f in detect(z, model))
    assert right_type >= 7


def test_iterative_clean_series_unchanged():
    z = simulate(SPEC, TRUTH, 180, 2)
    res = detect_iterative(z, SPEC)
    assert res.findings == [] and res.rounds == 1
    assert res.model.loglik == fit(z, SPEC).loglik


def test_census_matches_recount(tmp_path):
    z = simulate(SPEC, TRUTH, 150, 5)
    z = z.with_values(z.values + 9.0 * (np.arange(150) == 80))
    specs = [SarimaSpec(p, 1, q, 0, 1, 1) for p in (0, 1) for q in (0, 1)]
    models = [fit(z, s) for s in specs]
    c = census(z, models)
    per_model = [{f.month for f in detect(z, m)} for m in models]
    assert c.counts[80] == sum(z.month_at(80) in s for s in per_model)
    assert c.total == sum(len(s) for s in per_model)
    assert c.counts.max() <= len(models)
    assert np.array_equal(census(z, models, workers=2).counts, c.counts)
    share = c.share()
    assert sum(share.values()) == pytest.approx(1.0)
    export_census(tmp_path / "c.csv", c)
    start, names, data = read_matrix_csv(tmp_path / "c.csv")
    assert names == ["count"] and data[80, 0] == c.counts[80]
    export_findings(tmp_path / "f.csv", detect(z, models[0]))
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "date,type,omega,t_stat"


def test_census_empty_and_zero():
    z = simulate(SPEC, TRUTH, 120, 2)
    with pytest.raises(ValueError):
        census(z, [])
    c = census(z, [fit(z, SPEC)], C=50.0)
    assert c.total == 0 and c.share() == {"jan": 0.0, "feb": 0.0, "other": 0.0}


def test_regressor_from_finding():
    z = simulate(SPEC, TRUTH, 60, 0)
    from cpiforecast.outlierscan import OutlierFinding

    col = OutlierFinding((2001, 3), OutlierKind.TC, 1.0, 4.0).regressor(z.start, 60)
    assert col.values[14] == 1.0 and col.values[15] == pytest.approx(0.8)
    assert np.array_equal(col.values, intervention_column(z.start, 60, "TC", (2001, 3)).values)
