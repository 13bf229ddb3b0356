import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatmort import exposure as ex
from heatmort.lgm import MaternParams


# -- daily reduction ---------------------------------------------------------


def test_reduce_rh_mean():
    assert ex.reduce_to_daily([50, 60, 70], "rh") == 60


def test_reduce_o3_constant():
    assert ex.reduce_to_daily(np.full(24, 80.0), "o3_8h") == pytest.approx(80.0)


def test_reduce_o3_final_window():
    vals = np.r_[np.zeros(16), np.full(8, 120.0)]
    assert ex.reduce_to_daily(vals, "o3_8h") == 120.0


def test_reduce_all_missing_is_nan():
    assert math.isnan(ex.reduce_to_daily([np.nan, np.nan], "tmax"))
    assert math.isnan(ex.reduce_to_daily(np.full(24, np.nan), "o3_8h"))


def test_reduce_o3_needs_full_window():
    vals = np.full(24, 50.0)
    vals[::4] = np.nan
    assert math.isnan(ex.reduce_to_daily(vals, "o3_8h"))


def test_daily_from_readings_hourly_o3():
    hours = pd.date_range("2016-07-01", periods=24, freq="h")
    df = pd.DataFrame({"station_id": "S1", "datetime": hours, "variable": "o3_8h",
                       "value": np.r_[np.zeros(16), np.full(8, 120.0)]})
    out = ex.daily_from_readings(df)
    assert out["value"].tolist() == [120.0]


# -- stations ---------------------------------------------------------------


@pytest.mark.parametrize("alt,kept", [(1500.0, False), (1499.0, True), (0.0, True), (2100.0, False)])
def test_altitude_limit(alt, kept):
    df = pd.DataFrame({"station_id": ["S"], "x_km": [0.0], "y_km": [0.0], "altitude_m": [alt]})
    assert len(ex.exclude_high_stations(df)) == int(kept)


def test_altitude_empty():
    df = pd.DataFrame(columns=["station_id", "x_km", "y_km", "altitude_m"])
    assert len(ex.exclude_high_stations(df)) == 0
    assert ex.exclude_high_stations([]) == []


# -- GP prediction ----------------------------------------------------------

STATIONS = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [5.0, 3.0]])


@given(st.floats(-20, 50), st.floats(0.1, 5), st.floats(1, 80))
@settings(max_examples=30, deadline=None)
def test_constant_field_is_fixed_point(c, sigma, rho):
    pred = ex.predict_daily_field(STATIONS, np.full(5, c), [[3.0, 4.0], [50.0, 50.0]],
                                  MaternParams(sigma, rho), nugget_sd=0.3)
    np.testing.assert_allclose(pred.mean, c, atol=1e-8 * max(1, abs(c)))


def test_interpolation_limit_at_station():
    vals = np.array([20.0, 25.0, 22.0, 30.0, 27.0])
    pred = ex.predict_daily_field(STATIONS, vals, [[10.0, 0.0]], MaternParams(2.0, 15.0), nugget_sd=1e-6)
    assert pred.mean[0] == pytest.approx(25.0, abs=1e-4)
    assert pred.sd[0] < 1e-3


def test_prediction_errors():
    with pytest.raises(ex.ExposureError):
        ex.predict_daily_field(STATIONS[:2], [1.0, 2.0], [[0, 0]], MaternParams(1, 10), 0.1)
    dup = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ex.ExposureError):
        ex.predict_daily_field(dup, [1.0, 2.0, 3.0], [[0, 0]], MaternParams(1, 10), 0.1)


def test_prediction_interval_coverage():
    # fields drawn from the GP itself; 95% intervals at a held-out centroid
    rng = np.random.default_rng(11)
    params = MaternParams(1.5, 12.0)
    nugget = 0.2
    target = np.array([[4.0, 6.0]])
    pts = np.vstack([STATIONS, target])
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    from heatmort.lgm import matern_cov
    L = np.linalg.cholesky(matern_cov(d, params) + 1e-10 * np.eye(6))
    hits = 0
    n = 1000
    for _ in range(n):
        f = 20.0 + L @ rng.standard_normal(6)
        y = f[:5] + nugget * rng.standard_normal(5)
        pred = ex.predict_daily_field(STATIONS, y, target, params, nugget)
        hits += abs(f[5] - pred.mean[0]) <= 1.959964 * pred.sd[0]
    assert 0.93 <= hits / n <= 0.97


# -- triggers ---------------------------------------------------------------


def _tmax_frame(values_by_year, area="A"):
    rows = []
    for year, values in values_by_year.items():
        days = pd.date_range(f"{year}-06-01", f"{year}-09-30")
        for d, v in zip(days, np.resize(values, len(days))):
            rows.append((area, d, float(v)))
    return pd.DataFrame(rows, columns=["area_id", "date", "tmax_c"])


def test_trigger_constant():
    tab = ex.compute_trigger_table(_tmax_frame({2016: [30.0]}), reference_years=[2016])
    assert all(v == 30.0 for v in tab.values.values())


def test_trigger_one_to_hundred():
    assert ex.percentile(np.arange(1, 101), 0.95) == pytest.approx(95.05, abs=1e-12)
    # 100 June days spread over reference years carry values 1..100
    df = _tmax_frame({y: [20.0] for y in (2012, 2013, 2014, 2016)})
    june = df.index[df["date"].dt.month == 6][:100]
    df.loc[june, "tmax_c"] = np.arange(1.0, 101.0)
    df = df.drop(df.index[(df["date"].dt.month == 6)].difference(june))
    tab = ex.compute_trigger_table(df)
    assert tab.get("A", 6) == pytest.approx(95.05, abs=1e-12)
    assert tab.get("A", 7) == 20.0


def test_trigger_ignores_2015():
    base = _tmax_frame({y: np.linspace(25, 35, 30) for y in (2014, 2016)})
    hot = _tmax_frame({2015: [48.0]})
    with_2015 = ex.compute_trigger_table(pd.concat([base, hot]))
    without = ex.compute_trigger_table(base)
    assert with_2015.values == without.values
    assert ex.compute_trigger_table(pd.concat([base, hot]), reference_years=[2014, 2015, 2016]).values != without.values


def test_trigger_insufficient_data():
    df = _tmax_frame({2016: [30.0]}).iloc[:10]
    with pytest.raises(ex.ExposureError, match=r"\(A, month"):
        ex.compute_trigger_table(df, reference_years=[2016])


@given(st.permutations(range(122)))
@settings(max_examples=20, deadline=None)
def test_trigger_order_invariant(perm):
    df = _tmax_frame({2016: np.random.default_rng(0).normal(30, 3, 122)})
    a = ex.compute_trigger_table(df, reference_years=[2016])
    b = ex.compute_trigger_table(df.iloc[list(perm)], reference_years=[2016])
    assert a.values == b.values


# -- indicators -------------------------------------------------------------


@pytest.mark.parametrize("tmax,trig,flag", [(35.1, 35.0, 1), (35.0, 35.0, 0), (20.0, 35.0, 0)])
def test_extreme_heat(tmax, trig, flag):
    assert ex.extreme_heat_indicator(tmax, trig) == flag


@pytest.mark.parametrize("counts,expected", [
    ([0, 0, 0], [0, 0, 0]),
    ([1, 1, 1, 0], [1, 1, 1, 0]),
    ([1, 1, 0, 1, 1], [0, 0, 0, 0, 0]),
    ([1, 1, 1, 1, 1], [1, 1, 1, 1, 1]),
])
def test_heatwave_counts(counts, expected):
    assert ex.heatwave_indicator(counts, station_count=10).tolist() == expected


def test_station_threshold_ceil():
    assert ex.station_threshold(10, 0.1) == 1
    assert ex.station_threshold(30, 0.1) == 3
    assert ex.station_threshold(31, 0.1) == 4
    assert ex.station_threshold(5, 0.1) == 1


def test_heatwave_station_relabel_invariant():
    rng = np.random.default_rng(2)
    flags = (rng.random((40, 12)) < 0.2).astype(float)
    base = ex.heatwave_indicator(flags)
    for _ in range(10):
        assert np.array_equal(ex.heatwave_indicator(flags[:, rng.permutation(12)]), base)


def test_heatwave_noncritical_flip_exhaustive():
    # 4 stations, threshold 1: a flip on a day with >=2 flagged stations or
    # adding a flag on an already-qualifying day never changes the output
    import itertools
    for pattern in itertools.product([0, 1], repeat=5):
        flags = np.zeros((5, 4))
        flags[:, 0] = pattern
        flags[:, 1] = pattern
        base = ex.heatwave_indicator(flags, frac=0.1)
        for day in range(5):
            for s in range(4):
                f2 = flags.copy()
                if flags[day, :].sum() >= 2:
                    f2[day, s] = 1 - f2[day, s]
                    assert np.array_equal(ex.heatwave_indicator(f2, frac=0.1), base)


@pytest.mark.parametrize("rh,thr,flag", [(80, 75, 1), (75, 75, 0)])
def test_q4_humidity(rh, thr, flag):
    assert ex.q4_humidity_indicator(rh, thr) == flag


def test_q4_threshold_percentile():
    thr = ex.q4_humidity_threshold(np.arange(1, 101))
    assert thr == pytest.approx(75.25, abs=1e-12)
    assert ex.q4_humidity_indicator(75.3, thr) == 1


def _series(values, end="2016-07-10"):
    idx = pd.date_range(end=end, periods=len(values))
    return pd.Series(values, index=idx, dtype=float)


def test_lagged_mean_excludes_day_t():
    s = _series([10, 20, 30, 999])
    assert ex.lagged_mean(s, s.index[-1], 3) == 20


def test_lagged_mean_l1_and_l7():
    s = _series([1, 2, 3, 4, 5, 6, 7, 100])
    assert ex.lagged_mean(s, s.index[-1], 1) == 7
    assert ex.lagged_mean(s, s.index[-1], 7) == 4


def test_lagged_mean_missing():
    s = _series([1, np.nan, 3, 4])
    assert math.isnan(ex.lagged_mean(s, s.index[-1], 3))


def test_lagged_indicator():
    s = _series([1, 0, 0, 0, 0, 0, 0, 0])
    assert ex.lagged_indicator(s, s.index[-1], 7) == 1
    assert ex.lagged_indicator(s, s.index[-1], 3) == 0
    with pytest.raises(ex.ExposureError):
        ex.lagged_indicator(s, s.index[-1], 0)
    with pytest.raises(ex.ExposureError):
        ex.lagged_mean(s, s.index[-1], 0)


@given(st.lists(st.floats(0, 200, allow_nan=False), min_size=2, max_size=40), st.integers(1, 14))
@settings(max_examples=60, deadline=None)
def test_lagged_arrays_match_scalar(values, l):
    s = _series(values)
    arr_m = ex.lagged_mean_array(np.array(values, dtype=float), l)
    arr_i = ex.lagged_array(np.array(values, dtype=float), l)
    for k, t in enumerate(s.index):
        m = ex.lagged_mean(s, t, l)
        i = ex.lagged_indicator(s, t, l)
        assert (math.isnan(m) and math.isnan(arr_m[k])) or m == pytest.approx(arr_m[k], rel=1e-12, abs=1e-9)
        assert (math.isnan(i) and math.isnan(arr_i[k])) or i == arr_i[k]


@pytest.mark.parametrize("pollutant,value,cat", [
    ("o3", 75, 2), ("o3", 120.0, 4), ("o3", 59.999, 1), ("o3", 60.0, 2), ("o3", 100.0, 3), ("o3", 119.9, 3),
    ("pm10", 14.999, 1), ("pm10", 15.0, 2), ("pm10", 45.0, 3), ("pm10", 44.99, 2),
    ("no2", 10.0, 2), ("no2", 9.99, 1), ("no2", 25.0, 3), ("no2", 24.9, 2), ("o3_8h", 130, 4),
])
def test_categorize_pollutant(pollutant, value, cat):
    assert ex.categorize_pollutant(value, pollutant) == cat


def test_categorize_negative():
    with pytest.raises(ex.ExposureError):
        ex.categorize_pollutant(-1.0, "pm10")


@given(st.sampled_from(["pm10", "no2", "o3"]), st.floats(0, 300), st.floats(0, 300))
def test_categories_monotone(p, a, b):
    lo, hi = sorted((a, b))
    assert ex.categorize_pollutant(lo, p) <= ex.categorize_pollutant(hi, p)


def test_quartiles_one_to_eight():
    cats = ex.quartile_categorize({f"a{i}": float(i) for i in range(1, 9)})
    assert [cats[f"a{i}"] for i in range(1, 9)] == [1, 1, 2, 2, 3, 3, 4, 4]


def test_quartiles_degenerate():
    with pytest.raises(ex.ExposureError):
        ex.quartile_categorize({"a": 1.0, "b": 1.0, "c": 1.0, "d": 1.0})


def test_quartile_tie_goes_low():
    # cut points of 1..5 are 2, 3, 4; values on a cut fall in the lower category
    cats = ex.quartile_categorize({str(i): float(i) for i in range(1, 6)})
    assert [cats[str(i)] for i in range(1, 6)] == [1, 1, 2, 3, 4]


def test_heatwave_series_calendar():
    days = pd.date_range("2016-06-01", "2016-06-30")
    sd = pd.DataFrame({"station_id": np.repeat(["S1", "S2"], len(days)), "date": np.tile(days, 2),
                       "tmax_c": 25.0})
    sd.loc[(sd["station_id"] == "S1") & sd["date"].isin(days[10:13]), "tmax_c"] = 40.0
    trig = ex.TriggerTable({("S1", 6): 30.0, ("S2", 6): 30.0})
    hw = ex.heatwave_series(sd, trig)
    assert hw[days[10:13]].tolist() == [1, 1, 1]
    assert hw.sum() == 3
