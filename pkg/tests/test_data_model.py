import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatmort import exposure as ex
from heatmort.data_model import (
    AggregationError, AnnualCovariates, AreaUnit, CensusTractValue, DataError, DeathCounts, Panel,
    assemble_panel, build_indicator_tables, load_areas, load_deaths, population_weighted_aggregate,
)
from heatmort.lgm import ModelSpec


def tract(v, p, tid="t"):
    return CensusTractValue(tid, "A1", 2016, v, p)


@pytest.mark.parametrize("values,expected", [
    ([(10, 50), (20, 50)], 15.0),
    ([(10, 0), (20, 5)], 20.0),
    ([(8, 100), (12, 300)], 11.0),
])
def test_aggregate_examples(values, expected):
    assert population_weighted_aggregate([tract(v, p) for v, p in values]) == pytest.approx(expected)


def test_aggregate_errors():
    with pytest.raises(AggregationError):
        population_weighted_aggregate([])
    with pytest.raises(AggregationError, match="area A1, year 2016"):
        population_weighted_aggregate([tract(5, 0), tract(6, 0)])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0.5, 1e4)), min_size=1, max_size=12),
       st.floats(0.01, 100), st.randoms())
@settings(max_examples=60)
def test_aggregate_invariances(pairs, scale, rnd):
    base = population_weighted_aggregate([tract(v, p) for v, p in pairs])
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert population_weighted_aggregate([tract(v, p) for v, p in shuffled]) == pytest.approx(base, abs=1e-9)
    assert population_weighted_aggregate([tract(v, p * scale) for v, p in pairs]) == pytest.approx(base, abs=1e-9)


@pytest.mark.parametrize("kw", [
    dict(income_eur=0.0, gini_pct=30, pct_65_plus=20), dict(income_eur=1e4, gini_pct=100, pct_65_plus=20),
    dict(income_eur=1e4, gini_pct=30, pct_65_plus=101), dict(income_eur=np.nan, gini_pct=30, pct_65_plus=20),
])
def test_covariate_bounds(kw):
    with pytest.raises(DataError):
        AnnualCovariates(**kw)


def test_record_invariants():
    with pytest.raises(DataError):
        DeathCounts("A", pd.Timestamp("2016-06-01").date(), 2, 3, 1)
    with pytest.raises(DataError):
        AreaUnit("A", (np.nan, 0.0), {2016: 10})
    with pytest.raises(DataError):
        AreaUnit("A", (0.0, 0.0), {2016: 0})


# -- panel fixture ----------------------------------------------------------


def _fixture(n_areas=4, years=(2016, 2017, 2018, 2019), pre_season_days=0, seed=0):
    rng = np.random.default_rng(seed)
    areas = []
    for k in range(n_areas):
        covs = {y: AnnualCovariates(10000 + 1000 * k + y, 25 + k + 0.1 * (y - 2016), 15 + 2 * k) for y in years}
        areas.append(AreaUnit(f"A{k}", (10.0 * k, 5.0 * k), {y: 1000 * (k + 1) for y in years}, covs))
    days = []
    for y in years:
        start = pd.Timestamp(f"{y}-06-01") - pd.Timedelta(days=pre_season_days)
        days.append(pd.date_range(start, f"{y}-09-30"))
    days = days[0].append(days[1:])
    n = len(days)
    exposures = pd.DataFrame({
        "area_id": np.repeat([a.area_id for a in areas], n),
        "date": np.tile(days, n_areas),
        "tmax_c": rng.normal(30, 3, n * n_areas).round(2),
        "rh_pct": rng.uniform(30, 90, n * n_areas).round(2),
        "pm10_ugm3": rng.uniform(5, 60, n * n_areas),
        "no2_ugm3": rng.uniform(3, 40, n * n_areas),
        "o3_ugm3": rng.uniform(30, 140, n * n_areas),
    })
    summer = exposures["date"].dt.month.isin(ex.SUMMER_MONTHS)
    deaths = exposures.loc[summer, ["area_id", "date"]].copy()
    deaths["deaths_all"] = rng.poisson(2, len(deaths))
    deaths["deaths_65"] = deaths["deaths_all"]
    deaths["deaths_85"] = 0
    tables = build_indicator_tables(areas, exposures, reference_years=years)
    return areas, deaths, exposures, tables


def test_lag_window_fully_covered_keeps_all_rows():
    # 2 areas x 4 summers with the whole lag window available: 2 * 4 * 122
    areas, deaths, exposures, tables = _fixture(n_areas=4, pre_season_days=7)
    two = [a for a in areas if a.area_id in ("A0", "A1")]
    exp2 = exposures[exposures["area_id"].isin(["A0", "A1"])]
    panel = assemble_panel(two, deaths[deaths["area_id"].isin(["A0", "A1"])], exp2, tables, ModelSpec(lag=7))
    assert len(panel) == 976
    assert panel.dropped == 0


def test_lag7_drops_first_week_of_each_summer():
    areas, deaths, exposures, tables = _fixture(n_areas=4)
    panel = assemble_panel(areas, deaths, exposures, tables, ModelSpec(lag=7))
    assert panel.dropped == 4 * 4 * 7
    assert len(panel) + panel.dropped == 4 * 4 * 122
    first = panel.frame.groupby([panel.frame["area_id"], panel.frame["date"].dt.year])["date"].min()
    assert (first.dt.strftime("%m-%d") == "06-08").all()


@pytest.mark.parametrize("lag", [1, 3, 7, 14])
def test_row_accounting(lag):
    areas, deaths, exposures, tables = _fixture(n_areas=4, years=(2016, 2017))
    panel = assemble_panel(areas, deaths, exposures, tables, ModelSpec(lag=lag))
    assert len(panel) + panel.dropped == 4 * 2 * 122
    assert panel.dropped == 4 * 2 * lag


def test_missing_death_record_is_error():
    areas, deaths, exposures, tables = _fixture()
    with pytest.raises(DataError, match="lack a death record"):
        assemble_panel(areas, deaths.iloc[20:], exposures, tables, ModelSpec())
    with pytest.raises(DataError, match="empty"):
        assemble_panel(areas, deaths.iloc[:0], exposures, tables, ModelSpec())


def test_panel_is_deterministic_and_sorted():
    areas, deaths, exposures, tables = _fixture()
    a = assemble_panel(areas, deaths, exposures, tables, ModelSpec())
    b = assemble_panel(list(reversed(areas)), deaths.sample(frac=1, random_state=1),
                       exposures.sample(frac=1, random_state=2), tables, ModelSpec())
    pd.testing.assert_frame_equal(a.frame, b.frame)
    assert a.frame.equals(a.frame.sort_values(["area_id", "date"]))


def test_panel_values_match_scalar_oracles():
    areas, deaths, exposures, tables = _fixture(n_areas=4, years=(2016, 2017))
    panel = assemble_panel(areas, deaths, exposures, tables, ModelSpec(lag=5))
    e = exposures.set_index(["area_id", "date"])
    rng = np.random.default_rng(0)
    for i in rng.choice(len(panel), 25, replace=False):
        row = panel.frame.iloc[i]
        s = e.loc[row["area_id"]]
        for p, col in (("pm10", "pm10_ugm3"), ("no2", "no2_ugm3"), ("o3", "o3_ugm3")):
            m = ex.lagged_mean(s[col], row["date"], 5)
            assert row[f"{p}_cat"] == ex.categorize_pollutant(m, p)
        lag_day = row["date"] - pd.Timedelta(days=5)
        trig = tables.triggers.get(row["area_id"], lag_day.month)
        assert row["extreme_heat_lagged"] == ex.extreme_heat_indicator(s.loc[lag_day, "tmax_c"], trig)
        assert row["log_offset"] == pytest.approx(np.log(1000 * (int(row["area_id"][1:]) + 1)))
        assert row["month_index"] == row["date"].month - 6


def test_panel_records_and_csv_round_trip(tmp_path):
    areas, deaths, exposures, tables = _fixture(n_areas=4, years=(2016,))
    panel = assemble_panel(areas, deaths, exposures, tables, ModelSpec())
    rows = list(panel)
    assert len(rows) == len(panel)
    assert 1 <= rows[0].o3_cat <= 4 and rows[0].extreme_heat_lagged in (0, 1)
    panel.to_csv(tmp_path / "panel.csv")
    back = Panel.from_csv(tmp_path / "panel.csv")
    pd.testing.assert_frame_equal(back.frame, panel.frame, check_dtype=False)


def test_restrict():
    areas, deaths, exposures, tables = _fixture(n_areas=4, years=(2016,))
    panel = assemble_panel(areas, deaths, exposures, tables, ModelSpec(lag=3))
    other = assemble_panel(areas, deaths, exposures, tables, ModelSpec(lag=9))
    r = panel.restrict(other.keys())
    assert r.keys().equals(other.keys())
    assert r.dropped == panel.dropped + (len(panel) - len(other))


# -- CSV ingestion ----------------------------------------------------------


def _write(tmp_path, name, frame):
    p = tmp_path / name
    frame.to_csv(p, index=False)
    return p


def test_load_areas_with_tracts(tmp_path):
    a = _write(tmp_path, "areas.csv", pd.DataFrame({"area_id": ["001"], "x_km": [1.0], "y_km": [2.0]}))
    p = _write(tmp_path, "population.csv", pd.DataFrame({"area_id": ["001"], "year": [2016], "population": [400]}))
    rows = []
    for var, vals in (("income_eur", (8, 12)), ("gini_pct", (30, 34)), ("pct_65_plus", (10, 20))):
        rows += [("t1", "001", 2016, var, vals[0], 100), ("t2", "001", 2016, var, vals[1], 300)]
    t = _write(tmp_path, "tracts.csv", pd.DataFrame(rows, columns=["tract_id", "area_id", "year", "variable",
                                                                     "value", "population"]))
    [area] = load_areas(a, p, t)
    assert area.area_id == "001"
    assert area.covariates_by_year[2016] == AnnualCovariates(11.0, 33.0, 17.5)


def test_load_areas_rejects_missing_tract_value(tmp_path):
    a = _write(tmp_path, "areas.csv", pd.DataFrame({"area_id": ["A"], "x_km": [1.0], "y_km": [2.0]}))
    p = _write(tmp_path, "population.csv", pd.DataFrame({"area_id": ["A"], "year": [2016], "population": [400]}))
    t = _write(tmp_path, "tracts.csv", pd.DataFrame(
        [("t1", "A", 2016, "income_eur", np.nan, 100)],
        columns=["tract_id", "area_id", "year", "variable", "value", "population"]))
    with pytest.raises(DataError, match="t1"):
        load_areas(a, p, t)


def test_load_areas_rejects_multi_parent_tract(tmp_path):
    a = _write(tmp_path, "areas.csv", pd.DataFrame({"area_id": ["A", "B"], "x_km": [1.0, 2.0], "y_km": [2.0, 3.0]}))
    p = _write(tmp_path, "population.csv", pd.DataFrame({"area_id": ["A", "B"], "year": [2016] * 2,
                                                         "population": [400] * 2}))
    t = _write(tmp_path, "tracts.csv", pd.DataFrame(
        [("t1", "A", 2016, "income_eur", 5.0, 100), ("t1", "B", 2016, "income_eur", 5.0, 100)],
        columns=["tract_id", "area_id", "year", "variable", "value", "population"]))
    with pytest.raises(DataError, match="more than one area"):
        load_areas(a, p, t)


def test_load_deaths_checks(tmp_path):
    good = pd.DataFrame({"area_id": ["A"], "date": ["2016-06-01"], "deaths_all": [3], "deaths_65": [2],
                         "deaths_85": [1]})
    assert len(load_deaths(_write(tmp_path, "d.csv", good))) == 1
    bad = good.assign(deaths_85=5)
    with pytest.raises(DataError, match="inconsistent"):
        load_deaths(_write(tmp_path, "bad.csv", bad))
    with pytest.raises(DataError, match="missing columns"):
        load_deaths(_write(tmp_path, "cols.csv", good.drop(columns="deaths_65")))
    with pytest.raises(FileNotFoundError):
        load_deaths(tmp_path / "nope.csv")
