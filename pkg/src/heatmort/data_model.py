"""Domain records, population-weighted aggregation and panel assembly."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from . import exposure as ex
from .lgm import ModelSpec

log = logging.getLogger(__name__)

COVARIATES = ("income_eur", "gini_pct", "pct_65_plus")
QUARTILE_COLUMN = {"income_eur": "income_q", "gini_pct": "gini_q", "pct_65_plus": "pct65_q"}
STRATUM_COLUMN = {"all": "deaths_all", "65plus": "deaths_65", "85plus": "deaths_85"}
POLLUTANT_COLUMN = {"pm10": "pm10_ugm3", "no2": "no2_ugm3", "o3": "o3_ugm3"}

PANEL_COLUMNS = (
    "area_id", "date", "outcome", "extreme_heat_lagged", "q4_humidity_lagged",
    "pm10_cat", "no2_cat", "o3_cat", "income_q", "gini_q", "pct65_q",
    "log_offset", "year_index", "month_index", "area_index",
)
# carried alongside the panel columns so a panel file is self-contained
EXTRA_COLUMNS = ("x_km", "y_km")


class DataError(ValueError):
    """Malformed or incomplete input data."""


class AggregationError(DataError):
    pass


@dataclass(frozen=True)
class AnnualCovariates:
    income_eur: float
    gini_pct: float
    pct_65_plus: float

    def __post_init__(self):
        if not all(np.isfinite([self.income_eur, self.gini_pct, self.pct_65_plus])):
            raise DataError("covariates must be finite")
        if self.income_eur <= 0:
            raise DataError(f"income must be > 0, got {self.income_eur}")
        if not 0 < self.gini_pct < 100:
            raise DataError(f"Gini index must lie in (0, 100), got {self.gini_pct}")
        if not 0 <= self.pct_65_plus <= 100:
            raise DataError(f"percentage aged 65+ must lie in [0, 100], got {self.pct_65_plus}")


@dataclass(frozen=True)
class AreaUnit:
    area_id: str
    centroid: tuple[float, float]
    population_by_year: Mapping[int, int]
    covariates_by_year: Mapping[int, AnnualCovariates] = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.centroid)):
            raise DataError(f"area {self.area_id}: non-finite centroid")
        for year, pop in self.population_by_year.items():
            if pop < 1:
                raise DataError(f"area {self.area_id}: population {pop} in {year}")


@dataclass(frozen=True)
class CensusTractValue:
    tract_id: str
    parent_area_id: str
    year: int
    value: float
    population: float


@dataclass(frozen=True)
class DeathCounts:
    area_id: str
    date: dt.date
    deaths_all: int
    deaths_65: int
    deaths_85: int

    def __post_init__(self):
        if not 0 <= self.deaths_85 <= self.deaths_65 <= self.deaths_all:
            raise DataError(f"inconsistent death strata for {self.area_id} on {self.date}")


@dataclass(frozen=True)
class PanelRow:
    area_id: str
    date: dt.date
    outcome: int
    extreme_heat_lagged: int
    q4_humidity_lagged: int
    pm10_cat: int
    no2_cat: int
    o3_cat: int
    income_q: int
    gini_q: int
    pct65_q: int
    log_offset: float
    year_index: int
    month_index: int
    area_index: int


def population_weighted_aggregate(values: Iterable[CensusTractValue]) -> float:
    """Population-weighted mean of tract values for one area-year."""
    values = list(values)
    if not values:
        raise AggregationError("no census tract values to aggregate")
    label = f"area {values[0].parent_area_id}, year {values[0].year}"
    v = np.array([t.value for t in values], dtype=float)
    w = np.array([t.population for t in values], dtype=float)
    if np.any(w < 0):
        raise AggregationError(f"negative tract population ({label})")
    if not np.all(np.isfinite(v)):
        raise AggregationError(f"missing tract value ({label})")
    if w.sum() <= 0:
        raise AggregationError(f"zero total population ({label})")
    # normalising the weights first keeps a single-tract area exact
    return float(np.sum(v * (w / w.sum())))


# ---------------------------------------------------------------------------
# panel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Panel:
    """Modeling panel: one row per retained (area, summer day).

    Rows are stored column-wise in ``frame``; iterating yields
    :class:`PanelRow` records.
    """

    frame: pd.DataFrame
    dropped: int = 0
    lag: int | None = None

    def __len__(self):
        return len(self.frame)

    def __iter__(self):
        cols = list(PANEL_COLUMNS)
        for rec in self.frame[cols].itertuples(index=False):
            d = rec._asdict()
            d["date"] = pd.Timestamp(d["date"]).date()
            for k in cols[2:]:
                if k != "log_offset":
                    d[k] = int(d[k])
            yield PanelRow(**d)

    @property
    def n_areas(self) -> int:
        return int(self.frame["area_index"].max()) + 1 if len(self.frame) else 0

    @property
    def centroids(self) -> np.ndarray:
        g = self.frame.groupby("area_index")[["x_km", "y_km"]].first()
        out = np.full((self.n_areas, 2), np.nan)
        out[g.index.to_numpy()] = g.to_numpy()
        return out

    def keys(self) -> pd.MultiIndex:
        return pd.MultiIndex.from_arrays([self.frame["area_id"], self.frame["date"]])

    def restrict(self, keys) -> "Panel":
        mask = self.keys().isin(keys)
        return Panel(self.frame.loc[mask].reset_index(drop=True), self.dropped + int((~mask).sum()), self.lag)

    def to_csv(self, path) -> None:
        out = self.frame.copy()
        out["date"] = pd.to_datetime(out["date"]).dt.strftime("%Y-%m-%d")
        out.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "Panel":
        frame = pd.read_csv(path, dtype={"area_id": str})
        missing = [c for c in PANEL_COLUMNS + EXTRA_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"{path}: missing panel columns {missing}")
        frame["date"] = pd.to_datetime(frame["date"])
        return cls(frame)


@dataclass(frozen=True)
class IndicatorTables:
    """Precomputed per-area thresholds and categories feeding the panel."""

    triggers: ex.TriggerTable
    humidity_q4: Mapping[str, float]
    quartiles: pd.DataFrame  # area_id, year, income_q, gini_q, pct65_q
    heatwave: pd.Series | None = None  # date -> {0, 1}, network-wide


def _calendar_arrays(exposures: pd.DataFrame, area_ids, days: pd.DatetimeIndex, columns):
    df = exposures.copy()
    df["area_id"] = df["area_id"].astype(str)
    df["date"] = pd.to_datetime(df["date"])
    out = {}
    for col in columns:
        wide = df.set_index(["area_id", "date"])[col].unstack("date")
        wide = wide.reindex(index=list(area_ids), columns=days)
        out[col] = wide.to_numpy(dtype=float)
    return out


def quartile_table(areas: Iterable[AreaUnit], years) -> pd.DataFrame:
    """Quartile categories of the three annual covariates per (area, year)."""
    areas = list(areas)
    rows = []
    for year in sorted(years):
        cats = {}
        for cov in COVARIATES:
            vals = {}
            for a in areas:
                if year not in a.covariates_by_year:
                    raise DataError(f"area {a.area_id}: no covariates for {year}")
                vals[a.area_id] = getattr(a.covariates_by_year[year], cov)
            cats[cov] = ex.quartile_categorize(vals)
        for a in areas:
            rows.append((a.area_id, year) + tuple(cats[c][a.area_id] for c in COVARIATES))
    return pd.DataFrame(rows, columns=["area_id", "year"] + [QUARTILE_COLUMN[c] for c in COVARIATES])


def build_indicator_tables(areas, exposures: pd.DataFrame, station_daily: pd.DataFrame | None = None,
                           reference_years=ex.REFERENCE_YEARS, frac: float = 0.10,
                           min_run: int = 3) -> IndicatorTables:
    """Triggers, humidity thresholds, quartiles and (optionally) heatwave days.

    ``station_daily`` (station_id, date, tmax_c) drives the network-wide
    heatwave series; station triggers are computed the same way as area ones.
    """
    areas = list(areas)
    exp = exposures.copy()
    exp["date"] = pd.to_datetime(exp["date"])
    exp["area_id"] = exp["area_id"].astype(str)
    summer = exp[exp["date"].dt.month.isin(ex.SUMMER_MONTHS)]
    triggers = ex.compute_trigger_table(summer, reference_years)
    hum = {a: ex.q4_humidity_threshold(g["rh_pct"].dropna().to_numpy())
           for a, g in summer.groupby("area_id")}
    years = sorted(summer["date"].dt.year.unique())
    quart = quartile_table(areas, years)
    hw = None
    if station_daily is not None:
        sd = station_daily.copy()
        sd["station_id"] = sd["station_id"].astype(str)
        st_trig = ex.compute_trigger_table(sd, reference_years, key="station_id")
        hw = ex.heatwave_series(sd, st_trig, frac=frac, min_run=min_run)
    return IndicatorTables(triggers, hum, quart, hw)


def assemble_panel(areas, death_counts: pd.DataFrame, exposures: pd.DataFrame,
                   indicator_tables: IndicatorTables, spec: ModelSpec, years=None) -> Panel:
    """Join deaths, lagged exposures and indicator tables into a panel.

    Rows whose lag window reaches before the available exposure data are
    dropped; a retained (area, day) without a death record is an error.
    """
    areas = sorted(areas, key=lambda a: a.area_id)
    area_ids = [a.area_id for a in areas]
    if death_counts is None or len(death_counts) == 0:
        raise DataError("death table is empty")
    exp = exposures.copy()
    exp["date"] = pd.to_datetime(exp["date"])
    if years is None:
        years = sorted(exp.loc[exp["date"].dt.month.isin(ex.SUMMER_MONTHS), "date"].dt.year.unique())
    summer_days = ex.summer_calendar(years)
    full = pd.date_range(min(exp["date"].min(), summer_days[0]), summer_days[-1], freq="D")
    arr = _calendar_arrays(exp, area_ids, full, ["tmax_c", "rh_pct"] + list(POLLUTANT_COLUMN.values()))
    l = spec.lag
    months = full.month.to_numpy()

    if spec.heat_kind == "extreme_max_temp":
        trig = np.array([[indicator_tables.triggers.lookup(a, m) for m in months] for a in area_ids])
        heat = ex.extreme_heat_indicator(arr["tmax_c"], trig)
    else:
        if indicator_tables.heatwave is None:
            raise DataError("heatwave model needs a heatwave series")
        hw = indicator_tables.heatwave.reindex(full).to_numpy(dtype=float)
        heat = np.tile(hw, (len(area_ids), 1))
    thr = np.array([indicator_tables.humidity_q4.get(a, np.nan) for a in area_ids])[:, None]
    hum = ex.q4_humidity_indicator(arr["rh_pct"], thr)

    heat_l = ex.lagged_array(heat, l)
    hum_l = ex.lagged_array(hum, l)
    means = {p: ex.lagged_mean_array(arr[c], l) for p, c in POLLUTANT_COLUMN.items()}

    pos = full.get_indexer(summer_days)
    n_a, n_d = len(area_ids), len(summer_days)
    ok = np.isfinite(heat_l[:, pos]) & np.isfinite(hum_l[:, pos])
    for p in means:
        ok &= np.isfinite(means[p][:, pos])

    ai, di = np.nonzero(ok)
    dates = summer_days[di]
    frame = pd.DataFrame({
        "area_id": np.array(area_ids, dtype=object)[ai],
        "date": dates,
    })
    pos_kept = pos[di]
    frame["extreme_heat_lagged"] = heat_l[ai, pos_kept].astype(int)
    frame["q4_humidity_lagged"] = hum_l[ai, pos_kept].astype(int)
    for p in means:
        frame[f"{p}_cat"] = ex.categorize_pollutant(means[p][ai, pos_kept], p).astype(int)

    # deaths
    deaths = death_counts.copy()
    deaths["area_id"] = deaths["area_id"].astype(str)
    deaths["date"] = pd.to_datetime(deaths["date"])
    col = STRATUM_COLUMN[spec.outcome_stratum]
    frame = frame.merge(deaths[["area_id", "date", col]], on=["area_id", "date"], how="left")
    if frame[col].isna().any():
        miss = frame.loc[frame[col].isna(), ["area_id", "date"]].iloc[0]
        n_miss = int(frame[col].isna().sum())
        raise DataError(f"{n_miss} retained rows lack a death record, e.g. area {miss['area_id']} "
                        f"on {miss['date'].date()}")
    frame["outcome"] = frame.pop(col).astype(int)

    # annual covariates and offsets
    frame["year"] = frame["date"].dt.year
    quart = indicator_tables.quartiles.copy()
    quart["area_id"] = quart["area_id"].astype(str)
    frame = frame.merge(quart, on=["area_id", "year"], how="left")
    if frame[["income_q", "gini_q", "pct65_q"]].isna().any().any():
        raise DataError("missing quartile categories for some area-years")
    pop = {(a.area_id, y): p for a in areas for y, p in a.population_by_year.items()}
    popv = np.array([pop.get((a, y), np.nan) for a, y in zip(frame["area_id"], frame["year"])], dtype=float)
    if np.any(~np.isfinite(popv)):
        raise DataError("missing population for some area-years")
    frame["log_offset"] = np.log(popv)
    first_year = min(years)
    frame["year_index"] = frame["year"] - first_year
    frame["month_index"] = frame["date"].dt.month - ex.SUMMER_MONTHS[0]
    index = {a: k for k, a in enumerate(area_ids)}
    frame["area_index"] = frame["area_id"].map(index).astype(int)
    cent = {a.area_id: a.centroid for a in areas}
    frame["x_km"] = [cent[a][0] for a in frame["area_id"]]
    frame["y_km"] = [cent[a][1] for a in frame["area_id"]]
    for c in ("income_q", "gini_q", "pct65_q"):
        frame[c] = frame[c].astype(int)
    frame = frame[list(PANEL_COLUMNS + EXTRA_COLUMNS)].sort_values(["area_id", "date"], kind="mergesort")
    frame = frame.reset_index(drop=True)
    dropped = n_a * n_d - len(frame)
    log.info("panel: %d rows retained, %d dropped (lag %d)", len(frame), dropped, l)
    return Panel(frame, dropped, l)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read(path, required, dtype=None) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    df = pd.read_csv(path, dtype=dtype)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df


def load_areas(areas_csv, population_csv, tracts_csv=None) -> list[AreaUnit]:
    """Build area records from areas.csv, population.csv and (optionally)
    tracts.csv, aggregating tract covariates by population weight."""
    a = _read(areas_csv, ["area_id", "x_km", "y_km"], dtype={"area_id": str})
    p = _read(population_csv, ["area_id", "year", "population"], dtype={"area_id": str})
    covs: dict[str, dict[int, AnnualCovariates]] = {aid: {} for aid in a["area_id"]}
    if tracts_csv is not None:
        t = _read(tracts_csv, ["tract_id", "area_id", "year", "variable", "value", "population"],
                  dtype={"area_id": str, "tract_id": str})
        unknown = set(t["variable"]) - set(COVARIATES)
        if unknown:
            raise DataError(f"unknown tract variables: {sorted(unknown)}")
        if t["value"].isna().any():
            bad = t.loc[t["value"].isna()].iloc[0]
            raise DataError(f"tract {bad['tract_id']} has a missing {bad['variable']} value in {bad['year']}")
        parents = t.groupby("tract_id")["area_id"].nunique()
        if (parents > 1).any():
            raise DataError(f"tract {parents[parents > 1].index[0]} maps to more than one area")
        agg = {}
        for (aid, year, var), g in t.groupby(["area_id", "year", "variable"]):
            agg[(aid, int(year), var)] = population_weighted_aggregate(
                CensusTractValue(r.tract_id, aid, int(year), float(r.value), float(r.population))
                for r in g.itertuples(index=False))
        for aid, year in sorted({(k[0], k[1]) for k in agg}):
            try:
                covs.setdefault(aid, {})[year] = AnnualCovariates(*(agg[(aid, year, c)] for c in COVARIATES))
            except KeyError as e:
                raise DataError(f"area {aid}, year {year}: missing covariate {e.args[0][2]}") from None
    pops: dict[str, dict[int, int]] = {}
    for r in p.itertuples(index=False):
        pops.setdefault(str(r.area_id), {})[int(r.year)] = int(r.population)
    return [AreaUnit(str(r.area_id), (float(r.x_km), float(r.y_km)), pops.get(str(r.area_id), {}),
                     covs.get(str(r.area_id), {}))
            for r in a.itertuples(index=False)]


def load_deaths(path) -> pd.DataFrame:
    d = _read(path, ["area_id", "date", "deaths_all", "deaths_65", "deaths_85"], dtype={"area_id": str})
    d["date"] = pd.to_datetime(d["date"])
    bad = ~((d["deaths_85"] <= d["deaths_65"]) & (d["deaths_65"] <= d["deaths_all"]) & (d["deaths_85"] >= 0))
    if bad.any():
        r = d.loc[bad].iloc[0]
        raise DataError(f"inconsistent death strata for area {r['area_id']} on {r['date'].date()}")
    return d


def load_exposures(path) -> pd.DataFrame:
    e = _read(path, ["area_id", "date", "tmax_c", "rh_pct", "pm10_ugm3", "no2_ugm3", "o3_ugm3"],
              dtype={"area_id": str})
    e["date"] = pd.to_datetime(e["date"])
    return e
