"""Exposure engineering: station readings to daily area values and indicators.

Covers daily reduction of sub-daily station series, station-to-area
prediction with a constant-mean Matérn Gaussian process, trigger
temperatures, extreme-heat / heatwave / humid-day indicators, lagged
pollutant means and the WHO air-quality-guideline categories.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist, squareform

from .lgm import MaternParams, matern_cov

log = logging.getLogger(__name__)

VARIABLES = ("tmax", "tmin", "rh", "pm10", "no2", "o3_8h")
SUMMER_MONTHS = (6, 7, 8, 9)
STUDY_YEARS = tuple(range(2012, 2023))
REFERENCE_YEARS = tuple(y for y in range(2012, 2022) if y != 2015)
ALTITUDE_LIMIT_M = 1500.0

# lower bounds of categories 2.. ; level 1 is the reference category
POLLUTANT_CUTS = {
    "pm10": (15.0, 45.0),
    "no2": (10.0, 25.0),
    "o3": (60.0, 100.0, 120.0),
}


class ExposureError(ValueError):
    """Invalid exposure input."""


@dataclass(frozen=True)
class StationReading:
    station_id: str
    location: tuple[float, float]
    altitude_m: float
    date: dt.datetime
    variable: str
    value: float

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ExposureError(f"unknown variable {self.variable!r}")
        if self.variable == "rh" and not 0 <= self.value <= 100:
            raise ExposureError(f"relative humidity out of range: {self.value}")
        if self.variable in ("pm10", "no2", "o3_8h") and self.value < 0:
            raise ExposureError(f"negative pollutant value: {self.value}")


@dataclass(frozen=True)
class DailyAreaExposure:
    area_id: str
    date: dt.date
    tmax_c: float
    rh_pct: float
    pm10_ugm3: float
    no2_ugm3: float
    o3_ugm3: float
    prediction_sd: Mapping[str, float] | None = None


@dataclass(frozen=True)
class TriggerTable:
    """Trigger temperature per (area or station id, month)."""

    values: Mapping[tuple[str, int], float]

    def __getitem__(self, key):
        return self.values[key]

    def get(self, area_id, month, default=np.nan):
        return self.values.get((area_id, month), default)

    def lookup(self, area_id, month, default=np.nan):
        """Trigger for ``month``, borrowing the nearest summer month for
        off-season days that fall inside a lag window."""
        month = min(max(int(month), SUMMER_MONTHS[0]), SUMMER_MONTHS[-1])
        return self.values.get((area_id, month), default)

    def to_frame(self) -> pd.DataFrame:
        rows = [(a, m, v) for (a, m), v in sorted(self.values.items())]
        return pd.DataFrame(rows, columns=["area_id", "month", "trigger_c"])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TriggerTable":
        return cls({(str(a), int(m)): float(v) for a, m, v in
                    frame[["area_id", "month", "trigger_c"]].itertuples(index=False)})


# ---------------------------------------------------------------------------
# daily reduction and station handling
# ---------------------------------------------------------------------------


def reduce_to_daily(readings, variable: str) -> float:
    """Reduce one day of sub-daily readings to a daily value.

    For ``o3`` / ``o3_8h`` ``readings`` are hourly values in time order (NaN
    for missing hours); the result is the maximum trailing 8-hour mean over
    windows with all eight hours present. For every other variable it is the
    mean of the available readings. Days without usable data give NaN.
    """
    vals = np.asarray(readings, dtype=float).ravel()
    if variable in ("o3", "o3_8h"):
        if len(vals) < 8:
            return float("nan")
        windows = np.lib.stride_tricks.sliding_window_view(vals, 8)
        means = windows.mean(axis=1)
        means = means[np.all(np.isfinite(windows), axis=1)]
        return float(means.max()) if len(means) else float("nan")
    if variable not in VARIABLES:
        raise ExposureError(f"unknown variable {variable!r}")
    finite = vals[np.isfinite(vals)]
    return float(finite.mean()) if len(finite) else float("nan")


def daily_from_readings(readings: pd.DataFrame) -> pd.DataFrame:
    """Reduce a long readings table (station_id, datetime, variable, value) to
    daily values (station_id, date, variable, value)."""
    df = readings.copy()
    df["datetime"] = pd.to_datetime(df["datetime"])
    df["date"] = df["datetime"].dt.normalize()
    out = []
    for (sid, day, var), grp in df.groupby(["station_id", "date", "variable"], sort=True):
        if var == "o3_8h":
            hourly = np.full(24, np.nan)
            hours = grp.groupby(grp["datetime"].dt.hour)["value"].mean()
            hourly[hours.index.to_numpy()] = hours.to_numpy()
            value = reduce_to_daily(hourly, var)
        else:
            value = reduce_to_daily(grp["value"].to_numpy(), var)
        out.append((sid, day, var, value))
    return pd.DataFrame(out, columns=["station_id", "date", "variable", "value"])


def exclude_high_stations(stations):
    """Drop stations at or above 1,500 m altitude.

    Accepts a DataFrame with an ``altitude_m`` column or an iterable of
    objects with an ``altitude_m`` attribute.
    """
    if isinstance(stations, pd.DataFrame):
        keep = stations["altitude_m"] < ALTITUDE_LIMIT_M
        log.info("excluded %d stations at >= %.0f m", int((~keep).sum()), ALTITUDE_LIMIT_M)
        return stations.loc[keep].reset_index(drop=True)
    stations = list(stations)
    kept = [s for s in stations if s.altitude_m < ALTITUDE_LIMIT_M]
    log.info("excluded %d stations at >= %.0f m", len(stations) - len(kept), ALTITUDE_LIMIT_M)
    return kept


# ---------------------------------------------------------------------------
# station -> area prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldPrediction:
    mean: np.ndarray
    sd: np.ndarray


def predict_daily_field(station_xy, station_values, area_centroids, params: MaternParams,
                        nugget_sd: float) -> FieldPrediction:
    """Kriging prediction of one variable on one day.

    Constant unknown mean (flat prior, i.e. universal kriging) plus a
    zero-mean Matérn field, observed at stations with Gaussian nugget noise.
    Returns posterior mean and sd of the latent field at each centroid.
    """
    xs = np.asarray(station_xy, dtype=float).reshape(-1, 2)
    y = np.asarray(station_values, dtype=float)
    ok = np.isfinite(y)
    xs, y = xs[ok], y[ok]
    if len(y) < 3:
        raise ExposureError(f"need at least 3 reporting stations, got {len(y)}")
    if np.min(pdist(xs)) == 0:
        raise ExposureError("duplicate station coordinates")
    c = np.asarray(area_centroids, dtype=float).reshape(-1, 2)
    K = matern_cov(squareform(pdist(xs)), params) + nugget_sd**2 * np.eye(len(y))
    # tiny jitter keeps the nugget -> 0 limit factorisable
    K += 1e-12 * params.sigma**2 * np.eye(len(y))
    k = matern_cov(cdist(xs, c), params)
    f = cho_factor(K, lower=True)
    ones = np.ones(len(y))
    Ki1 = cho_solve(f, ones)
    Kiy = cho_solve(f, y)
    Kik = cho_solve(f, k)
    denom = ones @ Ki1
    beta = (ones @ Kiy) / denom
    mean = beta + k.T @ (Kiy - Ki1 * beta)
    u = 1.0 - ones @ Kik
    var = params.sigma**2 - np.einsum("ij,ij->j", k, Kik) + u**2 / denom
    return FieldPrediction(mean, np.sqrt(np.maximum(var, 0.0)))


def _restricted_loglik(log_params, days, nu):
    sigma, rho, nugget = np.exp(log_params)
    params = MaternParams(sigma, rho, nu)
    total = 0.0
    for xs, y in days:
        K = matern_cov(squareform(pdist(xs)), params) + (nugget**2 + 1e-10) * np.eye(len(y))
        try:
            f = cho_factor(K, lower=True)
        except np.linalg.LinAlgError:
            return -np.inf
        ones = np.ones(len(y))
        Ki1 = cho_solve(f, ones)
        denom = ones @ Ki1
        beta = (ones @ cho_solve(f, y)) / denom
        r = y - beta
        total += -np.sum(np.log(np.diag(f[0]))) - 0.5 * r @ cho_solve(f, r) - 0.5 * np.log(denom)
    return total


def fit_matern_params(days, nu: float = 1.0, init=None) -> tuple[MaternParams, float]:
    """Maximum restricted marginal likelihood of (sigma, range, nugget_sd),
    pooled over days. ``days`` is a list of (station_xy, values) pairs."""
    prepared = []
    for xs, y in days:
        xs = np.asarray(xs, dtype=float).reshape(-1, 2)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(y)
        if ok.sum() >= 3:
            prepared.append((xs[ok], y[ok]))
    if not prepared:
        raise ExposureError("no day has 3 or more reporting stations")
    if init is None:
        spread = np.mean([np.std(y) for _, y in prepared]) or 1.0
        dist = np.median(pdist(prepared[0][0]))
        init = np.log([spread, dist, 0.3 * spread])
    res = minimize(lambda p: -_restricted_loglik(p, prepared, nu), init, method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 2000})
    sigma, rho, nugget = np.exp(res.x)
    return MaternParams(float(sigma), float(rho), nu), float(nugget)


# ---------------------------------------------------------------------------
# thresholds and indicators
# ---------------------------------------------------------------------------


def percentile(values, p: float) -> float:
    """Percentile by linear interpolation between order statistics (type 7)."""
    return float(np.percentile(np.asarray(values, dtype=float), 100.0 * p, method="linear"))


def compute_trigger_table(daily_tmax: pd.DataFrame, reference_years=REFERENCE_YEARS,
                          key: str = "area_id", min_days: int = 20, q: float = 0.95) -> TriggerTable:
    """95th percentile of daily maximum temperature per (key, month) over the
    reference years. ``daily_tmax`` has columns ``key``, ``date``, ``tmax_c``."""
    df = daily_tmax[[key, "date", "tmax_c"]].copy()
    dates = pd.to_datetime(df["date"])
    df["year"] = dates.dt.year
    df["month"] = dates.dt.month
    df = df[df["year"].isin(set(reference_years)) & df["month"].isin(SUMMER_MONTHS)]
    df = df[np.isfinite(df["tmax_c"].to_numpy(dtype=float))]
    values = {}
    ids = sorted(daily_tmax[key].astype(str).unique())
    grouped = {k: g["tmax_c"].to_numpy(dtype=float) for k, g in df.groupby([df[key].astype(str), "month"])}
    for a in ids:
        for m in SUMMER_MONTHS:
            v = grouped.get((a, m), np.empty(0))
            if len(v) < min_days:
                raise ExposureError(f"insufficient reference data for ({a}, month {m}): {len(v)} days")
            values[(a, m)] = percentile(np.sort(v), q)
    return TriggerTable(values)


def extreme_heat_indicator(tmax, trigger):
    """1 when tmax strictly exceeds the trigger (vectorised; NaN stays NaN)."""
    tmax = np.asarray(tmax, dtype=float)
    trigger = np.asarray(trigger, dtype=float)
    out = np.where(tmax > trigger, 1.0, 0.0)
    out = np.where(np.isfinite(tmax) & np.isfinite(trigger), out, np.nan)
    return int(out) if out.ndim == 0 else out


def station_threshold(station_count: int, frac: float) -> int:
    # round first: 0.1 * 30 is 3.0000000000000004 in binary floating point
    return max(1, math.ceil(round(frac * station_count, 9)))


def heatwave_indicator(flags, station_count: int | None = None, frac: float = 0.10,
                       min_run: int = 3) -> np.ndarray:
    """Network-wide heatwave days.

    ``flags`` is a (days x stations) array of per-station extreme-heat flags.
    A day qualifies when at least ``ceil(frac * station_count)`` stations are
    flagged; a day is a heatwave day when it lies in a run of at least
    ``min_run`` consecutive qualifying days.
    """
    flags = np.asarray(flags, dtype=float)
    if flags.ndim == 1:
        counts = flags
        if station_count is None:
            raise ExposureError("station_count is required when passing daily counts")
    else:
        counts = np.nansum(flags, axis=1)
        if station_count is None:
            station_count = flags.shape[1]
    need = station_threshold(station_count, frac)
    qualifying = counts >= need
    out = np.zeros(len(counts), dtype=int)
    start = None
    for i, q in enumerate(np.append(qualifying, False)):
        if q and start is None:
            start = i
        elif not q and start is not None:
            if i - start >= min_run:
                out[start:i] = 1
            start = None
    return out


def q4_humidity_threshold(rh) -> float:
    return percentile(rh, 0.75)


def q4_humidity_indicator(rh, area_q4_threshold):
    rh = np.asarray(rh, dtype=float)
    out = np.where(rh > area_q4_threshold, 1.0, 0.0)
    out = np.where(np.isfinite(rh), out, np.nan)
    return int(out) if out.ndim == 0 else out


def _lookup(series, day):
    if isinstance(series, pd.Series):
        value = series.get(pd.Timestamp(day), np.nan)
    else:
        value = series.get(day, np.nan)
    return np.nan if value is None else float(value)


def lagged_mean(series, t, l: int) -> float:
    """Mean of the values on days t-l, ..., t-1 (NaN if any is missing)."""
    if l < 1:
        raise ExposureError("lag must be >= 1")
    t = pd.Timestamp(t)
    vals = [_lookup(series, t - pd.Timedelta(days=k)) for k in range(1, l + 1)]
    if any(not np.isfinite(v) for v in vals):
        return float("nan")
    return float(np.mean(vals))


def lagged_indicator(series, t, l: int) -> float:
    """Indicator value on day t-l (NaN if missing)."""
    if l < 1:
        raise ExposureError("lag must be >= 1")
    return _lookup(series, pd.Timestamp(t) - pd.Timedelta(days=l))


def lagged_mean_array(values: np.ndarray, l: int) -> np.ndarray:
    """Vectorised lagged mean along the last axis of a daily calendar array."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    miss = ~np.isfinite(values)
    filled = np.where(miss, 0.0, values)
    pad = [(0, 0)] * (values.ndim - 1) + [(1, 0)]
    cs = np.cumsum(np.pad(filled, pad), axis=-1)
    cm = np.cumsum(np.pad(miss.astype(int), pad), axis=-1)
    out = np.full(values.shape, np.nan)
    if l < n:
        # window for day t covers indices t-l .. t-1
        s = (cs[..., l:n] - cs[..., : n - l]) / l
        m = cm[..., l:n] - cm[..., : n - l]
        out[..., l:] = np.where(m == 0, s, np.nan)
    return out


def lagged_array(values: np.ndarray, l: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    out = np.full(values.shape, np.nan)
    if l < values.shape[-1]:
        out[..., l:] = values[..., : values.shape[-1] - l]
    return out


def categorize_pollutant(value, pollutant: str):
    """WHO-guideline category code (1 = reference); vectorised over ``value``."""
    key = pollutant.lower().replace("_8h", "")
    if key not in POLLUTANT_CUTS:
        raise ExposureError(f"unknown pollutant {pollutant!r}")
    v = np.asarray(value, dtype=float)
    if np.any(v < 0):
        raise ExposureError(f"negative {pollutant} concentration")
    cats = np.searchsorted(np.asarray(POLLUTANT_CUTS[key]), v, side="right") + 1
    if v.ndim == 0:
        return int(cats)
    return np.where(np.isfinite(v), cats, 0)


def quartile_categorize(values: Mapping[str, float]) -> dict[str, int]:
    """Quartile category (1..4) of each area's value within one year."""
    keys = list(values)
    v = np.array([values[k] for k in keys], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ExposureError("non-finite covariate value")
    if len(np.unique(v)) < 4:
        raise ExposureError("quartile categorization needs at least 4 distinct values")
    cuts = np.percentile(v, [25, 50, 75], method="linear")
    cats = np.searchsorted(cuts, v, side="left") + 1
    return {k: int(c) for k, c in zip(keys, cats)}


# ---------------------------------------------------------------------------
# whole-table helpers
# ---------------------------------------------------------------------------


def summer_calendar(years) -> pd.DatetimeIndex:
    days = [pd.date_range(f"{y}-06-01", f"{y}-09-30", freq="D") for y in sorted(years)]
    return days[0].append(days[1:]) if days else pd.DatetimeIndex([])


def station_extreme_flags(station_daily: pd.DataFrame, triggers: TriggerTable) -> pd.DataFrame:
    """Per-station extreme flags as a (date x station) frame. ``station_daily``
    has columns station_id, date, tmax_c."""
    df = station_daily[["station_id", "date", "tmax_c"]].copy()
    df["station_id"] = df["station_id"].astype(str)
    df["date"] = pd.to_datetime(df["date"])
    trig = np.array([triggers.lookup(s, d.month) for s, d in zip(df["station_id"], df["date"])])
    df["flag"] = extreme_heat_indicator(df["tmax_c"].to_numpy(dtype=float), trig)
    return df.pivot(index="date", columns="station_id", values="flag").sort_index()


def heatwave_series(station_daily: pd.DataFrame, triggers: TriggerTable, frac: float = 0.10,
                    min_run: int = 3) -> pd.Series:
    """Network-wide daily heatwave flag over the full daily calendar spanned by
    the station data (NaN-free; days are taken in calendar order, runs do not
    bridge gaps between summers)."""
    flags = station_extreme_flags(station_daily, triggers)
    full = pd.date_range(flags.index.min(), flags.index.max(), freq="D")
    flags = flags.reindex(full)
    out = heatwave_indicator(flags.to_numpy(), station_count=flags.shape[1], frac=frac, min_run=min_run)
    series = pd.Series(out.astype(float), index=full, name="heatwave")
    series[flags.isna().all(axis=1).to_numpy()] = np.nan
    return series
