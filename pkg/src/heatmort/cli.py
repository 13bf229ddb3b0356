"""Command-line front end.

Every command reads an INI-style run configuration (``--config``) whose
sections are validated up front; unknown sections or keys are input errors.
Exit codes: 0 success, 1 model or numeric failure, 2 input error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import exposure as ex
from .data_model import (
    DataError, Panel, assemble_panel, build_indicator_tables, load_areas, load_deaths, load_exposures,
)
from .inference import InferenceError, fit_model, rr_frame, RRRow
from .lgm import DesignError, ModelSpec, PrecisionError, build_design
from .selection import SelectionError, confounding_ladder, ladder_frame, ladder_verdict, lag_search

log = logging.getLogger("heatmort")

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2

# section -> allowed keys; "model" and "priors" are validated by ModelSpec
SECTIONS = {
    "run": {"seed", "threads"},
    "inputs": {"areas", "population", "tracts", "deaths", "exposures", "stations", "readings",
               "station_daily", "panel", "fit"},
    "exposure": {"variables", "nu", "reference_years", "heatwave_fraction", "heatwave_min_run"},
    "fit": {"waic_draws", "level", "hessian", "ccd"},
    "lag_search": {"lags", "waic_draws"},
    "simulate": {"n_areas", "years", "o3_temp_coupling", "heat_coefficient"},
    "model": None,
    "priors": None,
}

# reading variable -> exposures.csv column
EXPOSURE_COLUMN = {"tmax": "tmax_c", "tmin": "tmin_c", "rh": "rh_pct", "pm10": "pm10_ugm3",
                   "no2": "no2_ugm3", "o3_8h": "o3_ugm3"}


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    """Validated run configuration."""

    sections: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    out: Path = Path(".")
    base_dir: Path = Path(".")
    spec: ModelSpec = field(default_factory=ModelSpec)

    @classmethod
    def load(cls, path=None, *, seed=None, threads=None, out=None) -> "RunConfig":
        cp = configparser.ConfigParser()
        base = Path(".")
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise InputError(f"config file not found: {path}")
            try:
                cp.read(path)
            except configparser.Error as e:
                raise InputError(f"cannot parse {path}: {e}") from None
            base = path.parent
        sections = {s: dict(cp[s]) for s in cp.sections()}
        for s, keys in sections.items():
            if s not in SECTIONS:
                raise InputError(f"unknown config section [{s}]")
            allowed = SECTIONS[s]
            if allowed is not None:
                bad = sorted(set(keys) - allowed)
                if bad:
                    raise InputError(f"unknown keys in [{s}]: {bad}")
        try:
            spec = ModelSpec.from_sections(sections.get("model", {}), sections.get("priors"))
        except (ValueError, TypeError) as e:
            raise InputError(f"invalid model configuration: {e}") from None
        run = sections.get("run", {})
        try:
            seed_v = int(seed if seed is not None else run.get("seed", 0))
            threads_v = int(threads if threads is not None else run.get("threads", 1))
        except ValueError as e:
            raise InputError(f"invalid [run] value: {e}") from None
        if threads_v < 1:
            raise InputError("threads must be >= 1")
        return cls(sections, seed_v, threads_v, Path(out) if out else Path("."), base, spec)

    def get(self, section, key, default=None, cast=str):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as e:
            raise InputError(f"[{section}] {key}: {e}") from None

    def path(self, key, required=True) -> Path | None:
        raw = self.sections.get("inputs", {}).get(key)
        if raw is None:
            if required:
                raise InputError(f"[inputs] {key} is required for this command")
            return None
        p = Path(raw)
        p = p if p.is_absolute() else self.base_dir / p
        if not p.exists():
            raise InputError(f"input file not found: {p}")
        return p


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.replace(",", " ").split():
        if "-" in part:
            a, b = part.split("-")
            out += list(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _write(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    f = frame.copy()
    for c in f.columns:
        if pd.api.types.is_datetime64_any_dtype(f[c]):
            f[c] = f[c].dt.strftime("%Y-%m-%d")
    f.to_csv(path, index=False)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_predict_exposure(cfg: RunConfig) -> int:
    stations = pd.read_csv(cfg.path("stations"), dtype={"station_id": str})
    readings = pd.read_csv(cfg.path("readings"), dtype={"station_id": str})
    areas = pd.read_csv(cfg.path("areas"), dtype={"area_id": str})
    for name, frame, cols in (("stations", stations, ["station_id", "x_km", "y_km", "altitude_m"]),
                              ("readings", readings, ["station_id", "datetime", "variable", "value"]),
                              ("areas", areas, ["area_id", "x_km", "y_km"])):
        missing = [c for c in cols if c not in frame.columns]
        if missing:
            raise InputError(f"{name}.csv: missing columns {missing}")
    variables = cfg.get("exposure", "variables", default=list(EXPOSURE_COLUMN),
                        cast=lambda s: [v.strip() for v in s.split(",") if v.strip()])
    unknown = set(variables) - set(EXPOSURE_COLUMN)
    if unknown:
        raise InputError(f"unknown exposure variables: {sorted(unknown)}")
    nu = cfg.get("exposure", "nu", 1.0, float)
    stations = ex.exclude_high_stations(stations).set_index("station_id")
    daily = ex.daily_from_readings(readings[readings["station_id"].isin(stations.index)])
    centroids = areas[["x_km", "y_km"]].to_numpy(dtype=float)
    days = pd.DatetimeIndex(sorted(daily["date"].unique()))
    out = pd.DataFrame({"area_id": np.repeat(areas["area_id"].to_numpy(), len(days)),
                        "date": np.tile(days, len(areas))})
    for var in variables:
        sub = daily[daily["variable"] == var]
        if sub.empty:
            continue
        wide = sub.pivot(index="date", columns="station_id", values="value").reindex(days)
        xy = stations.loc[wide.columns, ["x_km", "y_km"]].to_numpy(dtype=float)
        params, nugget = ex.fit_matern_params([(xy, wide.loc[d].to_numpy()) for d in days], nu=nu)
        mean = np.full((len(areas), len(days)), np.nan)
        sd = np.full_like(mean, np.nan)
        for j, d in enumerate(days):
            try:
                pred = ex.predict_daily_field(xy, wide.loc[d].to_numpy(), centroids, params, nugget)
            except ex.ExposureError as e:
                raise ex.ExposureError(f"{var} on {d.date()}: {e}") from None
            mean[:, j], sd[:, j] = pred.mean, pred.sd
        col = EXPOSURE_COLUMN[var]
        out[col] = mean.ravel()
        out[f"{col}_sd"] = sd.ravel()
    _write(out, cfg.out / "exposures.csv")
    print(f"exposures: {len(areas)} areas x {len(days)} days -> {cfg.out / 'exposures.csv'}")
    return EXIT_OK


def _load_inputs(cfg: RunConfig):
    areas = load_areas(cfg.path("areas"), cfg.path("population"), cfg.path("tracts", required=False))
    deaths = load_deaths(cfg.path("deaths"))
    exposures = load_exposures(cfg.path("exposures"))
    sd_path = cfg.path("station_daily", required=False)
    station_daily = None
    if sd_path is not None:
        station_daily = pd.read_csv(sd_path, dtype={"station_id": str}, parse_dates=["date"])
    ref = cfg.get("exposure", "reference_years", ex.REFERENCE_YEARS, lambda s: tuple(_int_list(s)))
    tables = build_indicator_tables(
        areas, exposures, station_daily, reference_years=ref,
        frac=cfg.get("exposure", "heatwave_fraction", 0.10, float),
        min_run=cfg.get("exposure", "heatwave_min_run", 3, int))
    return areas, deaths, exposures, tables


def _daily_indicators(areas, exposures, tables) -> pd.DataFrame:
    e = exposures.copy()
    e["date"] = pd.to_datetime(e["date"])
    e = e[e["date"].dt.month.isin(ex.SUMMER_MONTHS)].reset_index(drop=True)
    trig = np.array([tables.triggers.get(a, d.month) for a, d in zip(e["area_id"], e["date"])])
    hum = np.array([tables.humidity_q4.get(a, np.nan) for a in e["area_id"]])
    out = pd.DataFrame({"area_id": e["area_id"], "date": e["date"]})
    out["extreme_heat"] = ex.extreme_heat_indicator(e["tmax_c"].to_numpy(dtype=float), trig)
    out["q4_humidity"] = ex.q4_humidity_indicator(e["rh_pct"].to_numpy(dtype=float), hum)
    if tables.heatwave is not None:
        out["heatwave"] = tables.heatwave.reindex(e["date"]).to_numpy()
    for p, col in (("pm10", "pm10_ugm3"), ("no2", "no2_ugm3"), ("o3", "o3_ugm3")):
        out[f"{p}_cat"] = ex.categorize_pollutant(e[col].to_numpy(dtype=float), p)
    flags = ["extreme_heat", "q4_humidity"] + (["heatwave"] if "heatwave" in out else [])
    out[flags] = out[flags].astype("Int64")
    return out


def cmd_build_panel(cfg: RunConfig) -> int:
    areas, deaths, exposures, tables = _load_inputs(cfg)
    panel = assemble_panel(areas, deaths, exposures, tables, cfg.spec)
    # an empty category cell would only surface at fit time otherwise
    build_design(panel.frame, cfg.spec)
    _write(tables.triggers.to_frame(), cfg.out / "triggers.csv")
    _write(_daily_indicators(areas, exposures, tables), cfg.out / "indicators.csv")
    panel.to_csv(cfg.out / "panel.csv")
    print(f"panel: {len(panel)} rows retained, {panel.dropped} dropped "
          f"(lag {panel.lag}, {panel.n_areas} areas) -> {cfg.out / 'panel.csv'}")
    return EXIT_OK


def _fit_options(cfg):
    return dict(waic_draws=cfg.get("fit", "waic_draws", 1000, int), level=cfg.get("fit", "level", 0.95, float),
                hessian=cfg.get("fit", "hessian", True, _bool), ccd=cfg.get("fit", "ccd", False, _bool))


def cmd_fit(cfg: RunConfig) -> int:
    panel = Panel.from_csv(cfg.path("panel"))
    opts = _fit_options(cfg)
    if opts["waic_draws"] == 0:
        opts["waic_draws"] = None
    fit = fit_model(panel, cfg.spec, seed=cfg.seed, **opts)
    _write(fit.rr_frame(), cfg.out / "rr_table.csv")
    (cfg.out / "fit.json").write_text(fit.to_json())
    print(f"fit: {len(panel)} rows, log marginal {fit.log_marginal:.4f}"
          + (f", WAIC {fit.waic:.4f}" if fit.waic is not None else ""))
    return EXIT_OK


def cmd_lag_search(cfg: RunConfig) -> int:
    areas, deaths, exposures, tables = _load_inputs(cfg)
    lags = cfg.get("lag_search", "lags", list(range(1, 15)), _int_list)
    builder = lambda l: assemble_panel(areas, deaths, exposures, tables, replace(cfg.spec, lag=l))
    res = lag_search(builder, cfg.spec, lags, waic_draws=cfg.get("lag_search", "waic_draws", 1000, int),
                     seed=cfg.seed)
    _write(res.frame(), cfg.out / "lag_waic.csv")
    print(f"best lag: {res.best_lag}" + (" (tie broken toward the shorter lag)" if res.tie else ""))
    return EXIT_OK


def cmd_ladder(cfg: RunConfig) -> int:
    panel = Panel.from_csv(cfg.path("panel"))
    try:
        steps = confounding_ladder(panel, cfg.spec, seed=cfg.seed, n_jobs=cfg.threads)
    except SelectionError as e:
        done = getattr(e, "completed", [])
        if done:
            _write(ladder_frame(done), cfg.out / "ladder.csv")
        raise
    _write(ladder_frame(steps), cfg.out / "ladder.csv")
    print(f"verdict: {ladder_verdict(steps)}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    from .simulate import SimulationConfig, SimulationTruth, default_coefficients, simulate_dataset

    n_areas = cfg.get("simulate", "n_areas", 30, int)
    years = cfg.get("simulate", "years", [2016, 2017, 2018, 2019], _int_list)
    coefs = default_coefficients(cfg.spec.fixed_terms)
    coefs["heat"] = cfg.get("simulate", "heat_coefficient", coefs["heat"], float)
    truth = SimulationTruth(spec=cfg.spec, coefficients=coefs)
    sim_cfg = SimulationConfig(o3_temp_coupling=cfg.get("simulate", "o3_temp_coupling", 0.0, float))
    data = simulate_dataset(n_areas, years, truth, seed=cfg.seed, config=sim_cfg)
    paths = data.write_csvs(cfg.out)
    data.panel.to_csv(cfg.out / "panel.csv")
    print(f"simulated {n_areas} areas x {len(years)} summers -> {', '.join(sorted(p.name for p in paths.values()))}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    path = cfg.path("fit")
    try:
        summary = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not a fit summary ({e})") from None
    if "rr_table" not in summary:
        raise InputError(f"{path}: no rr_table in fit summary")
    rows = [RRRow(**r) for r in summary["rr_table"]]
    frame = rr_frame(rows)
    with pd.option_context("display.max_rows", None, "display.width", 120):
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


COMMANDS = {
    "predict-exposure": cmd_predict_exposure,
    "build-panel": cmd_build_panel,
    "fit": cmd_fit,
    "lag-search": cmd_lag_search,
    "ladder": cmd_ladder,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatmort", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--threads", type=int, help="overrides [run] threads")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, threads=args.threads, out=args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (InputError, DataError, FileNotFoundError, DesignError, pd.errors.ParserError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (InferenceError, SelectionError, PrecisionError, ex.ExposureError, np.linalg.LinAlgError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
