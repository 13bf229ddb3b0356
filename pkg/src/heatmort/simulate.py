"""Synthetic panels from the generative model, plus independent posterior oracles.

The generator draws area centroids, schematic daily weather and pollution
series, annual socioeconomic covariates and all four random effects, then
routes the raw series through the real exposure and panel code before
drawing counts from the zero-inflated negative binomial. The oracles
(adaptive quadrature and Metropolis-within-Gibbs) check the Laplace engine
without sharing its optimisation code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.special import expit, logit

from . import exposure as ex
from . import lgm
from .data_model import (
    AnnualCovariates, AreaUnit, IndicatorTables, Panel, assemble_panel, build_indicator_tables,
)
from .inference import LatentModel, _generalised_variance
from .lgm import ModelSpec, build_design

# ---------------------------------------------------------------------------
# configuration and truth
# ---------------------------------------------------------------------------

MAIN_EFFECTS = ("intercept", "heat", "q4_humidity", "pm10", "no2", "o3", "income", "gini", "pct65")


@dataclass(frozen=True)
class SimulationConfig:
    """Schematic covariate processes (sinusoid + gradient + autocorrelated noise)."""

    extent_km: float = 100.0
    population: tuple[int, int] = (20_000, 120_000)
    tmax_base: float = 27.0
    tmax_season_amp: float = 4.0
    tmax_gradient: float = 3.0
    weather_sd: float = 2.5
    weather_ar: float = 0.8
    local_sd: float = 1.0
    local_ar: float = 0.5
    rh_mean: float = 65.0
    rh_sd: float = 8.0
    o3_mean: float = 85.0
    o3_sd: float = 25.0
    o3_ar: float = 0.85
    # ozone units per degree of common weather anomaly; 0 makes ozone independent of heat
    o3_temp_coupling: float = 0.0
    no2_mean: float = 18.0
    pm10_mean: float = 25.0
    fraction_heatwave_stations: float = 0.10
    reference_years: tuple[int, ...] | None = None


def full_spec(**kw) -> ModelSpec:
    return ModelSpec(**kw)


def default_coefficients(terms=lgm.TERM_ORDER) -> dict[str, float]:
    base = {
        "intercept": np.log(3.0e-5),
        "heat": 0.15,
        "q4_humidity": 0.03,
        "pm10[2]": 0.02, "pm10[3]": 0.06,
        "no2[2]": 0.01, "no2[3]": 0.04,
        "o3[2]": 0.03, "o3[3]": 0.08, "o3[4]": 0.15,
        "income[2]": -0.02, "income[3]": -0.04, "income[4]": -0.06,
        "gini[2]": 0.03, "gini[3]": 0.05, "gini[4]": 0.06,
        "pct65[2]": 0.05, "pct65[3]": 0.10, "pct65[4]": 0.14,
        "heat:no2[2]": 0.02, "heat:no2[3]": 0.05,
        "heat:o3[2]": 0.02, "heat:o3[3]": 0.04, "heat:o3[4]": 0.06,
        "heat:pm10[2]": 0.01, "heat:pm10[3]": 0.03,
        "heat:q4_humidity": 0.02,
        "heat:income[2]": -0.01, "heat:income[3]": -0.02, "heat:income[4]": -0.03,
        "heat:gini[2]": 0.01, "heat:gini[3]": 0.02, "heat:gini[4]": 0.03,
        "heat:pct65[2]": 0.02, "heat:pct65[3]": 0.03, "heat:pct65[4]": 0.04,
    }
    names = lgm.term_columns(ModelSpec(fixed_terms=tuple(terms)))
    return {n: base[n] for n in names}


@dataclass
class SimulationTruth:
    """Generative parameters; realised random effects are filled in by the generator."""

    spec: ModelSpec = field(default_factory=ModelSpec)
    coefficients: dict = field(default_factory=default_coefficients)
    size: float = 2.0
    zero_weight: float = 0.7
    prec_iid: float = 1 / 0.15**2
    sigma_matern: float = 0.15
    range_matern: float = 40.0
    prec_rw1: float = 1 / 0.08**2
    prec_crw1: float = 1 / 0.08**2
    effects: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        expected = lgm.term_columns(self.spec)
        missing = [n for n in expected if n not in self.coefficients]
        if missing:
            raise ValueError(f"truth lacks coefficients for {missing}")
        if self.spec.family in ("negbin", "zinb1") and not self.size > 0:
            raise ValueError("size must be > 0")
        if self.spec.family == "zinb1" and not 0 < self.zero_weight <= 1:
            raise ValueError("zero_weight must lie in (0, 1]")
        for name in ("prec_iid", "prec_rw1", "prec_crw1", "range_matern"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.sigma_matern < 0:
            raise ValueError("sigma_matern must be >= 0")

    def hyperparameters(self) -> dict:
        return {
            "size": self.size, "zero_weight": self.zero_weight, "prec_iid": self.prec_iid,
            "sigma_matern": self.sigma_matern, "range_matern": self.range_matern,
            "prec_rw1": self.prec_rw1, "prec_crw1": self.prec_crw1,
        }

    def to_json(self) -> str:
        return json.dumps({
            "coefficients": self.coefficients, **self.hyperparameters(), "seed": self.seed,
            "lag": self.spec.lag, "heat_kind": self.spec.heat_kind,
            "effects": {k: np.asarray(v).tolist() for k, v in self.effects.items()},
        }, indent=2)


@dataclass
class SimulatedData:
    areas: list
    deaths: pd.DataFrame
    exposures: pd.DataFrame
    stations: pd.DataFrame
    station_daily: pd.DataFrame
    tables: IndicatorTables
    truth: SimulationTruth
    panel: Panel
    years: tuple

    def build_panel(self, spec: ModelSpec) -> Panel:
        return assemble_panel(self.areas, self.deaths, self.exposures, self.tables, spec, years=self.years)

    def panel_builder(self, template: ModelSpec):
        return lambda l: self.build_panel(replace(template, lag=l))

    def write_csvs(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {k: out / f"{k}.csv" for k in ("areas", "population", "tracts", "deaths", "exposures",
                                                 "stations", "station_daily")}
        pd.DataFrame([(a.area_id, a.centroid[0], a.centroid[1]) for a in self.areas],
                     columns=["area_id", "x_km", "y_km"]).to_csv(paths["areas"], index=False)
        pd.DataFrame([(a.area_id, y, p) for a in self.areas for y, p in sorted(a.population_by_year.items())],
                     columns=["area_id", "year", "population"]).to_csv(paths["population"], index=False)
        rows = []
        for a in self.areas:
            for y, c in sorted(a.covariates_by_year.items()):
                pop = a.population_by_year[y]
                for var in ("income_eur", "gini_pct", "pct_65_plus"):
                    rows.append((f"{a.area_id}-T1", a.area_id, y, var, getattr(c, var), pop))
        pd.DataFrame(rows, columns=["tract_id", "area_id", "year", "variable", "value", "population"]).to_csv(
            paths["tracts"], index=False)
        for key, frame in (("deaths", self.deaths), ("exposures", self.exposures),
                           ("station_daily", self.station_daily)):
            f = frame.copy()
            f["date"] = pd.to_datetime(f["date"]).dt.strftime("%Y-%m-%d")
            f.to_csv(paths[key], index=False)
        self.stations.to_csv(paths["stations"], index=False)
        (out / "truth.json").write_text(self.truth.to_json())
        return paths


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


def _ar1(rng, shape, phi, sd):
    """Stationary AR(1) along the last axis."""
    e = rng.standard_normal(shape) * sd
    out = np.empty(shape)
    out[..., 0] = e[..., 0]
    k = np.sqrt(1 - phi**2)
    for t in range(1, shape[-1]):
        out[..., t] = phi * out[..., t - 1] + k * e[..., t]
    return out


def _intrinsic_draw(rng, structure, n, replicates, tau):
    V = lgm.sum_to_zero_basis(n)
    R = structure * _generalised_variance(structure)
    Rr = V.T @ R @ V
    L = np.linalg.cholesky(tau * Rr)
    z = np.linalg.solve(L.T, rng.standard_normal((n - 1, replicates)))
    return (V @ z).T  # replicates x n


def draw_zinb(rng, mu, size, zero_weight):
    lam = rng.gamma(size, mu / size)
    y = rng.poisson(lam)
    keep = rng.random(len(mu)) < zero_weight
    return np.where(keep, y, 0)


def simulate_dataset(n_areas: int = 30, years=(2016, 2017, 2018, 2019), truth: SimulationTruth | None = None,
                     seed: int = 0, config: SimulationConfig | None = None) -> SimulatedData:
    """Draw a complete synthetic dataset and its panel at the truth's lag."""
    if n_areas < 4:
        raise ValueError("need at least 4 areas for quartile categories")
    truth = SimulationTruth() if truth is None else truth
    truth = replace(truth, effects={}, seed=seed)
    config = SimulationConfig() if config is None else config
    rng = np.random.default_rng(seed)
    years = tuple(sorted(years))
    area_ids = [f"A{k:03d}" for k in range(n_areas)]
    xy = np.round(rng.uniform(0, config.extent_km, size=(n_areas, 2)), 4)
    pop_base = rng.integers(config.population[0], config.population[1] + 1, size=n_areas)

    days = ex.summer_calendar(years)
    n_y, n_d = len(years), 122
    phase = np.sin(np.pi * np.arange(n_d) / (n_d - 1))
    year_shift = rng.normal(0, 0.7, size=(n_y, 1))
    weather = _ar1(rng, (n_y, n_d), config.weather_ar, config.weather_sd)
    local = _ar1(rng, (n_areas, n_y, n_d), config.local_ar, config.local_sd)
    gradient = config.tmax_gradient * (xy[:, 0] / config.extent_km)[:, None, None]
    tmax = config.tmax_base + config.tmax_season_amp * phase + year_shift + weather + gradient + local

    rh = config.rh_mean + _ar1(rng, (n_areas, n_y, n_d), 0.6, config.rh_sd)
    rh = np.clip(rh, 5, 100)
    o3_common = _ar1(rng, (n_y, n_d), config.o3_ar, config.o3_sd)
    o3 = (config.o3_mean + o3_common + config.o3_temp_coupling * weather
          + _ar1(rng, (n_areas, n_y, n_d), 0.5, 5.0))
    o3 = np.clip(o3, 1.0, None)
    no2 = config.no2_mean * np.exp(_ar1(rng, (n_y, n_d), 0.7, 0.35) + rng.normal(0, 0.4, (n_areas, 1, 1))
                                   + _ar1(rng, (n_areas, n_y, n_d), 0.4, 0.2))
    pm10 = config.pm10_mean * np.exp(_ar1(rng, (n_y, n_d), 0.7, 0.45) + rng.normal(0, 0.25, (n_areas, 1, 1))
                                     + _ar1(rng, (n_areas, n_y, n_d), 0.4, 0.2))
    flat = lambda a: np.round(a.reshape(n_areas, n_y * n_d).ravel(), 4)
    exposures = pd.DataFrame({
        "area_id": np.repeat(area_ids, len(days)),
        "date": np.tile(days, n_areas),
        "tmax_c": flat(tmax), "rh_pct": flat(rh), "pm10_ugm3": flat(pm10),
        "no2_ugm3": flat(no2), "o3_ugm3": flat(o3),
    })
    stations = pd.DataFrame({"station_id": [f"S{a}" for a in area_ids], "x_km": xy[:, 0], "y_km": xy[:, 1],
                             "altitude_m": rng.uniform(0, 1200, size=n_areas).round(1)})
    station_daily = pd.DataFrame({"station_id": np.repeat(stations["station_id"].to_numpy(), len(days)),
                                  "date": np.tile(days, n_areas), "tmax_c": exposures["tmax_c"].to_numpy()})

    income = rng.lognormal(np.log(13000), 0.15, n_areas)
    gini = rng.normal(30.5, 2.5, n_areas)
    old = rng.normal(19.0, 3.0, n_areas)
    areas = []
    for k, aid in enumerate(area_ids):
        pops, covs = {}, {}
        for j, y in enumerate(years):
            pops[y] = int(pop_base[k] * (1 + 0.01 * j))
            covs[y] = AnnualCovariates(
                float(round(income[k] * (1 + 0.02 * j) * np.exp(rng.normal(0, 0.03)), 2)),
                float(round(np.clip(gini[k] + rng.normal(0, 0.4), 15, 60), 3)),
                float(round(np.clip(old[k] + 0.2 * j + rng.normal(0, 0.3), 5, 45), 3)),
            )
        areas.append(AreaUnit(aid, (float(xy[k, 0]), float(xy[k, 1])), pops, covs))

    ref = config.reference_years
    if ref is None:
        ref = tuple(y for y in years if y in ex.REFERENCE_YEARS) or years
    tables = build_indicator_tables(areas, exposures, station_daily, reference_years=ref,
                                    frac=config.fraction_heatwave_stations)

    # random effects
    spec = truth.spec
    eff = {}
    res = spec.random_effects
    eff["iid_area"] = rng.normal(0, truth.prec_iid**-0.5, n_areas) if "iid_area" in res else np.zeros(n_areas)
    if "matern_area" in res and truth.sigma_matern > 0:
        C = lgm.matern_covariance_matrix(xy, lgm.MaternParams(truth.sigma_matern, truth.range_matern,
                                                             spec.matern_nu))
        eff["matern_area"] = np.linalg.cholesky(C + 1e-10 * np.eye(n_areas)) @ rng.standard_normal(n_areas)
    else:
        eff["matern_area"] = np.zeros(n_areas)
    eff["rw1_year"] = (_intrinsic_draw(rng, lgm.rw1_structure(n_y), n_y, n_areas, truth.prec_rw1)
                       if "rw1_year" in res and n_y >= 2 else np.zeros((n_areas, n_y)))
    eff["cyclic_rw1_month"] = (_intrinsic_draw(rng, lgm.cyclic_rw1_structure(4), 4, n_areas, truth.prec_crw1)
                               if "cyclic_rw1_month" in res else np.zeros((n_areas, 4)))
    truth.effects = eff

    # linear predictor: full design on rows retained at the true lag, baseline elsewhere
    zero_deaths = pd.DataFrame({"area_id": exposures["area_id"], "date": exposures["date"],
                                "deaths_all": 0, "deaths_65": 0, "deaths_85": 0})
    panel0 = assemble_panel(areas, zero_deaths, exposures, tables, spec, years=years)
    X, names, _ = build_design(panel0, spec)
    gamma = np.array([truth.coefficients[n] for n in names])
    fixed = pd.Series(X @ gamma, index=pd.MultiIndex.from_arrays([panel0.frame["area_id"], panel0.frame["date"]]))
    key = pd.MultiIndex.from_arrays([exposures["area_id"], exposures["date"]])
    lin = fixed.reindex(key).to_numpy()
    lin = np.where(np.isnan(lin), truth.coefficients["intercept"], lin)
    a_idx = np.repeat(np.arange(n_areas), len(days))
    d = pd.to_datetime(exposures["date"])
    y_idx = (d.dt.year - years[0]).to_numpy()
    m_idx = (d.dt.month - 6).to_numpy()
    lin = (lin + eff["iid_area"][a_idx] + eff["matern_area"][a_idx] + eff["rw1_year"][a_idx, y_idx]
           + eff["cyclic_rw1_month"][a_idx, m_idx])
    pop = np.array([areas[a].population_by_year[years[j]] for a, j in zip(a_idx, y_idx)], dtype=float)
    if spec.offset:
        lin = lin + np.log(pop)
    mu = np.exp(lin)
    if spec.family == "poisson":
        counts = rng.poisson(mu)
    elif spec.family == "negbin":
        counts = draw_zinb(rng, mu, truth.size, 1.0)
    else:
        counts = draw_zinb(rng, mu, truth.size, truth.zero_weight)
    d65 = rng.binomial(counts, 0.8)
    d85 = rng.binomial(d65, 0.5)
    stratum_counts = {"all": counts, "65plus": d65, "85plus": d85}
    # the modelled stratum carries the generated counts
    main = stratum_counts.get(spec.outcome_stratum, counts)
    deaths = pd.DataFrame({"area_id": exposures["area_id"], "date": exposures["date"],
                           "deaths_all": counts, "deaths_65": d65, "deaths_85": d85})
    if spec.outcome_stratum != "all":
        deaths["deaths_all"] = np.maximum(counts, main)
    panel = assemble_panel(areas, deaths, exposures, tables, spec, years=years)
    return SimulatedData(areas, deaths, exposures, stations, station_daily, tables, truth, panel, years)


def generate_panel(n_areas: int, years, truth: SimulationTruth | None = None, seed: int = 0,
                   config: SimulationConfig | None = None) -> tuple[Panel, SimulationTruth]:
    data = simulate_dataset(n_areas, years, truth, seed, config)
    return data.panel, data.truth


# ---------------------------------------------------------------------------
# quadrature oracle
# ---------------------------------------------------------------------------


@dataclass
class QuadratureResult:
    mean: np.ndarray
    cov: np.ndarray
    log_norm: float


def quadrature_oracle(log_density, center, scale, width: float = 12.0, tol: float = 1e-10) -> QuadratureResult:
    """Posterior moments of a 1- or 2-dimensional unnormalised log density by
    adaptive quadrature over ``center +- width * scale``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    dim = len(center)
    ref = float(log_density(center))
    dens = lambda *b: np.exp(log_density(np.array(b)) - ref)
    lo, hi = center - width * scale, center + width * scale
    opts = dict(epsabs=0.0, epsrel=tol, limit=200)
    if dim == 1:
        q = lambda f: integrate.quad(lambda b: f(b), lo[0], hi[0], points=[center[0]], **opts)[0]
        z = q(lambda b: dens(b))
        m = q(lambda b: b * dens(b)) / z
        v = q(lambda b: (b - m) ** 2 * dens(b)) / z
        return QuadratureResult(np.array([m]), np.array([[v]]), float(np.log(z) + ref))
    if dim == 2:
        def q(f):
            return integrate.nquad(lambda b0, b1: f(b0, b1), [[lo[0], hi[0]], [lo[1], hi[1]]],
                                   opts=[dict(epsabs=0.0, epsrel=tol, limit=100, points=[center[0]]),
                                         dict(epsabs=0.0, epsrel=tol, limit=100, points=[center[1]])])[0]
        z = q(lambda a, b: dens(a, b))
        m0 = q(lambda a, b: a * dens(a, b)) / z
        m1 = q(lambda a, b: b * dens(a, b)) / z
        v00 = q(lambda a, b: (a - m0) ** 2 * dens(a, b)) / z
        v11 = q(lambda a, b: (b - m1) ** 2 * dens(a, b)) / z
        v01 = q(lambda a, b: (a - m0) * (b - m1) * dens(a, b)) / z
        return QuadratureResult(np.array([m0, m1]), np.array([[v00, v01], [v01, v11]]), float(np.log(z) + ref))
    raise ValueError("quadrature oracle supports 1 or 2 dimensions")


def fixed_effect_log_posterior(model: LatentModel, theta):
    """Unnormalised log posterior of the fixed effects for a model without
    random effects, at hyperparameters ``theta``."""
    if model.dim != model.p:
        raise ValueError("fixed_effect_log_posterior needs a model without random effects")
    obs = model.observation_model(theta)
    X = model.A.toarray()
    prec = model.spec.fixed_precision

    def logp(beta):
        beta = np.atleast_1d(beta)
        return model.loglik(X @ beta, obs) - 0.5 * prec * beta @ beta

    return logp


# ---------------------------------------------------------------------------
# MCMC oracle
# ---------------------------------------------------------------------------


@dataclass
class MCMCResult:
    term_names: list
    hyper_names: tuple
    fixed: np.ndarray  # chains x draws x p
    hyper: np.ndarray  # chains x draws x m (internal scale)
    acceptance: dict
    rhat: dict
    flagged: bool

    def fixed_mean(self):
        return self.fixed.reshape(-1, self.fixed.shape[-1]).mean(axis=0)

    def fixed_sd(self):
        return self.fixed.reshape(-1, self.fixed.shape[-1]).std(axis=0, ddof=1)


def split_rhat(draws) -> float:
    """Split-chain potential scale reduction for a (chains x draws) array."""
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[1] // 2
    seqs = np.concatenate([draws[:, :n], draws[:, n: 2 * n]], axis=0)
    means = seqs.mean(axis=1)
    B = n * means.var(ddof=1)
    W = seqs.var(axis=1, ddof=1).mean()
    if W == 0:
        return 1.0
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


class _Target:
    def __init__(self, model: LatentModel, flat_likelihood: bool):
        self.model = model
        self.flat = flat_likelihood

    def prior_terms(self, theta):
        Q, logdet = self.model.prior_precision(theta)
        return Q, logdet, self.model.log_hyperprior(theta)

    def loglik(self, x, theta):
        if self.flat:
            return 0.0
        eta = self.model.A @ x
        with np.errstate(over="ignore"):
            try:
                return self.model.loglik(eta, self.model.observation_model(theta))
            except ValueError:
                return -np.inf


def _run_chain(model, target, blocks, n_iter, burn, seed, x0, theta0):
    rng = np.random.default_rng(seed)
    x, theta = x0.copy(), theta0.copy()
    Q, logdet, lhp = target.prior_terms(theta)
    ll = target.loglik(x, theta)
    m = len(theta)
    # block proposal covariances, adapted during burn-in
    props = {b: 0.01 * np.eye(len(idx)) / max(len(idx), 1) for b, idx in blocks.items()}
    hprop = 0.05 * np.eye(m) / max(m, 1)
    hist = {b: [] for b in blocks}
    hhist = []
    acc = {b: 0 for b in blocks}
    acc["hyper"] = 0
    fixed_out, hyper_out = [], []
    p = model.p
    for it in range(n_iter):
        for b, idx in blocks.items():
            prop = x.copy()
            prop[idx] += rng.multivariate_normal(np.zeros(len(idx)), props[b])
            ll_new = target.loglik(prop, theta)
            delta = ll_new - ll - 0.5 * (prop @ Q @ prop - x @ Q @ x)
            if np.log(rng.random()) < delta:
                x, ll = prop, ll_new
                if it >= burn:
                    acc[b] += 1
            if it < burn:
                hist[b].append(x[idx].copy())
        if m:
            th = theta + rng.multivariate_normal(np.zeros(m), hprop)
            if np.all((th > -12) & (th < 14)):
                try:
                    Q2, logdet2, lhp2 = target.prior_terms(th)
                    ll2 = target.loglik(x, th)
                    cur = lhp + 0.5 * logdet - 0.5 * x @ Q @ x + ll
                    new = lhp2 + 0.5 * logdet2 - 0.5 * x @ Q2 @ x + ll2
                    if np.log(rng.random()) < new - cur:
                        theta, Q, logdet, lhp, ll = th, Q2, logdet2, lhp2, ll2
                        if it >= burn:
                            acc["hyper"] += 1
                except (ValueError, np.linalg.LinAlgError):
                    pass
            if it < burn:
                hhist.append(theta.copy())
        # adaptive Metropolis: refresh proposals from the burn-in history
        if it < burn and it >= 200 and it % 100 == 0:
            for b, idx in blocks.items():
                h = np.array(hist[b][it // 2:])
                d = len(idx)
                props[b] = (2.38**2 / d) * (np.atleast_2d(np.cov(h.T)) + 1e-8 * np.eye(d))
            if m:
                h = np.array(hhist[it // 2:])
                hprop = (2.38**2 / m) * (np.atleast_2d(np.cov(h.T)) + 1e-6 * np.eye(m))
        if it >= burn:
            fixed_out.append(x[:p].copy())
            hyper_out.append(theta.copy())
    n_keep = max(n_iter - burn, 1)
    rates = {b: acc[b] / n_keep for b in acc}
    return np.array(fixed_out), np.array(hyper_out), rates


def mcmc_oracle(panel, spec: ModelSpec, iterations: int = 20_000, seed: int = 0, *, chains: int = 4,
                burn_fraction: float = 0.5, flat_likelihood: bool = False, theta0=None) -> MCMCResult:
    """Random-walk Metropolis-within-Gibbs over the latent field and hyperparameters.

    Latent blocks (fixed effects, then each random effect) and the
    hyperparameter vector are updated in turn with Gaussian random-walk
    proposals whose covariances adapt to the chain history during burn-in and
    are frozen afterwards. Intended for small panels only.
    """
    model = LatentModel(panel, spec)
    if model.n > 2000 or len(model.blocks) > 10:
        raise ValueError("MCMC oracle is limited to <= 2,000 rows and <= 10 latent blocks")
    target = _Target(model, flat_likelihood)
    blocks = {name: np.arange(s.start, s.stop) for name, s in model.blocks.items()}
    theta0 = model.default_theta() if theta0 is None else np.asarray(theta0, dtype=float)
    x0 = np.zeros(model.dim)
    if not flat_likelihood and "intercept" in model.term_names and spec.family != "gaussian":
        x0[model.term_names.index("intercept")] = np.log(max(model.y.sum(), 0.5) / np.exp(model.offset).sum())
    burn = int(iterations * burn_fraction)
    seeds = np.random.SeedSequence(seed).spawn(chains)
    fixed, hyper, acc = [], [], []
    for c in range(chains):
        jitter = np.random.default_rng(seeds[c]).normal(0, 0.05, model.dim)
        f, h, a = _run_chain(model, target, blocks, iterations, burn, seeds[c], x0 + jitter, theta0)
        fixed.append(f)
        hyper.append(h)
        acc.append(a)
    fixed = np.array(fixed)
    hyper = np.array(hyper)
    rhat = {t: split_rhat(fixed[:, :, k]) for k, t in enumerate(model.term_names)}
    rhat.update({n: split_rhat(hyper[:, :, k]) for k, n in enumerate(model.hyper_names)})
    acceptance = {k: float(np.mean([a[k] for a in acc])) for k in acc[0]}
    flagged = any(v > 1.1 for v in rhat.values())
    return MCMCResult(list(model.term_names), model.hyper_names, fixed, hyper, acceptance, rhat, flagged)
