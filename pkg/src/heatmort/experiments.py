"""Simulation experiments behind the acceptance suite and the scripts.

Each runner draws synthetic data with :mod:`heatmort.simulate`, fits it with
the production pipeline and returns a tidy frame, so the scripts and the
tests share one implementation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .inference import fit_model
from .lgm import ModelSpec
from .selection import confounding_ladder, lag_search, ladder_frame, ladder_verdict
from .simulate import MAIN_EFFECTS, SimulationConfig, SimulationTruth, default_coefficients, simulate_dataset

log = logging.getLogger(__name__)

RECOVERY_AREAS = 30
RECOVERY_YEARS = (2016, 2017, 2018, 2019)
# wider, mildly heat-linked ozone so every seed populates the heat:o3[4] cell
RECOVERY_CONFIG = SimulationConfig(o3_sd=32.0, o3_temp_coupling=3.0)


# -- parameter recovery -----------------------------------------------------


def recovery_replicate(seed: int, n_areas: int = RECOVERY_AREAS, years=RECOVERY_YEARS,
                       level: float = 0.95) -> tuple[pd.DataFrame, dict]:
    """Fit the full model to one default-truth dataset.

    Returns one row per fixed effect (truth, interval, coverage flag) and
    the estimated versus true observation hyperparameters.
    """
    data = simulate_dataset(n_areas, years, seed=seed, config=RECOVERY_CONFIG)
    fit = fit_model(data.panel, data.truth.spec, waic_draws=None, level=level)
    rows = []
    for r in fit.rr_table:
        beta = data.truth.coefficients[r.term]
        lo, hi = np.log(r.cri_lower), np.log(r.cri_upper)
        rows.append({"seed": seed, "term": r.term, "truth": beta, "mean": fit.marginal(r.term).mean,
                     "lower": lo, "upper": hi, "covered": bool(lo <= beta <= hi)})
    hyper = {"seed": seed, "size": fit.hyperparameters["size"], "zero_weight": fit.hyperparameters["zero_weight"],
             "true_size": data.truth.size, "true_zero_weight": data.truth.zero_weight}
    return pd.DataFrame(rows), hyper


def recovery_study(seeds) -> tuple[pd.DataFrame, pd.DataFrame]:
    coef, hyper = [], []
    for s in seeds:
        c, h = recovery_replicate(s)
        coef.append(c)
        hyper.append(h)
        log.info("seed %d: coverage %.3f size %.3f pi %.3f", s, c["covered"].mean(), h["size"], h["zero_weight"])
    return pd.concat(coef, ignore_index=True), pd.DataFrame(hyper)


# -- lag selection ------------------------------------------------------------

LAG_SPEC = ModelSpec(fixed_terms=("intercept", "heat", "q4_humidity"),
                     random_effects=("iid_area", "cyclic_rw1_month"))


def lag_replicate(seed: int, heat_kind: str = "extreme_max_temp", lag: int = 7, lags=range(1, 15),
                  heat_effect: float = 0.15, n_areas: int = RECOVERY_AREAS, years=RECOVERY_YEARS,
                  waic_draws: int = 300) -> dict:
    """Simulate at ``lag`` and report the WAIC-selected lag over ``lags``."""
    spec = replace(LAG_SPEC, heat_kind=heat_kind, lag=lag)
    coefs = default_coefficients(spec.fixed_terms)
    coefs["heat"] = heat_effect
    data = simulate_dataset(n_areas, years, SimulationTruth(spec=spec, coefficients=coefs), seed=seed)
    res = lag_search(data.panel_builder(spec), spec, lags, waic_draws=waic_draws, seed=seed)
    w = pd.Series(res.waic)
    runner_up = w.drop(res.best_lag).min() if len(w) > 1 else np.nan
    return {"seed": seed, "heat_kind": heat_kind, "true_lag": lag, "best_lag": res.best_lag,
            "margin": float(runner_up - w[res.best_lag]), "failed_lags": len(res.errors)}


def lag_study(seeds, **kw) -> pd.DataFrame:
    out = []
    for s in seeds:
        out.append(lag_replicate(s, **kw))
        log.info("seed %d: best lag %d", s, out[-1]["best_lag"])
    return pd.DataFrame(out)


# -- confounding ladder -----------------------------------------------------

LADDER_SPEC = ModelSpec(random_effects=("iid_area", "rw1_year", "cyclic_rw1_month"))


@dataclass(frozen=True)
class LadderScenario:
    """Generative setup for the ladder experiment.

    ``planted`` sets a null heat effect with an ozone effect whose exposure
    follows the common temperature anomaly, so a heat-only model picks up
    ozone as heat.
    """

    heat_effect: float
    o3_effects: tuple[float, float, float]
    o3_temp_coupling: float


PLANTED = LadderScenario(heat_effect=0.0, o3_effects=(0.10, 0.25, 0.45), o3_temp_coupling=8.0)
UNCONFOUNDED = LadderScenario(heat_effect=0.18, o3_effects=(0.03, 0.08, 0.15), o3_temp_coupling=0.0)
# 30 areas leave the step-1 heat signal of the planted scenario near the detection limit
LADDER_AREAS = 60


def ladder_experiment(scenario: LadderScenario, seed: int = 0, n_areas: int = LADDER_AREAS,
                      years=RECOVERY_YEARS) -> tuple[pd.DataFrame, str]:
    """Simulate a main-effects truth and run the eight-step ladder on it."""
    gen = ModelSpec(fixed_terms=MAIN_EFFECTS, random_effects=LADDER_SPEC.random_effects)
    coefs = default_coefficients(gen.fixed_terms)
    coefs["heat"] = scenario.heat_effect
    for k, b in zip((2, 3, 4), scenario.o3_effects):
        coefs[f"o3[{k}]"] = b
    truth = SimulationTruth(spec=gen, coefficients=coefs)
    config = SimulationConfig(o3_temp_coupling=scenario.o3_temp_coupling)
    data = simulate_dataset(n_areas, years, truth, seed=seed, config=config)
    steps = confounding_ladder(data.build_panel(LADDER_SPEC), LADDER_SPEC, seed=seed)
    frame = ladder_frame(steps)
    frame["log_rr"] = np.log(frame["rr"])
    return frame, ladder_verdict(steps)
