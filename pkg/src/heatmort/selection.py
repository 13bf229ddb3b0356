"""Model selection: WAIC, lag search and the confounding ladder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import logsumexp

from .inference import FitResult, InferenceError, LatentModel, RRRow, fit_model
from .lgm import DesignError, ModelSpec

log = logging.getLogger(__name__)

DEFAULT_LAGS = tuple(range(1, 15))
TIE_TOL = 1e-9


class SelectionError(RuntimeError):
    pass


def waic(loglik) -> tuple[float, float, float]:
    """WAIC from an (observations x draws) matrix of pointwise log-likelihoods.

    Returns ``(waic, p_waic, lppd)`` with ``waic = -2 (lppd - p_waic)``; the
    penalty uses the sample variance (divisor ``S - 1``).
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[None, :]
    if ll.shape[1] < 2:
        raise SelectionError("WAIC needs at least 2 draws per observation")
    if not np.all(np.isfinite(ll)):
        raise SelectionError("non-finite pointwise log-likelihood in WAIC draws")
    s = ll.shape[1]
    lppd = float(np.sum(logsumexp(ll, axis=1) - np.log(s)))
    p_waic = float(np.sum(np.var(ll, axis=1, ddof=1)))
    return -2.0 * (lppd - p_waic), p_waic, lppd


# ---------------------------------------------------------------------------
# lag search
# ---------------------------------------------------------------------------


@dataclass
class LagSearchResult:
    best_lag: int | None
    waic: dict[int, float]
    tie: bool
    errors: dict[int, str] = field(default_factory=dict)
    n_rows: int = 0
    fits: dict[int, FitResult] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        rows = [(l, self.waic.get(l, np.nan), self.errors.get(l, "")) for l in sorted(set(self.waic) | set(self.errors))]
        return pd.DataFrame(rows, columns=["lag", "waic", "error"])


def common_panels(panel_builder: Callable[[int], object], lags: Sequence[int]):
    """Build one panel per lag restricted to the rows retained at every lag."""
    panels = {l: panel_builder(l) for l in lags}
    keys = None
    for p in panels.values():
        k = p.keys()
        keys = k if keys is None else keys.intersection(k)
    out = {l: p.restrict(keys) for l, p in panels.items()}
    ref = None
    for l, p in out.items():
        k = p.keys()
        if ref is None:
            ref = k
        elif not k.equals(ref):
            raise SelectionError(f"lag {l} panel rows differ from the common window")
    return out


def lag_search(panel_builder: Callable[[int], object], spec_template: ModelSpec,
               lags: Sequence[int] = DEFAULT_LAGS, *, waic_draws: int = 1000, seed: int = 0,
               warm_start: bool = True, keep_fits: bool = False) -> LagSearchResult:
    """Fit one model per lag on a common row window and pick the WAIC minimum.

    Every fit uses the same WAIC random stream (``seed``) so differences
    between lags are not blurred by independent Monte Carlo noise. Fit
    failures are recorded in ``errors``; the remaining lags are still compared.
    """
    lags = sorted(set(int(l) for l in lags))
    panels = common_panels(panel_builder, lags)
    table, errors, fits = {}, {}, {}
    theta = None
    for l in lags:
        spec = _with_lag(spec_template, l)
        try:
            model = LatentModel(panels[l], spec)
            fit = fit_model(panels[l], spec, model=model, theta0=theta, waic_draws=waic_draws,
                            seed=seed, hessian=False)
        except (InferenceError, DesignError, ValueError) as e:
            errors[l] = str(e)
            log.warning("lag %d failed: %s", l, e)
            continue
        table[l] = fit.waic
        if warm_start:
            theta = fit.theta
        if keep_fits:
            fits[l] = fit
    if not table:
        raise SelectionError(f"every lag failed: {errors}")
    best_val = min(table.values())
    tied = [l for l, v in table.items() if v - best_val <= TIE_TOL]
    n_rows = len(next(iter(panels.values())))
    return LagSearchResult(min(tied), table, len(tied) > 1, errors, n_rows, fits)


def _with_lag(spec: ModelSpec, lag: int) -> ModelSpec:
    from dataclasses import replace
    return replace(spec, lag=lag)


# ---------------------------------------------------------------------------
# confounding ladder
# ---------------------------------------------------------------------------

LADDER_STEPS = (
    ("heat-only", ()),
    ("+O3", ("o3",)),
    ("+NO2", ("no2",)),
    ("+PM10", ("pm10",)),
    ("+humidity", ("q4_humidity",)),
    ("+income", ("income",)),
    ("+gini", ("gini",)),
    ("+pct65", ("pct65",)),
)


@dataclass
class LadderStep:
    name: str
    spec: ModelSpec
    heat: RRRow
    fit: FitResult | None = None


def ladder_specs(base: ModelSpec) -> list[tuple[str, ModelSpec]]:
    terms = ["intercept", "heat"]
    out = []
    for name, added in LADDER_STEPS:
        terms += list(added)
        out.append((name, base.with_terms(terms)))
    return out


def _fit_step(panel, name, spec, seed):
    fit = fit_model(panel, spec, waic_draws=None, seed=seed)
    return LadderStep(name, spec, fit.row("heat"), fit)


def confounding_ladder(panel, base_spec: ModelSpec, *, seed: int = 0, n_jobs: int = 1) -> list[LadderStep]:
    """Fit the heat-only model then add covariate blocks one at a time.

    Each step is fitted from scratch, so step 1 is identical to a standalone
    fit of the same spec. A failure aborts the ladder; the completed prefix
    is attached to the raised error as ``completed``.
    """
    specs = ladder_specs(base_spec)
    if n_jobs == 1:
        steps = []
        for name, spec in specs:
            try:
                steps.append(_fit_step(panel, name, spec, seed))
            except (InferenceError, DesignError) as e:
                err = SelectionError(f"ladder step {name} failed: {e}")
                err.completed = steps
                raise err from e
        return steps
    return Parallel(n_jobs=n_jobs)(delayed(_fit_step)(panel, n, s, seed) for n, s in specs)


def excludes_one(row: RRRow) -> bool:
    return row.cri_lower > 1.0 or row.cri_upper < 1.0


def ladder_verdict(steps: list[LadderStep]) -> str:
    first = excludes_one(steps[0].heat)
    if not first:
        return "no association"
    if len(steps) > 1 and not excludes_one(steps[1].heat):
        return "fully confounded"
    if all(excludes_one(s.heat) for s in steps):
        return "robust"
    return "partially confounded"


def ladder_frame(steps: list[LadderStep]) -> pd.DataFrame:
    return pd.DataFrame([(s.name, s.heat.rr, s.heat.cri_lower, s.heat.cri_upper, s.heat.probs) for s in steps],
                        columns=["step", "rr", "cri_lower", "cri_upper", "probs"])
