from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heatmort import selection as sel
from heatmort.inference import RRRow, fit_model
from heatmort.lgm import ModelSpec
from heatmort.selection import LadderStep, SelectionError, confounding_ladder, lag_search, ladder_verdict, waic
from heatmort.simulate import SimulationTruth, default_coefficients, simulate_dataset

# -- WAIC -------------------------------------------------------------------


def test_waic_identical_draws():
    ll = np.tile(np.array([[-1.0], [-2.5], [-0.3]]), (1, 50))
    w, p, lppd = waic(ll)
    assert p == pytest.approx(0.0, abs=1e-25)
    assert lppd == pytest.approx(-3.8, abs=1e-12)
    assert w == pytest.approx(-2 * -3.8, abs=1e-12)


def test_waic_hand_example():
    ll = np.array([[-1.0, -1.0], [-1.0, -3.0]])
    w, p, lppd = waic(ll)
    assert lppd == pytest.approx(-1 + np.log((np.exp(-1) + np.exp(-3)) / 2), abs=1e-14)
    assert p == pytest.approx(2.0, abs=1e-14)
    assert w == pytest.approx(-2 * (lppd - p), abs=1e-14)


def test_waic_errors():
    with pytest.raises(SelectionError):
        waic(np.zeros((3, 1)))
    with pytest.raises(SelectionError):
        waic(np.array([[0.0, -np.inf]]))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)), elements=st.floats(-50, 0)),
       st.randoms())
@settings(max_examples=60)
def test_waic_permutation_invariance(ll, rnd):
    base = waic(ll)
    rows = list(range(ll.shape[0]))
    cols = list(range(ll.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    np.testing.assert_allclose(waic(ll[rows][:, cols]), base, rtol=1e-12, atol=1e-9)


# -- ladder verdicts ----------------------------------------------------------


def _row(lo, hi):
    return RRRow("heat", float(np.sqrt(lo * hi)), lo, hi, 0.9)


def _steps(*intervals):
    return [LadderStep(name, ModelSpec(), _row(lo, hi)) for (name, _), (lo, hi) in zip(sel.LADDER_STEPS, intervals)]


@pytest.mark.parametrize("intervals,verdict", [
    ([(0.9, 1.2)] * 8, "no association"),
    ([(1.05, 1.3), (0.95, 1.2)] + [(0.95, 1.2)] * 6, "fully confounded"),
    ([(1.05, 1.3)] * 8, "robust"),
    ([(1.05, 1.3)] * 5 + [(0.99, 1.2)] * 3, "partially confounded"),
    ([(0.7, 0.9)] * 8, "robust"),
])
def test_ladder_verdicts(intervals, verdict):
    assert ladder_verdict(_steps(*intervals)) == verdict


def test_ladder_specs_order():
    specs = sel.ladder_specs(ModelSpec())
    assert [n for n, _ in specs] == ["heat-only", "+O3", "+NO2", "+PM10", "+humidity", "+income", "+gini", "+pct65"]
    assert specs[0][1].fixed_terms == ("intercept", "heat")
    assert specs[-1][1].fixed_terms == ("intercept", "heat", "q4_humidity", "pm10", "no2", "o3", "income", "gini",
                                        "pct65")
    assert all(s.random_effects == ModelSpec().random_effects and s.lag == 7 for _, s in specs)


# -- lag search and ladder on small simulations -------------------------------

SMALL = ModelSpec(fixed_terms=("intercept", "heat", "q4_humidity"), random_effects=("iid_area",))


@pytest.fixture(scope="module")
def small_sim():
    coefs = default_coefficients(SMALL.fixed_terms)
    coefs["heat"] = 0.3
    truth = SimulationTruth(spec=SMALL, coefficients=coefs)
    return simulate_dataset(10, (2016, 2017), truth, seed=2)


def test_single_lag_set(small_sim):
    res = lag_search(small_sim.panel_builder(SMALL), SMALL, [4], waic_draws=200)
    assert res.best_lag == 4 and not res.tie and list(res.waic) == [4]


def test_lag_search_uses_common_rows(small_sim):
    panels = sel.common_panels(small_sim.panel_builder(SMALL), [1, 5, 9])
    keys = [p.keys() for p in panels.values()]
    assert all(k.equals(keys[0]) for k in keys)
    assert len(panels[1]) == len(small_sim.build_panel(replace(SMALL, lag=9)))


def test_lag_search_tie_prefers_smaller_lag(monkeypatch, small_sim):
    class Fake:
        def __init__(self, lag):
            self.waic, self.theta = 100.0, None

    monkeypatch.setattr(sel, "fit_model", lambda panel, spec, **kw: Fake(spec.lag))
    monkeypatch.setattr(sel, "LatentModel", lambda panel, spec: None)
    res = lag_search(small_sim.panel_builder(SMALL), SMALL, [3, 2, 6], waic_draws=10)
    assert res.best_lag == 2 and res.tie


def test_lag_search_partial_failure(monkeypatch, small_sim):
    real = sel.fit_model

    def flaky(panel, spec, **kw):
        if spec.lag == 3:
            raise sel.InferenceError("boom")
        return real(panel, spec, **kw)

    monkeypatch.setattr(sel, "fit_model", flaky)
    res = lag_search(small_sim.panel_builder(SMALL), SMALL, [2, 3], waic_draws=100)
    assert set(res.waic) == {2} and "boom" in res.errors[3]
    assert list(res.frame()["lag"]) == [2, 3]


def test_waic_monte_carlo_stability(small_sim):
    spec = SMALL
    fit = fit_model(small_sim.panel, spec, waic_draws=None, hessian=False)
    from heatmort.inference import LatentModel, laplace_state, waic_from_state
    model = LatentModel(small_sim.panel, spec)
    state = laplace_state(model, fit.theta)
    values = [waic_from_state(model, state, 1000, seed)[0] for seed in range(5)]
    assert (max(values) - min(values)) / abs(np.mean(values)) < 0.005


def test_ladder_prefix_and_step_one_identity(small_sim):
    base = ModelSpec(random_effects=("iid_area",))
    panel = small_sim.build_panel(base)
    steps = confounding_ladder(panel, base)
    assert [s.name for s in steps] == [n for n, _ in sel.LADDER_STEPS]
    alone = fit_model(panel, steps[0].spec, waic_draws=None)
    assert alone.row("heat") == steps[0].heat
    frame = sel.ladder_frame(steps)
    assert list(frame.columns) == ["step", "rr", "cri_lower", "cri_upper", "probs"]


def test_ladder_failure_reports_prefix(monkeypatch, small_sim):
    real = sel.fit_model

    def flaky(panel, spec, **kw):
        if "no2" in spec.fixed_terms:
            raise sel.InferenceError("no2 step broke")
        return real(panel, spec, **kw)

    monkeypatch.setattr(sel, "fit_model", flaky)
    base = ModelSpec(random_effects=("iid_area",))
    with pytest.raises(SelectionError) as e:
        confounding_ladder(small_sim.build_panel(base), base)
    assert [s.name for s in e.value.completed] == ["heat-only", "+O3"]


def test_null_heat_step_one():
    coefs = default_coefficients(SMALL.fixed_terms)
    coefs["heat"] = 0.0
    coefs["q4_humidity"] = 0.0
    data = simulate_dataset(12, (2016, 2017), SimulationTruth(spec=SMALL, coefficients=coefs), seed=11)
    spec = ModelSpec(fixed_terms=("intercept", "heat"), random_effects=("iid_area",))
    fit = fit_model(data.build_panel(spec), spec, waic_draws=None)
    row = fit.row("heat")
    assert row.cri_lower < 1.0 < row.cri_upper
    assert abs(np.log(row.rr)) < 2.5 * fit.marginal("heat").sd
