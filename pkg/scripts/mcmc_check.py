"""Compare the Laplace fit with the MCMC oracle on a small panel."""

import argparse

import numpy as np
import pandas as pd

from heatmort.inference import fit_model
from heatmort.lgm import ModelSpec
from heatmort.simulate import SimulationTruth, default_coefficients, mcmc_oracle, simulate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--areas", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=20_000)
    args = ap.parse_args()
    spec = ModelSpec(fixed_terms=("intercept", "heat", "q4_humidity"), random_effects=("iid_area",))
    truth = SimulationTruth(spec=spec, coefficients=default_coefficients(spec.fixed_terms))
    data = simulate_dataset(args.areas, (2016,), truth, seed=args.seed)
    fit = fit_model(data.panel, spec, waic_draws=None)
    r = mcmc_oracle(data.panel, spec, iterations=args.iterations, seed=0)
    rows = []
    for k, term in enumerate(r.term_names):
        m = fit.marginal(term)
        rows.append({"term": term, "laplace_mean": m.mean, "laplace_sd": m.sd, "mcmc_mean": r.fixed_mean()[k],
                     "mcmc_sd": r.fixed_sd()[k], "gap_in_sd": abs(m.mean - r.fixed_mean()[k]) / m.sd,
                     "rhat": r.rhat[term]})
    print(pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print("acceptance rates:", {k: round(v, 3) for k, v in r.acceptance.items()})
    print("flagged:", r.flagged, "max gap:", np.max([row["gap_in_sd"] for row in rows]).round(3))


if __name__ == "__main__":
    main()
