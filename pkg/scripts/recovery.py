"""Parameter-recovery study on the 30-area, 4-summer zinb1 fixture."""

import argparse
import logging
from pathlib import Path

from heatmort.experiments import recovery_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--out", type=Path, default=Path("results/recovery"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    coef, hyper = recovery_study(range(args.seeds))
    coef.to_csv(args.out / "coefficients.csv", index=False)
    hyper.to_csv(args.out / "hyperparameters.csv", index=False)
    by_term = coef.groupby("term")["covered"].mean().rename("coverage")
    by_term.to_csv(args.out / "coverage_by_term.csv")
    print(f"pooled coverage {coef['covered'].mean():.3f}")
    print(f"size ratio range {(hyper['size'] / hyper['true_size']).min():.3f}"
          f"-{(hyper['size'] / hyper['true_size']).max():.3f}")
    print(f"pi error max {(hyper['zero_weight'] - hyper['true_zero_weight']).abs().max():.3f}")


if __name__ == "__main__":
    main()
