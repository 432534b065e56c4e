"""Scorer family x calibrator ablation on a synthetic dataset.

Prints one row per combination with accuracy, mean Cllr and the share of
pairings below each Cllr threshold. Use --workers to spread pairings over
processes.
"""

import argparse

from trace2lr.experiments import CLLR_THRESHOLDS, BootstrapPlan, ablation_sweep
from trace2lr.synthetic import make_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--separation", type=float, default=0.8)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args()
    ds = make_dataset(activities=("walking", "running", "sitting", "car", "bus"), n_subjects=args.subjects,
                      minutes_per_activity=12, separation=args.separation, seed=args.seed)
    rows = ablation_sweep(ds, boot=BootstrapPlan(args.replicates, seed=args.seed), seed=args.seed,
                          workers=args.workers)
    head = " ".join(f"<{t:.2f}" for t in CLLR_THRESHOLDS)
    print(f"{'family':<18} {'calibrator':<10} {'acc%':>6} {'cllr':>7}  {head}")
    for r in rows:
        pct = " ".join(f"{r.pct_below[t]:5.1f}" for t in CLLR_THRESHOLDS)
        print(f"{r.family:<18} {r.calibrator:<10} {r.accuracy:6.1f} {r.mean_cllr:7.4f}  {pct}")


if __name__ == "__main__":
    main()
