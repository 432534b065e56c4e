"""Dataset-level reproduction runs on the public activity dataset.

The dataset must first be converted to the canonical CSV format, e.g. with
``trace2lr ingest``. Then:

    TRACE2LR_THREADS=8 python scripts/run_fared.py data/fared.csv --out results/fared --folds 11

Writes the pairwise matrix, the family ablation, the group sweep (with the
naive all-activity system) and the leave-phone-out sensitivity report, and
prints the headline numbers.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from trace2lr import plots
from trace2lr.config import to_plain
from trace2lr.experiments import (
    ActivityGrouping,
    BootstrapPlan,
    ablation_sweep,
    evaluate_grouping,
    group_sweep,
    pairwise_matrix,
    sensitivity_leave_factor,
    subjectwise_folds,
)
from trace2lr.ingest import read_dataset
from trace2lr.scorer import ScorerConfig


def dump(path: Path, obj):
    path.write_text(json.dumps(to_plain(obj), indent=2) + "\n")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, default=Path("results/fared"))
    p.add_argument("--folds", type=int, default=None, help="subject folds (default: one per subject)")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip", default="", help="comma-separated parts to skip: pairwise,ablation,groups,sensitivity")
    args = p.parse_args()
    skip = set(filter(None, args.skip.split(",")))
    args.out.mkdir(parents=True, exist_ok=True)

    ds = read_dataset(args.dataset)
    plan = subjectwise_folds(ds, args.folds, seed=args.seed)
    boot = BootstrapPlan(args.replicates, seed=args.seed)
    cfg = ScorerConfig(seed=args.seed)

    if "pairwise" not in skip:
        rep = pairwise_matrix(ds, cfg, "logistic", boot, plan, seed=args.seed)
        dump(args.out / "pairwise.json", rep.to_json())
        (args.out / "heatmap.svg").write_text(plots.render_heatmap(rep.combined(), rep.activities))
        cl = rep.pair_cllrs()
        cl = cl[np.isfinite(cl)]
        print(f"pairwise: {np.sum(cl < 1)}/{cl.size} pairings below cllr 1 ({100 * np.mean(cl < 1):.1f}%), "
              f"mean cllr {cl.mean():.3f}")

    if "ablation" not in skip:
        rows = ablation_sweep(ds, ("gradient_boosted", "bagged_ensemble", "single_tree"), ("logistic", "kde", "gaussian"),
                              BootstrapPlan(20, seed=args.seed), plan, seed=args.seed)
        dump(args.out / "ablation.json", [r.to_json() for r in rows])
        for r in rows:
            print(f"ablation {r.family} + {r.calibrator}: mean cllr {r.mean_cllr:.3f}, "
                  f"{r.pct_below[1.0]:.1f}% below 1")

    if "groups" not in skip:
        naive = evaluate_grouping(ds.frame, ActivityGrouping.identity(ds.activity_vocabulary), plan, cfg,
                                  BootstrapPlan(20, seed=args.seed), args.seed)
        sweep = group_sweep(ds, ActivityGrouping.expert(), cfg, BootstrapPlan(20, seed=args.seed), plan, args.seed)
        dump(args.out / "group_sweep.json", {"naive": naive.to_json(), "subsets": [r.to_json() for r in sweep]})
        print(f"groups: naive all-activity normalised cmxe {naive.cmxe_normalized:.3f}")
        for r in sweep:
            print(f"groups {' + '.join(r.groups)}: {r.cmxe_normalized:.3f}")

    if "sensitivity" not in skip:
        sens = sensitivity_leave_factor(ds, "phone", cfg, plan, seed=args.seed)
        dump(args.out / "sensitivity_phone.json", sens.to_json())
        print(f"sensitivity phone: mean delta cllr {sens.mean_delta:+.4f}, one-sided p {sens.p_value:.3g}")


if __name__ == "__main__":
    main()
