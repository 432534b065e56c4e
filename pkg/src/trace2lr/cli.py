"""Command-line entry point: ``trace2lr VERB --config cfg.json [key=value ...]``.

Exit status: 0 on success, 1 on usage or validation errors, 2 on runtime
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import plots
from .config import ConfigError, ExperimentConfig, load_config, to_plain
from .ingest import (
    ACTIVITIES,
    IngestError,
    aggregate_to_minutes,
    attach_labels,
    dataset_summary,
    load_intervals,
    load_registrations,
    load_schema,
    read_dataset,
    write_dataset,
)
from .lr import build_lr_system
from .metrics import BinaryEvalSet, cllr_decompose, ece_curve, from_log10, pav_curve, tippett_curve
from .scorer import fit_scorer

VERBS = ("ingest", "fit", "evaluate", "pairwise", "ablation", "sensitivity", "groups", "timeline", "importance")

log = logging.getLogger("trace2lr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trace2lr", description="LR systems for activity evidence from digital traces.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="experiment configuration (JSON)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--h1", help="comma-separated H1 activities")
    p.add_argument("--h2", help="comma-separated H2 activities")
    p.add_argument("--factor", choices=("phone", "location"))
    p.add_argument("--groups", help="comma-separated group names to include")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides (dotted keys, JSON values)")
    return p


def _split(text: str | None) -> list[str] | None:
    return None if text is None else [t.strip() for t in text.split(",") if t.strip()]


def _configure(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = str(Path(args.out).resolve())
    if args.h1:
        cfg.h1 = _split(args.h1)
    if args.h2:
        cfg.h2 = _split(args.h2)
    if args.factor:
        cfg.factor = args.factor
    if args.groups:
        wanted = _split(args.groups)
        grouping = cfg.grouping()
        missing = [g for g in wanted if g not in grouping.groups]
        if missing:
            raise ConfigError(f"unknown group(s): {', '.join(missing)}")
        cfg.groups = {g: list(grouping.groups[g]) for g in wanted}
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- output helpers

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_plain(obj), indent=2) + "\n")
    return path


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _dataset(cfg: ExperimentConfig):
    if not cfg.dataset:
        raise ConfigError("config has no 'dataset' path")
    path = cfg.path(cfg.dataset)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    return read_dataset(path)


def _plan(cfg, data):
    return ex.subjectwise_folds(data, cfg.folds, seed=cfg.seed)


def _hypotheses(cfg):
    if not cfg.h1 or not cfg.h2:
        raise ConfigError("this verb needs --h1 and --h2 (or h1/h2 in the config)")
    if set(cfg.h1) & set(cfg.h2):
        raise ConfigError("H1 and H2 share activities")
    return cfg.h1, cfg.h2


# ---------------------------------------------------------------- verbs

def cmd_ingest(cfg: ExperimentConfig) -> list[str]:
    ing = cfg.ingest
    if ing is None or not ing.registrations or not ing.intervals or not ing.schema:
        raise ConfigError("ingest needs ingest.registrations, ingest.intervals and ingest.schema")
    schema = load_schema(cfg.path(ing.schema))
    regs = []
    for p in ing.registrations:
        regs.extend(load_registrations(cfg.path(p), schema))
    vocab = tuple(ing.vocabulary) if ing.vocabulary else ACTIVITIES
    intervals = load_intervals(cfg.path(ing.intervals), vocab)
    data = attach_labels(aggregate_to_minutes(regs, schema), intervals, regs, schema, vocab)
    target = cfg.path(cfg.dataset or str(Path(cfg.output_dir) / "dataset.csv"))
    write_dataset(data, target)
    summary = dataset_summary(data)
    write_json(cfg.out / "dataset_summary.json", summary)
    return [f"ingest: {len(data.samples)} minute samples, {len(set(data.frame.subject))} subjects -> {target}"]


def cmd_fit(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    frame = data.frame
    if cfg.h1 and cfg.h2:
        classes = list(cfg.h1) + list(cfg.h2)
    else:
        classes = list(cfg.activities or [a for a in data.activity_vocabulary if a in set(frame.labels)])
    keep = np.flatnonzero(np.isin(frame.labels, classes))
    train = frame.take(keep)
    classes = [c for c in classes if c in set(train.labels)]
    model = fit_scorer(train, classes, cfg.scorer_config())
    out = cfg.out
    write_json(out / "model.json", model.to_json())
    lines = [f"fit: {model.config.family} on {len(train)} samples, classes {', '.join(classes)} -> {out / 'model.json'}"]
    if cfg.h1 and cfg.h2:
        system = build_lr_system(model, train, cfg.h1, cfg.h2, cfg.calibrator)
        write_json(out / "lr_system.json", system.to_json(model_ref="model.json"))
        lines.append(f"fit: LR system bounds [{system.bounds.lower_log10:.3f}, {system.bounds.upper_log10:.3f}] log10")
    return lines


def cmd_evaluate(cfg: ExperimentConfig) -> list[str]:
    h1, h2 = _hypotheses(cfg)
    data = _dataset(cfg)
    frame = data.frame
    # pool the H1 activities into one label and the H2 activities into another
    pair = ex.ActivityGrouping({"H1": tuple(h1), "H2": tuple(h2)}).relabel(frame)
    plan = _plan(cfg, pair)
    runs = ex.run_pair(pair, "H1", "H2", plan, cfg.scorer_config(), [cfg.calibrator], cfg.seed)
    pv = runs[cfg.calibrator]
    if not pv.has_both:
        raise ex.ExperimentError("validation data lack one of the hypotheses")
    es = BinaryEvalSet(from_log10(pv.log10_lrs), pv.labels)
    report = cllr_decompose(es)
    boot = ex.summarise_pair(pv, cfg.bootstrap_plan(), True, cfg.fold_aggregation)
    out = cfg.out
    write_json(out / "cllr_report.json", {
        "h1": h1, "h2": h2, "calibrator": cfg.calibrator, **report.to_json(),
        "bootstrap": boot.to_json(), "n_validation": len(pv.labels), "fallbacks": pv.fallbacks,
    })
    write_csv(out / "validation_lrs.csv", ["log10_lr", "label", "phone", "location", "fold"],
              zip(pv.log10_lrs, pv.labels, pv.phone, pv.location, pv.fold))
    title = f"{'+'.join(h1)} vs {'+'.join(h2)}"
    for name, curve in (("pav", pav_curve(es)), ("tippett", tippett_curve(es)), ("ece", ece_curve(es))):
        write_csv(out / f"{name}.csv", curve.header(), curve.rows())
        write_text(out / f"{name}.svg", plots.render_curve(curve, {"title": f"{name.upper()}: {title}"}))
    return [f"evaluate {title}: cllr={report.cllr:.4f} cllr_min={report.cllr_min:.4f} "
            f"cllr_cal={report.cllr_cal:.4f} (bootstrap cllr={boot.cllr:.4f})"]


def _matrix_rows(labels, m):
    for lab, row in zip(labels, m):
        yield [lab] + list(row)


def cmd_pairwise(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    rep = ex.pairwise_matrix(data, cfg.scorer_config(), cfg.calibrator, cfg.bootstrap_plan(), _plan(cfg, data),
                             cfg.activities, cfg.seed, fold_aggregation=cfg.fold_aggregation)
    out = cfg.out
    acts = rep.activities
    write_csv(out / "pairwise_cllr.csv", ["H1 \\ H2"] + acts, _matrix_rows(acts, rep.cllr))
    write_csv(out / "pairwise_cllrmin.csv", ["H2 \\ H1"] + acts, _matrix_rows(acts, rep.cllr_min))
    long_rows = []
    for i, a in enumerate(acts):
        for j, b in enumerate(acts):
            kind = "mean" if i == j else ("cllr" if i > j else "cllr_min")
            long_rows.append([a, b, kind, rep.combined()[i, j]])
    write_csv(out / "pairwise_long.csv", ["row", "column", "metric", "value"], long_rows)
    write_csv(out / "pairwise_cells.csv", ["h1", "h2", "cllr", "cllr_min", "cllr_cal", "accuracy", "n_validation",
                                           "cllr_point", "bootstrap_se", "fallbacks"],
              ([c.h1, c.h2, c.cllr, c.cllr_min, c.cllr_cal, c.accuracy, c.n_validation, c.cllr_point,
                c.bootstrap_se, c.fallbacks] for c in rep.cells))
    write_json(out / "pairwise.json", rep.to_json())
    write_text(out / "heatmap.svg", plots.render_heatmap(rep.combined(), acts, title="Cllr (lower) / Cllr_min (upper)"))
    n_pairs = len(ex.activity_pairs(acts))
    below = sum(c.cllr < 1 for c in rep.cells)
    return [f"pairwise: {len(rep.cells)}/{n_pairs} pairings evaluated, {below} with cllr < 1, "
            f"mean cllr {np.mean([c.cllr for c in rep.cells]):.4f}" if rep.cells else "pairwise: no pairing evaluable"]


def cmd_ablation(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    configs = {f: cfg.scorer_config(f) for f in cfg.families}
    rows = ex.ablation_sweep(data, cfg.families, cfg.calibrators, cfg.bootstrap_plan(), _plan(cfg, data),
                             cfg.activities, cfg.seed, configs)
    thresholds = ex.CLLR_THRESHOLDS
    write_csv(cfg.out / "ablation.csv",
              ["family", "calibrator", "accuracy", "mean_cllr"] + [f"pct_below_{t:.2f}" for t in thresholds]
              + ["n_pairs", "fallbacks"],
              ([r.family, r.calibrator, r.accuracy, r.mean_cllr] + [r.pct_below[t] for t in thresholds]
               + [r.n_pairs, r.fallbacks] for r in rows))
    write_json(cfg.out / "ablation.json", [r.to_json() for r in rows])
    return [f"ablation {r.family} + {r.calibrator}: accuracy {r.accuracy:.1f}%, mean cllr {r.mean_cllr:.4f}, "
            f"{r.pct_below[1.0]:.1f}% below 1" for r in rows]


def cmd_sensitivity(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    rep = ex.sensitivity_leave_factor(data, cfg.factor, cfg.scorer_config(), _plan(cfg, data), cfg.activities,
                                      cfg.calibrator, cfg.seed)
    write_csv(cfg.out / f"sensitivity_{cfg.factor}.csv",
              ["h1", "h2", "level", "cllr_separated", "cllr_control", "delta"],
              ([r.h1, r.h2, r.level, r.cllr_separated, r.cllr_control, r.delta] for r in rep.records))
    write_json(cfg.out / f"sensitivity_{cfg.factor}.json", rep.to_json())
    return [f"sensitivity {cfg.factor}: mean delta cllr {rep.mean_delta:+.4f} over {len(rep.records)} pairs, "
            f"W+={rep.statistic:.1f}, one-sided p={rep.p_value:.3g}"]


def cmd_groups(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    plan = _plan(cfg, data)
    grouping = cfg.grouping()
    results = ex.group_sweep(data, grouping, cfg.scorer_config(), cfg.bootstrap_plan(), plan, cfg.seed)
    write_csv(cfg.out / "group_sweep.csv", ["groups", "cmxe_normalized", "cmxe_point", "n_validation"],
              (["+".join(r.groups), r.cmxe_normalized, r.cmxe_point, r.n_validation] for r in results))
    write_json(cfg.out / "group_sweep.json", [r.to_json() for r in results])
    if results:
        write_text(cfg.out / "group_sweep.svg", plots.render_group_sweep(results))
    return [f"groups {' + '.join(r.groups)}: normalised cmxe {r.cmxe_normalized:.4f}" for r in results]


def _default_segments(grouping, relabeled, minutes=5):
    present = set(relabeled.labels)
    return [[g, minutes] for g in grouping.groups if g in present]


def cmd_timeline(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    grouping = cfg.grouping()
    frame = grouping.relabel(data.frame)
    plan = _plan(cfg, frame)
    train_subjects, val_subjects = plan.folds[0]
    tr, va = ex.fold_indices(frame, (train_subjects, val_subjects))
    train, val = frame.take(tr), frame.take(va)
    classes = [g for g in grouping.groups if (train.labels == g).any()]
    model = fit_scorer(train, classes, cfg.scorer_config())
    segments = cfg.timeline or _default_segments(grouping, val)
    rng = np.random.default_rng(ex.derive_seed(cfg.seed, "timeline"))
    seq = ex.compose_sequence(val, [(str(n), int(m)) for n, m in segments], rng)
    tl = ex.build_timeline(model, seq)
    write_csv(cfg.out / "timeline.csv", ["minute", "predicted", "truth"] + [f"p_{c}" for c in tl.classes],
              ([m.isoformat(), p, t] + list(row) for m, p, t, row in
               zip(tl.minutes, tl.predicted, tl.truth or [None] * len(tl.minutes), tl.likelihoods)))
    write_json(cfg.out / "timeline.json", tl.to_json())
    write_text(cfg.out / "timeline.svg", plots.render_timeline(tl, "Most likely activity group per minute"))
    return [f"timeline: {tl.n_correct} of {len(tl.minutes)} minutes predicted correctly "
            f"(validation subjects {', '.join(sorted(val_subjects))})"]


def cmd_importance(cfg: ExperimentConfig) -> list[str]:
    data = _dataset(cfg)
    rep = ex.pairwise_importance(data, cfg.scorer_config(), cfg.activities, cfg.seed)
    m = rep.matrix()
    write_csv(cfg.out / "importance.csv", ["activity"] + rep.ordering,
              ([a] + list(row) for a, row in zip(rep.activities, m)))
    write_json(cfg.out / "importance.json", rep.to_json())
    write_text(cfg.out / "importance.svg", plots.render_importance(rep))
    return [f"importance: top variables {', '.join(rep.ordering[:5])}"]


COMMANDS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "evaluate": cmd_evaluate, "pairwise": cmd_pairwise,
    "ablation": cmd_ablation, "sensitivity": cmd_sensitivity, "groups": cmd_groups,
    "timeline": cmd_timeline, "importance": cmd_importance,
}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_intermixed_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:       # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _configure(args)
    except (ConfigError, IngestError) as exc:
        print(f"trace2lr: {exc}", file=sys.stderr)
        return 1
    try:
        lines = COMMANDS[args.verb](cfg)
    except (ConfigError, IngestError) as exc:
        print(f"trace2lr: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"trace2lr: {args.verb} failed: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
