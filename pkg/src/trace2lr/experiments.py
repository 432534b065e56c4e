"""Experimental procedures: subject-wise CV, multilevel bootstrap, pairwise
LR systems, ablation, leave-factor sensitivity, group sweeps and timelines.

Every independent work item (an activity pair, a fold, a bootstrap run) draws
its seed from the master seed and a stable identifier, so results do not
depend on scheduling or worker count.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import log_softmax
from scipy.stats import norm

from .calibration import (
    CalibrationError,
    compute_elub,
    fit_calibrator,
    log10_lr_from_log_odds,
    prior_odds_from_counts,
    bound_log10,
)
from .ingest import Frame, LabeledDataset
from .metrics import (
    BinaryEvalSet,
    MulticlassEvalSet,
    cllr,
    cllr_decompose,
    cmxe,
    from_log10,
)
from .scorer import ScorerConfig, fit_scorer, score_frame
from .scorer.ensemble import _as_frame
from .scorer.importance import ImportanceReport, aggregate_importance, variable_importance

log = logging.getLogger(__name__)

EXPERT_GROUPS: dict[str, tuple[str, ...]] = {
    "movement": ("cycling", "running", "walking"),
    "transport": ("bus", "car", "train", "tram"),
    "dynamic": ("dragging", "kicking", "punching", "throwing"),
    "elevation": ("elevator up", "elevator down", "escalator up", "escalator down", "stairs up", "stairs down"),
    "stationary": ("sitting", "standing"),
}

CLLR_THRESHOLDS = (1.0, 0.75, 0.5, 0.25)


class ExperimentError(ValueError):
    pass


def derive_seed(master: int, *ids) -> int:
    """Stable 63-bit seed for work item ``ids`` under ``master``."""
    h = hashlib.sha256(repr((int(master),) + tuple(str(i) for i in ids)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("TRACE2LR_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers: int | None = None):
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- folds

@dataclass
class CvPlan:
    folds: list[tuple[frozenset, frozenset]]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self) -> int:
        return len(self.folds)


def subjectwise_folds(data, n_folds: int | None = None, seed: int = 0) -> CvPlan:
    """Partition subjects into ``n_folds`` groups (default: one per subject)."""
    frame = _as_frame(data)
    subjects = sorted(set(frame.subject))
    n_folds = len(subjects) if n_folds is None else n_folds
    if n_folds < 1:
        raise ExperimentError("n_folds must be positive")
    if len(subjects) < n_folds:
        raise ExperimentError(f"{len(subjects)} subjects cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    shuffled = [subjects[i] for i in rng.permutation(len(subjects))]
    groups = [frozenset(g) for g in np.array_split(np.array(shuffled, dtype=object), n_folds)]
    everyone = frozenset(subjects)
    return CvPlan([(everyone - g, g) for g in groups])


def fold_indices(frame: Frame, fold, labels: Iterable[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    train_subjects, val_subjects = fold
    keep = np.ones(len(frame), dtype=bool) if labels is None else np.isin(frame.labels, list(labels))
    train = np.flatnonzero(keep & np.isin(frame.subject, list(train_subjects)))
    val = np.flatnonzero(keep & np.isin(frame.subject, list(val_subjects)))
    return train, val


# ---------------------------------------------------------------- bootstrap

@dataclass(frozen=True)
class BootstrapPlan:
    replicates: int = 1000
    seed: int = 0
    factors: tuple[str, ...] = ("phone", "location")
    max_redraws: int = 100

    def __post_init__(self):
        if self.replicates < 1:
            raise ExperimentError("replicates must be >= 1")


@dataclass
class BootstrapResult:
    mean: float
    values: np.ndarray

    @property
    def std_error(self) -> float:
        return float(np.std(self.values, ddof=1) / math.sqrt(len(self.values))) if len(self.values) > 1 else 0.0


def multilevel_bootstrap(
    factors: Mapping[str, np.ndarray],
    metric_fn: Callable[[np.ndarray, np.ndarray], float],
    plan: BootstrapPlan,
    seed: int | None = None,
) -> BootstrapResult:
    """Resample factor levels with replacement and average ``metric_fn``.

    For each factor with n unique levels, n levels are drawn with replacement.
    A row's multiplicity is the product over factors of how often its level
    was drawn; ``metric_fn(rows, multiplicity)`` sees only rows with a
    nonzero multiplicity. Replicates that select no rows, or on which the
    metric is undefined (ValueError), are redrawn.
    """
    names = list(factors)
    cols = [np.asarray(factors[n]) for n in names]
    n = len(cols[0]) if cols else 0
    if n == 0:
        raise ExperimentError("bootstrap needs at least one row")
    codes, n_levels = [], []
    for col in cols:
        levels, inv = np.unique(col.astype(str), return_inverse=True)
        codes.append(inv)
        n_levels.append(len(levels))
    rng = np.random.default_rng(plan.seed if seed is None else seed)
    values = np.empty(plan.replicates)
    for r in range(plan.replicates):
        for _attempt in range(plan.max_redraws + 1):
            mult = np.ones(n)
            for inv, k in zip(codes, n_levels):
                drawn = np.bincount(rng.integers(0, k, size=k), minlength=k)
                mult *= drawn[inv]
            rows = np.flatnonzero(mult > 0)
            if rows.size == 0:
                continue
            try:
                values[r] = metric_fn(rows, mult[rows])
                break
            except ValueError:
                continue
        else:
            raise ExperimentError(f"bootstrap replicate {r} failed after {plan.max_redraws} redraws")
    return BootstrapResult(float(values.mean()), values)


# ---------------------------------------------------------------- binary LR runs

@dataclass
class PooledValidation:
    """Validation LRs of one pairing pooled over folds, for one calibrator."""

    h1: str
    h2: str
    calibrator: str
    log10_lrs: np.ndarray
    labels: np.ndarray
    phone: np.ndarray
    location: np.ndarray
    correct: np.ndarray        # scorer argmax correct per row
    fold: np.ndarray
    fallbacks: int = 0         # folds calibrated with logistic instead of ``calibrator``

    def eval_set(self, rows=None, weights=None) -> BinaryEvalSet:
        rows = slice(None) if rows is None else rows
        return BinaryEvalSet(from_log10(self.log10_lrs[rows]), self.labels[rows], weights)

    @property
    def has_both(self) -> bool:
        return bool((self.labels == 1).any() and (self.labels == 0).any())


def calibrate_and_score(kind: str, s_train, y_train, s_eval) -> np.ndarray:
    """Bounded log10 LRs for ``s_eval`` from a calibrator fitted on training scores."""
    cal = fit_calibrator(kind, s_train, y_train)
    prior = prior_odds_from_counts(int((y_train == 1).sum()), int((y_train == 0).sum()))
    bounds = compute_elub(s_train, y_train, cal, prior)
    return bound_log10(log10_lr_from_log_odds(cal.log_odds(s_eval), prior), bounds)


def _binary_scores(model, frame):
    raw = score_frame(model, frame)
    return raw[:, 0] - raw[:, 1]


MIN_TRAIN_PER_CLASS = 2


def _train_ok(labels, h1, h2) -> bool:
    return ((labels == h1).sum() >= MIN_TRAIN_PER_CLASS) and ((labels == h2).sum() >= MIN_TRAIN_PER_CLASS)


def run_pair(
    frame: Frame,
    h1: str,
    h2: str,
    plan: CvPlan,
    config: ScorerConfig,
    calibrators: Sequence[str] = ("logistic",),
    seed: int = 0,
    n_jobs: int = 1,
) -> dict[str, PooledValidation]:
    """Cross-validated LR system for H1 = ``h1`` vs H2 = ``h2``."""
    parts: dict[str, list] = {c: [] for c in calibrators}
    fallbacks = {c: 0 for c in calibrators}
    for k, fold in enumerate(plan):
        tr, va = fold_indices(frame, fold, (h1, h2))
        if va.size == 0 or not _train_ok(frame.labels[tr], h1, h2):
            continue
        train, val = frame.take(tr), frame.take(va)
        cfg = replace(config, seed=derive_seed(seed, "pair", h1, h2, k))
        model = fit_scorer(train, [h1, h2], cfg, n_jobs=n_jobs)
        s_tr, s_va = _binary_scores(model, train), _binary_scores(model, val)
        y_tr = (train.labels == h1).astype(int)
        y_va = (val.labels == h1).astype(int)
        correct = (s_va >= 0).astype(int) == y_va
        for cal in calibrators:
            try:
                lr = calibrate_and_score(cal, s_tr, y_tr, s_va)
            except CalibrationError as exc:
                if cal == "logistic":
                    log.warning("pair (%s, %s) fold %d: calibration failed: %s", h1, h2, k, exc)
                    continue
                # density calibrators cannot handle a constant class score; fall back
                log.info("pair (%s, %s) fold %d: %s; using logistic", h1, h2, k, exc)
                lr = calibrate_and_score("logistic", s_tr, y_tr, s_va)
                fallbacks[cal] += 1
            parts[cal].append((lr, y_va, val.phone, val.location, correct, np.full(len(va), k)))
    out = {}
    for cal, chunks in parts.items():
        if chunks:
            cols = [np.concatenate(c) for c in zip(*chunks)]
        else:
            cols = [np.empty(0), np.empty(0, int), np.empty(0, object), np.empty(0, object),
                    np.empty(0, bool), np.empty(0, int)]
        out[cal] = PooledValidation(h1, h2, cal, *cols, fallbacks=fallbacks[cal])
    return out


@dataclass
class PairResult:
    h1: str
    h2: str
    calibrator: str
    cllr: float
    cllr_min: float | None
    accuracy: float
    n_validation: int
    cllr_point: float
    bootstrap_se: float
    fallbacks: int = 0

    @property
    def cllr_cal(self) -> float | None:
        return None if self.cllr_min is None else self.cllr - self.cllr_min

    def to_json(self) -> dict:
        return {"h1": self.h1, "h2": self.h2, "calibrator": self.calibrator, "cllr": self.cllr,
                "cllr_min": self.cllr_min, "cllr_cal": self.cllr_cal, "accuracy": self.accuracy,
                "n_validation": self.n_validation, "cllr_point": self.cllr_point,
                "bootstrap_se": self.bootstrap_se, "fallbacks": self.fallbacks}


def summarise_pair(pv: PooledValidation, boot: BootstrapPlan, with_min: bool = True,
                   fold_aggregation: str = "pooled") -> PairResult | None:
    """Bootstrapped Cllr (and Cllr_min) of one pairing.

    ``fold_aggregation="pooled"`` bootstraps the validation LRs of all folds
    together; ``"per_fold"`` bootstraps each fold separately and averages.
    """
    if fold_aggregation not in ("pooled", "per_fold"):
        raise ExperimentError(f"unknown fold aggregation {fold_aggregation!r}")
    if not pv.has_both:
        return None
    seed = derive_seed(boot.seed, "boot", pv.h1, pv.h2)
    if fold_aggregation == "pooled":
        groups = [np.arange(len(pv.labels))]
    else:
        groups = [np.flatnonzero(pv.fold == k) for k in np.unique(pv.fold)]
        groups = [g for g in groups if len(set(pv.labels[g])) == 2]
        if not groups:
            return None
    c, c_min, se = [], [], []
    for g in groups:
        factors = {k: v[g] for k, v in (("phone", pv.phone), ("location", pv.location)) if k in boot.factors}

        def metric(rows, w):
            return cllr(pv.eval_set(g[rows], w))

        b = multilevel_bootstrap(factors, metric, boot, seed=seed)
        c.append(b.mean)
        se.append(b.std_error)
        if with_min:
            def metric_min(rows, w):
                return cllr_decompose(pv.eval_set(g[rows], w)).cllr_min
            c_min.append(multilevel_bootstrap(factors, metric_min, boot, seed=seed).mean)
    return PairResult(pv.h1, pv.h2, pv.calibrator, float(np.mean(c)),
                      float(np.mean(c_min)) if with_min else None, float(np.mean(pv.correct)),
                      len(pv.labels), cllr(pv.eval_set()), float(np.mean(se)), pv.fallbacks)


def _pair_job(args):
    frame, h1, h2, plan, config, calibrators, boot, seed, with_min, agg = args
    runs = run_pair(frame, h1, h2, plan, config, calibrators, seed)
    return {cal: summarise_pair(pv, boot, with_min, agg) for cal, pv in runs.items()}


def activity_pairs(activities: Sequence[str]) -> list[tuple[str, str]]:
    """Unordered pairs as (row activity, column activity), row index > column."""
    return [(activities[i], activities[j]) for i in range(len(activities)) for j in range(i)]


def _run_all_pairs(frame, activities, plan, config, calibrators, boot, seed, with_min, workers=None,
                   fold_aggregation="pooled"):
    pairs = activity_pairs(activities)
    jobs = [(frame, h1, h2, plan, config, tuple(calibrators), boot, seed, with_min, fold_aggregation)
            for h1, h2 in pairs]
    results = _map(_pair_job, jobs, workers)
    return {pair: res for pair, res in zip(pairs, results)}


@dataclass
class PairwiseMatrixReport:
    activities: list[str]
    cllr: np.ndarray          # [i, j], i > j: H1 = activities[i], H2 = activities[j]
    cllr_min: np.ndarray      # [j, i], j < i
    diagonal: np.ndarray      # mean cllr of every pairing containing the activity
    cells: list[PairResult] = field(default_factory=list)
    calibrator: str = "logistic"

    def combined(self) -> np.ndarray:
        """Single matrix: lower triangle cllr, upper triangle cllr_min, diagonal means."""
        m = np.where(np.tril(np.ones_like(self.cllr, dtype=bool), -1), self.cllr, self.cllr_min)
        np.fill_diagonal(m, self.diagonal)
        return m

    def pair_cllrs(self) -> np.ndarray:
        idx = np.tril_indices(len(self.activities), -1)
        return self.cllr[idx]

    def to_json(self) -> dict:
        nan = lambda x: None if x is None or (isinstance(x, float) and math.isnan(x)) else x  # noqa: E731
        return {
            "activities": self.activities,
            "calibrator": self.calibrator,
            "diagonal": [nan(float(x)) for x in self.diagonal],
            "cells": [c.to_json() for c in self.cells],
            "elub": "surrogate",
        }


def _matrix_report(activities, results: Mapping[tuple[str, str], PairResult | None], calibrator) -> PairwiseMatrixReport:
    k = len(activities)
    pos = {a: i for i, a in enumerate(activities)}
    c = np.full((k, k), np.nan)
    cm = np.full((k, k), np.nan)
    cells = []
    for (h1, h2), res in results.items():
        if res is None:
            continue
        i, j = pos[h1], pos[h2]
        c[i, j] = res.cllr
        cm[j, i] = np.nan if res.cllr_min is None else res.cllr_min
        cells.append(res)
    full = np.where(np.isnan(c), c.T, c)
    diag = np.array([np.nanmean(np.delete(full[i], i)) if np.isfinite(np.delete(full[i], i)).any() else np.nan
                     for i in range(k)])
    return PairwiseMatrixReport(list(activities), c, cm, diag, cells, calibrator)


def pairwise_matrix(
    dataset,
    config: ScorerConfig = ScorerConfig(),
    calibrator_kind: str = "logistic",
    boot: BootstrapPlan = BootstrapPlan(),
    plan: CvPlan | None = None,
    activities: Sequence[str] | None = None,
    seed: int = 0,
    workers: int | None = None,
    fold_aggregation: str = "pooled",
) -> PairwiseMatrixReport:
    frame = _as_frame(dataset)
    activities = _activities(dataset, activities)
    if len(activities) < 2:
        raise ExperimentError("pairwise matrix needs >= 2 activities")
    plan = subjectwise_folds(frame, seed=seed) if plan is None else plan
    res = _run_all_pairs(frame, activities, plan, config, [calibrator_kind], boot, seed, True, workers,
                         fold_aggregation)
    return _matrix_report(activities, {p: r[calibrator_kind] for p, r in res.items()}, calibrator_kind)


def _activities(dataset, activities):
    if activities is not None:
        return list(activities)
    present = set(_as_frame(dataset).labels)
    if isinstance(dataset, LabeledDataset):
        return [a for a in dataset.activity_vocabulary if a in present]
    return sorted(present)


# ---------------------------------------------------------------- ablation

@dataclass
class AblationRow:
    family: str
    calibrator: str
    accuracy: float
    mean_cllr: float
    pct_below: dict[float, float]
    n_pairs: int
    fallbacks: int = 0

    def to_json(self) -> dict:
        return {"family": self.family, "calibrator": self.calibrator, "accuracy": self.accuracy,
                "mean_cllr": self.mean_cllr, "n_pairs": self.n_pairs, "fallbacks": self.fallbacks,
                "pct_below": {f"{t:.2f}": v for t, v in self.pct_below.items()}}


def summarise_cllrs(cllrs: Sequence[float], thresholds=CLLR_THRESHOLDS) -> tuple[float, dict[float, float]]:
    x = np.asarray(cllrs, dtype=float)
    return float(x.mean()), {t: float(100.0 * np.mean(x < t)) for t in thresholds}


def ablation_sweep(
    dataset,
    families: Sequence[str] = ("gradient_boosted", "bagged_ensemble", "single_tree"),
    calibrators: Sequence[str] = ("logistic", "kde", "gaussian"),
    boot: BootstrapPlan = BootstrapPlan(),
    plan: CvPlan | None = None,
    activities: Sequence[str] | None = None,
    seed: int = 0,
    configs: Mapping[str, ScorerConfig] | None = None,
    workers: int | None = None,
) -> list[AblationRow]:
    """Every (scorer family, calibrator) combination over all activity pairs.
    The scorer of a pair/fold is fitted once and shared by the calibrators."""
    if not families or not calibrators:
        raise ExperimentError("ablation needs at least one family and one calibrator")
    frame = _as_frame(dataset)
    activities = _activities(dataset, activities)
    plan = subjectwise_folds(frame, seed=seed) if plan is None else plan
    rows = []
    for fam in families:
        cfg = (configs or {}).get(fam) or ScorerConfig.for_family(fam)
        res = _run_all_pairs(frame, activities, plan, cfg, calibrators, boot, seed, False, workers)
        for cal in calibrators:
            cells = [r[cal] for r in res.values() if r[cal] is not None]
            if not cells:
                raise ExperimentError(f"no evaluable pairs for {fam} + {cal}")
            mean, pct = summarise_cllrs([c.cllr for c in cells])
            acc = float(np.mean([c.accuracy for c in cells])) * 100.0
            rows.append(AblationRow(fam, cal, acc, mean, pct, len(cells), sum(c.fallbacks for c in cells)))
    return rows


# ---------------------------------------------------------------- Wilcoxon

def _signed_ranks(differences) -> tuple[np.ndarray, np.ndarray]:
    from scipy.stats import rankdata
    d = np.asarray(differences, dtype=float)
    d = d[d != 0]
    return rankdata(np.abs(d)), d


def wilcoxon_signed_rank(differences, alternative: str = "greater", exact_max_n: int = 25) -> tuple[float, float]:
    """One-sample Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped. Returns (W+, p). The null distribution is
    exact (conditional on tied ranks) for n <= ``exact_max_n``, else normal
    with tie and continuity correction.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    ranks, d = _signed_ranks(differences)
    n = d.size
    if n == 0:
        return 0.0, 1.0
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    if n <= exact_max_n:
        # doubled ranks are integers even with ties
        r2 = np.rint(2 * ranks).astype(np.int64)
        dist = np.zeros(r2.sum() + 1)
        dist[0] = 1.0
        for r in r2:
            shifted = np.zeros_like(dist)
            shifted[r:] = dist[:dist.size - r]
            dist = dist + shifted
        dist /= 2.0 ** n
        obs = int(round(2 * w_plus))
        upper = dist[obs:].sum()
        lower = dist[:obs + 1].sum()
    else:
        mean = total / 2
        _, counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(counts ** 3 - counts) / 48
        sd = math.sqrt(var)
        upper = norm.sf((w_plus - mean - 0.5) / sd)
        lower = norm.cdf((w_plus - mean + 0.5) / sd)
    if alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        p = min(1.0, 2 * min(upper, lower))
    return w_plus, float(min(1.0, p))


# ---------------------------------------------------------------- sensitivity

def leave_factor_split(frame: Frame, train: np.ndarray, val: np.ndarray, factor: str, level) -> tuple[np.ndarray, np.ndarray]:
    """Drop ``level`` from training rows and keep only ``level`` in validation."""
    col = frame.factor(factor)
    return train[col[train] != level], val[col[val] == level]


def size_matched(rows: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random subset of ``rows`` of the given size, in original order."""
    if size >= rows.size:
        return rows
    return np.sort(rng.choice(rows, size=size, replace=False))


@dataclass
class SensitivityRecord:
    h1: str
    h2: str
    level: str
    cllr_separated: float
    cllr_control: float

    @property
    def delta(self) -> float:
        return self.cllr_separated - self.cllr_control


@dataclass
class SensitivityReport:
    factor: str
    records: list[SensitivityRecord]
    level_delta: dict[str, float]
    mean_delta: float
    statistic: float
    p_value: float
    skipped: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "factor": self.factor, "mean_delta": self.mean_delta, "statistic": self.statistic,
            "p_value": self.p_value, "level_delta": self.level_delta, "skipped": self.skipped,
            "records": [{"h1": r.h1, "h2": r.h2, "level": r.level, "cllr_separated": r.cllr_separated,
                         "cllr_control": r.cllr_control, "delta": r.delta} for r in self.records],
        }


def _sensitivity_job(args):
    frame, h1, h2, factor, levels, plan, config, calibrator, seed = args
    pooled = {lvl: {"sep": [], "ctl": []} for lvl in levels}
    col = frame.factor(factor)
    for k, fold in enumerate(plan):
        tr, va = fold_indices(frame, fold, (h1, h2))
        for lvl in levels:
            if not (col[va] == lvl).any():
                continue
            tr_sep, va_sep = leave_factor_split(frame, tr, va, factor, lvl)
            rng = np.random.default_rng(derive_seed(seed, "control", h1, h2, k, lvl))
            tr_ctl, va_ctl = size_matched(tr, tr_sep.size, rng), size_matched(va, va_sep.size, rng)
            for tag, t_idx, v_idx in (("sep", tr_sep, va_sep), ("ctl", tr_ctl, va_ctl)):
                train = frame.take(t_idx)
                if not _train_ok(train.labels, h1, h2):
                    continue
                val = frame.take(v_idx)
                cfg = replace(config, seed=derive_seed(seed, "sens", tag, h1, h2, k, lvl))
                model = fit_scorer(train, [h1, h2], cfg, n_jobs=1)
                y_tr = (train.labels == h1).astype(int)
                try:
                    lr = calibrate_and_score(calibrator, _binary_scores(model, train), y_tr, _binary_scores(model, val))
                except CalibrationError:
                    continue
                pooled[lvl][tag].append((lr, (val.labels == h1).astype(int)))
    out = []
    for lvl, parts in pooled.items():
        vals = {}
        for tag in ("sep", "ctl"):
            if not parts[tag]:
                break
            lr = np.concatenate([p[0] for p in parts[tag]])
            y = np.concatenate([p[1] for p in parts[tag]])
            if not ((y == 1).any() and (y == 0).any()):
                break
            vals[tag] = cllr(BinaryEvalSet(from_log10(lr), y))
        if len(vals) == 2:
            out.append(SensitivityRecord(h1, h2, str(lvl), vals["sep"], vals["ctl"]))
    return out


def sensitivity_leave_factor(
    dataset,
    factor: str,
    config: ScorerConfig = ScorerConfig(),
    plan: CvPlan | None = None,
    activities: Sequence[str] | None = None,
    calibrator: str = "logistic",
    seed: int = 0,
    workers: int | None = None,
) -> SensitivityReport:
    """Cllr change when validation data come from a factor level absent in
    training, against a size-matched random-removal control.

    For every pairing and level, validation LRs are pooled over folds before
    the Cllr is taken; the one-sided Wilcoxon test runs on the resulting
    (pairing, level) differences.
    """
    frame = _as_frame(dataset)
    levels = sorted(set(frame.factor(factor)))
    if len(levels) < 2:
        raise ExperimentError(f"factor {factor!r} needs >= 2 levels, found {levels}")
    activities = _activities(dataset, activities)
    plan = subjectwise_folds(frame, seed=seed) if plan is None else plan
    jobs = [(frame, h1, h2, factor, levels, plan, config, calibrator, seed) for h1, h2 in activity_pairs(activities)]
    records = [r for chunk in _map(_sensitivity_job, jobs, workers) for r in chunk]
    skipped = []
    level_delta = {}
    for lvl in levels:
        ds = [r.delta for r in records if r.level == str(lvl)]
        if ds:
            level_delta[str(lvl)] = float(np.mean(ds))
        else:
            log.warning("level %r of %s never evaluable; skipped", lvl, factor)
            skipped.append(str(lvl))
    deltas = [r.delta for r in records]
    stat, p = wilcoxon_signed_rank(deltas, "greater")
    return SensitivityReport(factor, records, level_delta, float(np.mean(deltas)) if deltas else float("nan"),
                             stat, p, skipped)


# ---------------------------------------------------------------- multiclass

@dataclass
class ActivityGrouping:
    groups: dict[str, tuple[str, ...]]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for g, acts in self.groups.items():
            for a in acts:
                if a in seen:
                    raise ExperimentError(f"activity {a!r} is in groups {seen[a]!r} and {g!r}")
                seen[a] = g
        self._lookup = seen

    def group_of(self, activity: str) -> str | None:
        return self._lookup.get(activity)

    def subset(self, names: Iterable[str]) -> "ActivityGrouping":
        return ActivityGrouping({n: self.groups[n] for n in names})

    def relabel(self, frame: Frame) -> Frame:
        """Frame restricted to grouped activities, labels replaced by group names."""
        mapped = np.array([self._lookup.get(a) for a in frame.labels], dtype=object)
        keep = np.flatnonzero(mapped != None)  # noqa: E711
        out = frame.take(keep)
        out.labels = mapped[keep]
        return out

    @classmethod
    def expert(cls) -> "ActivityGrouping":
        return cls(dict(EXPERT_GROUPS))

    @classmethod
    def identity(cls, activities: Iterable[str]) -> "ActivityGrouping":
        return cls({a: (a,) for a in activities})


@dataclass
class MulticlassRun:
    classes: list[str]
    loglik: np.ndarray
    labels: np.ndarray
    phone: np.ndarray
    location: np.ndarray
    minute: np.ndarray
    subject: np.ndarray


def multiclass_cv(frame: Frame, classes: Sequence[str], plan: CvPlan, config: ScorerConfig, seed: int = 0) -> MulticlassRun:
    """Pooled validation log-likelihoods (log-softmax of raw scores)."""
    classes = list(classes)
    chunks = []
    for k, fold in enumerate(plan):
        tr, va = fold_indices(frame, fold, classes)
        if va.size == 0:
            continue
        train = frame.take(tr)
        present = [c for c in classes if (train.labels == c).sum() >= MIN_TRAIN_PER_CLASS]
        if present != classes:
            log.warning("fold %d lacks training data for %s; skipped", k, sorted(set(classes) - set(present)))
            continue
        cfg = replace(config, seed=derive_seed(seed, "multi", *classes, k))
        model = fit_scorer(train, classes, cfg, n_jobs=1)
        val = frame.take(va)
        ll = log_softmax(score_frame(model, val), axis=1)
        y = np.array([classes.index(c) for c in val.labels])
        chunks.append((ll, y, val.phone, val.location, val.minute, val.subject))
    if not chunks:
        raise ExperimentError(f"no fold could be evaluated for classes {classes}")
    cols = [np.concatenate(c) for c in zip(*chunks)]
    return MulticlassRun(classes, *cols)


def bootstrap_cmxe(run: MulticlassRun, boot: BootstrapPlan, seed: int) -> BootstrapResult:
    factors = {k: v for k, v in {"phone": run.phone, "location": run.location}.items() if k in boot.factors}

    def metric(rows, w):
        return cmxe(MulticlassEvalSet(run.loglik[rows], run.labels[rows], w))[1]

    return multilevel_bootstrap(factors, metric, boot, seed=seed)


@dataclass
class GroupSweepResult:
    groups: tuple[str, ...]
    cmxe_normalized: float
    cmxe_point: float
    n_validation: int

    def to_json(self) -> dict:
        return {"groups": list(self.groups), "cmxe_normalized": self.cmxe_normalized,
                "cmxe_point": self.cmxe_point, "n_validation": self.n_validation}


def group_subsets(names: Sequence[str], min_size: int = 2) -> list[tuple[str, ...]]:
    return [c for r in range(min_size, len(names) + 1) for c in itertools.combinations(names, r)]


def evaluate_grouping(frame: Frame, grouping: ActivityGrouping, plan: CvPlan, config: ScorerConfig,
                      boot: BootstrapPlan, seed: int = 0) -> GroupSweepResult:
    names = tuple(grouping.groups)
    relabeled = grouping.relabel(frame)
    present = [g for g in names if (relabeled.labels == g).any()]
    if len(present) < 2:
        raise ExperimentError(f"grouping {names} leaves fewer than two groups with data")
    run = multiclass_cv(relabeled, present, plan, config, seed)
    b = bootstrap_cmxe(run, boot, derive_seed(boot.seed, "cmxe", *present))
    point = cmxe(MulticlassEvalSet(run.loglik, run.labels))[1]
    return GroupSweepResult(tuple(present), b.mean, point, len(run.labels))


def _group_job(args):
    frame, grouping, plan, config, boot, seed = args
    try:
        return evaluate_grouping(frame, grouping, plan, config, boot, seed)
    except ExperimentError as exc:
        log.warning("group subset %s skipped: %s", tuple(grouping.groups), exc)
        return None


def group_sweep(
    dataset,
    grouping: ActivityGrouping | None = None,
    config: ScorerConfig = ScorerConfig(),
    boot: BootstrapPlan = BootstrapPlan(),
    plan: CvPlan | None = None,
    seed: int = 0,
    workers: int | None = None,
) -> list[GroupSweepResult]:
    """Normalised Cmxe for every subset of >= 2 groups."""
    grouping = ActivityGrouping.expert() if grouping is None else grouping
    frame = _as_frame(dataset)
    # a group without samples would only duplicate the subsets without it
    present = set(grouping.relabel(frame).labels)
    names = [g for g in grouping.groups if g in present]
    absent = [g for g in grouping.groups if g not in present]
    if absent:
        log.warning("groups without samples left out of the sweep: %s", ", ".join(absent))
    if len(names) < 2:
        raise ExperimentError("group sweep needs >= 2 groups with samples")
    plan = subjectwise_folds(frame, seed=seed) if plan is None else plan
    jobs = [(frame, grouping.subset(s), plan, config, boot, seed) for s in group_subsets(names)]
    return [r for r in _map(_group_job, jobs, workers) if r is not None]


# ---------------------------------------------------------------- timelines

@dataclass
class Timeline:
    minutes: list
    classes: list[str]
    likelihoods: np.ndarray
    predicted: list[str]
    truth: list[str | None] | None = None

    @property
    def n_correct(self) -> int:
        if self.truth is None:
            return 0
        return sum(p == t for p, t in zip(self.predicted, self.truth))

    def to_json(self) -> dict:
        return {
            "classes": self.classes,
            "minutes": [m.isoformat() if hasattr(m, "isoformat") else str(m) for m in self.minutes],
            "likelihoods": self.likelihoods.tolist(),
            "predicted": self.predicted,
            "truth": self.truth,
        }


def build_timeline(model, samples, grouping: ActivityGrouping | None = None) -> Timeline:
    """Per-minute class likelihoods and the most likely class (first in
    ``class_order`` on ties)."""
    frame = _as_frame(samples)
    lik = np.exp(log_softmax(score_frame(model, frame), axis=1))
    predicted = [model.class_order[i] for i in np.argmax(lik, axis=1)]
    truth = None
    if len(frame) and frame.labels[0] is not None:
        if grouping is not None:
            truth = [grouping.group_of(a) for a in frame.labels]
        else:
            truth = [a if a in model.class_order else None for a in frame.labels]
    return Timeline(list(frame.minute), list(model.class_order), lik, predicted, truth)


def compose_sequence(frame: Frame, segments: Sequence[tuple[str, int]], rng: np.random.Generator,
                     grouping: ActivityGrouping | None = None) -> Frame:
    """Rows drawn (without replacement where possible) to follow ``segments``,
    a list of (activity or group, minutes) in order. Minutes are renumbered
    consecutively from the first drawn row."""
    if not segments:
        raise ExperimentError("no segments to compose")
    labels = frame.labels if grouping is None else np.array([grouping.group_of(a) for a in frame.labels], dtype=object)
    picked = []
    for name, n in segments:
        pool = np.flatnonzero(labels == name)
        if pool.size == 0:
            raise ExperimentError(f"no samples for {name!r}")
        picked.extend(rng.choice(pool, size=n, replace=n > pool.size).tolist())
    out = frame.take(np.array(picked))
    if len(out):
        from datetime import timedelta
        start = frame.minute[picked[0]]
        out.minute = np.array([start + timedelta(minutes=i) for i in range(len(out))], dtype=object)
    return out


# ---------------------------------------------------------------- importance

def _importance_job(args):
    frame, h1, h2, config, seed = args
    tr = np.flatnonzero(np.isin(frame.labels, [h1, h2]))
    train = frame.take(tr)
    if not _train_ok(train.labels, h1, h2):
        return None
    model = fit_scorer(train, [h1, h2], replace(config, seed=derive_seed(seed, "imp", h1, h2)), n_jobs=1)
    return variable_importance(model)


def pairwise_importance(dataset, config: ScorerConfig = ScorerConfig(), activities: Sequence[str] | None = None,
                        seed: int = 0, workers: int | None = None) -> ImportanceReport:
    """Variable importance per activity, averaged over all pairings with it."""
    frame = _as_frame(dataset)
    activities = _activities(dataset, activities)
    jobs = [(frame, h1, h2, config, seed) for h1, h2 in activity_pairs(activities)]
    reports = [r for r in _map(_importance_job, jobs, workers) if r is not None]
    if not reports:
        raise ExperimentError("no pairing could be fitted")
    agg = aggregate_importance(reports)
    order = [a for a in activities if a in agg.activities]
    agg.activities = order
    return agg
