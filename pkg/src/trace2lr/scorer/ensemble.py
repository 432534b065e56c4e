"""Tree-ensemble scorers over mixed-type features with MISSING values.

Three families share one tree grower:

* ``gradient_boosted``: softmax boosting, one tree per class per round fitted
  to the Newton step of the weighted multinomial log-loss. With two classes
  the class-2 tree is the mirror image of the class-1 tree (its gradient is
  the negated class-1 gradient with the same hessian), so it is grown once
  and stored with leaf values ``(v, -v)``.
* ``bagged_ensemble``: bootstrap-resampled classification trees with
  sqrt-feature subsampling per node; scores are log mean class frequencies.
* ``single_tree``: one unpruned classification tree.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from ..ingest import Frame, LabeledDataset, MinuteSample, VariableKind
from .encoding import TokenStats, encode_ordered_categorical, token_stats
from .tree import Binner, Tree, grow_tree

FAMILIES = ("gradient_boosted", "bagged_ensemble", "single_tree")
PROB_FLOOR = 1e-6


class ScorerError(ValueError):
    pass


@dataclass(frozen=True)
class ScorerConfig:
    family: str = "gradient_boosted"
    rounds: int = 200
    max_depth: int | None = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    seed: int = 0
    l2_reg: float = 1.0
    max_bins: int = 255

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ScorerError(f"unknown scorer family {self.family!r}; choose from {FAMILIES}")
        if self.rounds < 1:
            raise ScorerError("rounds must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ScorerError("max_depth must be positive or None")
        if not 0 < self.learning_rate <= 1:
            raise ScorerError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ScorerError("min_samples_leaf must be >= 1")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "ScorerConfig":
        presets = {
            "gradient_boosted": {},
            "bagged_ensemble": {"rounds": 100, "max_depth": None},
            "single_tree": {"rounds": 1, "max_depth": None},
        }
        if family not in presets:
            raise ScorerError(f"unknown scorer family {family!r}; choose from {FAMILIES}")
        return cls(family=family, **{**presets[family], **overrides})


@dataclass(frozen=True)
class ClassWeights:
    weights: Mapping[str, float]

    def __getitem__(self, label: str) -> float:
        return self.weights[label]


def compute_class_weights(labels: Sequence[str], classes: Sequence[str] | None = None) -> ClassWeights:
    """Inverse-frequency weights N / (K * count), so the per-sample mean is 1."""
    labels = list(labels)
    classes = sorted(set(labels)) if classes is None else list(classes)
    counts = {c: 0 for c in classes}
    for lab in labels:
        if lab in counts:
            counts[lab] += 1
    empty = [c for c, n in counts.items() if n == 0]
    if empty:
        raise ScorerError(f"classes without samples: {empty}")
    n = sum(counts.values())
    k = len(classes)
    return ClassWeights({c: n / (k * counts[c]) for c in classes})


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("TRACE2LR_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class FeatureEncoder:
    """Maps schema variables to the numeric columns the trees split on."""

    variables: list[tuple[str, str]]          # (name, kind)
    features: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    stats: dict[str, TokenStats] = field(default_factory=dict)
    prior: float = 1.0

    def _targets(self, class_order):
        # binary: one statistic for the first class is enough
        return class_order[:1] if len(class_order) == 2 else class_order

    def fit_transform(self, frame: Frame, y: np.ndarray, class_order, rng) -> np.ndarray:
        cols = []
        perm = rng.permutation(len(frame))
        self.features, self.sources, self.stats = [], [], {}
        for name, kind in self.variables:
            col = frame.columns[name]
            if kind == VariableKind.CATEGORICAL.value:
                for k, cls in enumerate(self._targets(class_order)):
                    target = (y == class_order.index(cls)).astype(float)
                    feat = f"{name}|{cls}"
                    cols.append(encode_ordered_categorical(col, target, perm, self.prior))
                    self.stats[feat] = token_stats(col, target, self.prior)
                    self.features.append(feat)
                    self.sources.append(name)
            else:
                cols.append(np.asarray(col, dtype=float))
                self.features.append(name)
                self.sources.append(name)
        return np.column_stack(cols) if cols else np.empty((len(frame), 0))

    def transform(self, columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.empty((n, len(self.features)))
        for j, (feat, src) in enumerate(zip(self.features, self.sources)):
            if feat in self.stats:
                out[:, j] = self.stats[feat].transform(columns[src])
            else:
                out[:, j] = np.asarray(columns[src], dtype=float)
        return out

    def to_json(self) -> dict:
        return {"variables": self.variables, "features": self.features, "sources": self.sources,
                "stats": {k: v.to_json() for k, v in self.stats.items()}, "prior": self.prior}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureEncoder":
        return cls([tuple(v) for v in d["variables"]], list(d["features"]), list(d["sources"]),
                   {k: TokenStats.from_json(v) for k, v in d["stats"].items()}, d["prior"])


@dataclass
class TreeEnsembleModel:
    config: ScorerConfig
    class_order: list[str]
    encoder: FeatureEncoder
    trees: list[Tree]
    base_score: np.ndarray
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.class_order)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        n, k = X.shape[0], self.n_classes
        if self.config.family == "gradient_boosted":
            out = np.tile(self.base_score, (n, 1))
            for t in self.trees:
                out[:, t.outputs] += t.predict(X)
            return out
        prob = np.zeros((n, k))
        for t in self.trees:
            prob[:, t.outputs] += t.predict(X)
        prob /= len(self.trees)
        return np.log(np.maximum(prob, PROB_FLOOR))

    def to_json(self) -> dict:
        return {
            "format": "trace2lr.tree_ensemble/1",
            "config": asdict(self.config),
            "class_order": self.class_order,
            "encoder": self.encoder.to_json(),
            "trees": [t.to_json() for t in self.trees],
            "base_score": self.base_score.tolist(),
            "train_loss": self.train_loss,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TreeEnsembleModel":
        return cls(
            ScorerConfig(**d["config"]),
            list(d["class_order"]),
            FeatureEncoder.from_json(d["encoder"]),
            [Tree.from_json(t) for t in d["trees"]],
            np.asarray(d["base_score"], dtype=float),
            list(d.get("train_loss", [])),
        )


def _as_frame(data) -> Frame:
    if isinstance(data, LabeledDataset):
        return data.frame
    if isinstance(data, Frame):
        return data
    raise TypeError(f"expected LabeledDataset or Frame, got {type(data).__name__}")


def _weighted_logloss(F, y, w) -> float:
    return float(-np.sum(w * log_softmax(F, axis=1)[np.arange(len(y)), y]) / np.sum(w))


def fit_scorer(
    train,
    classes: Sequence[str],
    config: ScorerConfig = ScorerConfig(),
    weights: ClassWeights | None = None,
    n_jobs: int | None = None,
) -> TreeEnsembleModel:
    """Fit a scorer on the rows of ``train`` whose label is in ``classes``.

    ``weights`` defaults to inverse-frequency class weights of those rows.
    The result depends only on the data, ``classes`` order and ``config``;
    ``n_jobs`` changes speed, never the model.
    """
    classes = list(classes)
    if len(set(classes)) < 2:
        raise ScorerError("a scorer needs at least two classes")
    frame = _as_frame(train)
    keep = np.flatnonzero(np.isin(frame.labels, classes))
    if keep.size == 0:
        raise ScorerError("empty training set")
    if keep.size < len(frame):
        frame = frame.take(keep)
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for lab in frame.labels], dtype=np.int64)
    counts = np.bincount(y, minlength=len(classes))
    if (counts == 0).any():
        missing = [c for c, n in zip(classes, counts) if n == 0]
        raise ScorerError(f"no training samples for classes {missing}")
    if weights is None:
        weights = compute_class_weights(frame.labels, classes)
    w = np.array([weights[c] for c in classes])[y]

    rng = np.random.default_rng(config.seed)
    encoder = FeatureEncoder([(v.name, v.kind.value) for v in frame.schema.variables])
    X = encoder.fit_transform(frame, y, classes, rng)
    binner = Binner(config.max_bins).fit(X)
    Xb = binner.transform(X)
    n_jobs = default_threads() if n_jobs is None else max(1, n_jobs)

    if config.family == "gradient_boosted":
        trees, base, loss = _fit_boosted(X, Xb, binner, y, w, len(classes), config, n_jobs)
    else:
        trees, base, loss = _fit_bagged(Xb, binner, y, w, len(classes), config, rng), np.zeros(len(classes)), []
    return TreeEnsembleModel(config, classes, encoder, trees, base, loss)


def _fit_boosted(X, Xb, binner, y, w, K, config, n_jobs):
    n = len(y)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    prior = np.bincount(y, weights=w, minlength=K) / w.sum()
    base = np.log(prior) - np.log(prior).mean()
    F = np.tile(base, (n, 1))
    rows = np.arange(n)
    grow = dict(max_depth=config.max_depth, min_samples_leaf=config.min_samples_leaf,
                l2=config.l2_reg, scale=config.learning_rate)
    trees: list[Tree] = []
    loss = [_weighted_logloss(F, y, w)]
    hess_scale = K / (K - 1)
    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 and K > 2 else None
    try:
        for _ in range(config.rounds):
            P = softmax(F, axis=1)
            G = w[:, None] * (P - Y)
            # K/(K-1) rescales the diagonal softmax hessian; for K=2 the mirrored
            # tree then moves the margin by exactly one Newton step
            H = np.maximum(hess_scale * w[:, None] * P * (1 - P), 1e-16)
            if K == 2:
                t = grow_tree(Xb, binner, G[:, :1], H[:, :1], rows, outputs=[0], **grow)
                t = replace(t, value=np.hstack([t.value, -t.value]), outputs=np.array([0, 1]))
                round_trees = [t]
            else:
                def one(k):
                    return grow_tree(Xb, binner, G[:, k:k + 1], H[:, k:k + 1], rows, outputs=[k], **grow)
                round_trees = list(pool.map(one, range(K))) if pool else [one(k) for k in range(K)]
            for t in round_trees:
                F[:, t.outputs] += t.predict(X)
            trees.extend(round_trees)
            loss.append(_weighted_logloss(F, y, w))
    finally:
        if pool:
            pool.shutdown()
    return trees, base, loss


def _fit_bagged(Xb, binner, y, w, K, config, rng):
    n, n_feat = Xb.shape
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    bagged = config.family == "bagged_ensemble"
    n_trees = config.rounds if bagged else 1
    max_features = max(1, int(np.sqrt(n_feat))) if bagged else None
    trees = []
    for _ in range(n_trees):
        if bagged:
            mult = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            mult = np.ones(n)
        rows = np.flatnonzero(mult > 0)
        sw = (mult * w)[:, None]
        G = -sw * Y
        H = np.repeat(sw, K, axis=1)
        trees.append(grow_tree(Xb, binner, G, H, rows, max_depth=config.max_depth,
                               min_samples_leaf=config.min_samples_leaf, l2=0.0,
                               max_features=max_features, rng=rng))
    return trees


def encode_frame(model: TreeEnsembleModel, frame: Frame) -> np.ndarray:
    return model.encoder.transform(frame.columns, len(frame))


def score_frame(model: TreeEnsembleModel, data) -> np.ndarray:
    """Raw per-class scores, shape (n, K), columns in ``model.class_order``."""
    frame = _as_frame(data)
    return model.raw_scores(encode_frame(model, frame))


def score(model: TreeEnsembleModel, sample: MinuteSample) -> np.ndarray:
    columns = {}
    for name, kind in model.encoder.variables:
        v = sample.features.get(name)
        if kind == VariableKind.CATEGORICAL.value:
            col = np.empty(1, dtype=object)
            col[0] = v
        else:
            col = np.array([np.nan if v is None else float(v)])
        columns[name] = col
    return model.raw_scores(model.encoder.transform(columns, 1))[0]


def binary_margin(scores: np.ndarray) -> np.ndarray:
    """Scalar binary score s = score[H1] - score[H2] (class 0 is H1)."""
    scores = np.asarray(scores)
    return scores[..., 0] - scores[..., 1]


def predict_classes(model: TreeEnsembleModel, data) -> np.ndarray:
    return np.asarray(model.class_order, dtype=object)[np.argmax(score_frame(model, data), axis=1)]
