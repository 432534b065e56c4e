"""JSON experiment configuration with dotted ``key=value`` overrides."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .calibration import CALIBRATORS
from .experiments import ActivityGrouping, BootstrapPlan
from .scorer import FAMILIES, ScorerConfig


class ConfigError(ValueError):
    pass


@dataclass
class IngestSettings:
    registrations: list[str] = field(default_factory=list)
    intervals: str = ""
    schema: str = ""
    vocabulary: list[str] | None = None


@dataclass
class BootstrapSettings:
    replicates: int = 1000
    seed: int | None = None     # defaults to the master seed


@dataclass
class ExperimentConfig:
    dataset: str = ""
    output_dir: str = "out"
    seed: int = 0
    activities: list[str] | None = None
    groups: dict[str, list[str]] | None = None
    scorer: dict[str, Any] = field(default_factory=dict)
    calibrator: str = "logistic"
    folds: int | None = None
    fold_aggregation: str = "pooled"
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)
    families: list[str] = field(default_factory=lambda: list(FAMILIES))
    calibrators: list[str] = field(default_factory=lambda: ["logistic", "kde", "gaussian"])
    h1: list[str] | None = None
    h2: list[str] | None = None
    factor: str = "phone"
    timeline: list[list] | None = None    # [[group or activity, minutes], ...]
    ingest: IngestSettings | None = None
    base_dir: str = "."                   # relative paths resolve against the config file

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.calibrator not in CALIBRATORS:
            raise ConfigError(f"unknown calibrator {self.calibrator!r}; choose from {sorted(CALIBRATORS)}")
        for c in self.calibrators:
            if c not in CALIBRATORS:
                raise ConfigError(f"unknown calibrator {c!r} in calibrators")
        for f in self.families:
            if f not in FAMILIES:
                raise ConfigError(f"unknown scorer family {f!r}; choose from {FAMILIES}")
        if self.factor not in ("phone", "location"):
            raise ConfigError("factor must be 'phone' or 'location'")
        if self.fold_aggregation not in ("pooled", "per_fold"):
            raise ConfigError("fold_aggregation must be 'pooled' or 'per_fold'")
        if self.folds is not None and self.folds < 1:
            raise ConfigError("folds must be positive")
        if self.bootstrap.replicates < 1:
            raise ConfigError("bootstrap.replicates must be >= 1")
        self.scorer_config()
        if self.groups is not None:
            try:
                ActivityGrouping({k: tuple(v) for k, v in self.groups.items()})
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    @property
    def out(self) -> Path:
        return self.path(self.output_dir)

    def scorer_config(self, family: str | None = None) -> ScorerConfig:
        """Scorer settings for ``family``. The ``scorer`` section applies to
        its own family; other families get their presets."""
        opts = dict(self.scorer)
        own = opts.pop("family", "gradient_boosted")
        fam = family or own
        if fam != own:
            opts = {}
        opts.setdefault("seed", self.seed)
        try:
            return ScorerConfig.for_family(fam, **opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scorer settings: {exc}") from None

    def bootstrap_plan(self) -> BootstrapPlan:
        seed = self.seed if self.bootstrap.seed is None else self.bootstrap.seed
        return BootstrapPlan(self.bootstrap.replicates, seed)

    def grouping(self) -> ActivityGrouping:
        if self.groups is None:
            return ActivityGrouping.expert()
        return ActivityGrouping({k: tuple(v) for k, v in self.groups.items()})

    def to_json(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = {"bootstrap": BootstrapSettings, "ingest": IngestSettings}.get(name) if cls is ExperimentConfig else None
        kwargs[name] = _build(sub, value, name) if sub and value is not None else value
    return cls(**kwargs)


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {k!r} is not an object")
        node[keys[-1]] = value
    return data


def load_config(path: str | Path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    data = apply_overrides(data, overrides)
    data.setdefault("base_dir", str(path.parent))
    try:
        return _build(ExperimentConfig, data, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def to_plain(obj):
    """JSON-ready copy: dataclasses to dicts, non-finite floats to None."""
    if is_dataclass(obj):
        return to_plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
