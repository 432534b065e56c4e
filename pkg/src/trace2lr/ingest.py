"""Digital-trace ingestion: raw registrations -> labelled one-minute samples.

Registrations are aggregated per wall-clock UTC minute. Categorical variables
take the mode (ties -> lexicographically smallest token), cumulative numeric
variables are summed and non-cumulative numeric variables are averaged. A
variable without any registration in a minute is MISSING (``None``), which is
kept distinct from a registered zero.

When several activity intervals overlap one minute, the minute is split and
each part aggregates only the registrations inside its own interval.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

MISSING = None

Value = Union[str, float, None]

ACTIVITIES: tuple[str, ...] = (
    "walking", "running", "cycling",
    "stairs up", "stairs down", "escalator up", "escalator down",
    "elevator up", "elevator down",
    "kicking", "throwing", "punching", "dragging",
    "bus", "car", "train", "tram",
    "sitting", "standing",
)

REGISTRATION_COLUMNS = {
    "timestamp": "timestamp",
    "variable": "variable",
    "value": "value",
    "subject": "subject",
    "phone": "phone",
    "location": "location",
    "session": "session",
}

INTERVAL_COLUMNS = {
    "activity": "activity",
    "start": "start",
    "end": "end",
    "subject": "subject",
    "phone": "phone",
    "location": "location",
    "session": "session",
}

_META_COLUMNS = ("subject", "phone", "location", "session", "minute", "label", "coverage_seconds")


class IngestError(ValueError):
    pass


class SchemaError(IngestError):
    pass


class FormatError(IngestError):
    pass


class RowError(IngestError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntervalConflictError(IngestError):
    pass


class VariableKind(str, Enum):
    CATEGORICAL = "categorical"
    CUMULATIVE = "cumulative_numeric"
    NONCUMULATIVE = "noncumulative_numeric"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: VariableKind
    source_table: str = ""


@dataclass(frozen=True)
class VariableSchema:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise SchemaError(f"duplicate variable names in schema: {dupes}")
        object.__setattr__(self, "_index", {v.name: v for v in self.variables})

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def kind(self, name: str) -> VariableKind:
        try:
            return self._index[name].kind
        except KeyError:
            raise SchemaError(f"unknown variable {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def to_json(self) -> dict:
        return {
            "variables": [
                {"name": v.name, "kind": v.kind.value, "source_table": v.source_table}
                for v in self.variables
            ]
        }

    @classmethod
    def from_json(cls, data: Mapping | Sequence) -> "VariableSchema":
        """Accepts ``{"variables": [{name, kind, source_table}, ...]}`` or a
        flat ``{name: kind}`` mapping."""
        if isinstance(data, Mapping) and "variables" in data:
            entries = data["variables"]
        elif isinstance(data, Mapping):
            entries = [{"name": k, "kind": v} for k, v in data.items()]
        else:
            entries = data
        try:
            variables = tuple(
                Variable(e["name"], VariableKind(e["kind"]), e.get("source_table", ""))
                for e in entries
            )
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"invalid schema entry: {exc}") from None
        return cls(variables)


def load_schema(path: str | Path) -> VariableSchema:
    with open(path) as fh:
        return VariableSchema.from_json(json.load(fh))


@dataclass(frozen=True, order=True)
class Provenance:
    subject_id: str
    phone_model: str
    carry_location: str
    session: str

    def __post_init__(self):
        for name in ("subject_id", "phone_model", "carry_location", "session"):
            if not getattr(self, name):
                raise IngestError(f"provenance field {name} is empty")


@dataclass(frozen=True)
class RawRegistration:
    timestamp: datetime
    variable: str
    value: str | float
    provenance: Provenance


@dataclass(frozen=True)
class ActivityInterval:
    activity: str
    start: datetime
    end: datetime
    provenance: Provenance

    def __post_init__(self):
        if not self.start < self.end:
            raise IngestError(f"interval for {self.activity!r} has start >= end")


@dataclass
class MinuteSample:
    minute: datetime
    features: dict[str, Value]
    label: str
    coverage_seconds: float
    provenance: Provenance


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp -> aware UTC datetime. Naive input is taken as UTC."""
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def truncate_minute(ts: datetime) -> datetime:
    return ts.replace(second=0, microsecond=0)


def _parse_value(raw: str, kind: VariableKind) -> str | float:
    raw = raw.strip()
    if kind is VariableKind.CATEGORICAL:
        if not raw:
            raise ValueError("empty categorical token")
        return raw
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"non-finite numeric value {raw!r}")
    return value


def _read_rows(path, columns: Mapping[str, str]):
    fh = open(path, newline="")
    reader = csv.reader(fh, skipinitialspace=True)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        fh.close()
        raise FormatError(f"{path}: missing header") from None
    missing = [col for col in columns.values() if col not in header]
    if missing:
        fh.close()
        raise FormatError(f"{path}: header lacks columns {missing}")
    pos = {key: header.index(col) for key, col in columns.items()}
    return fh, reader, pos


def load_registrations(
    path: str | Path,
    schema: VariableSchema,
    columns: Mapping[str, str] = REGISTRATION_COLUMNS,
) -> list[RawRegistration]:
    fh, reader, pos = _read_rows(path, columns)
    out = []
    with fh:
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            get = lambda key: row[pos[key]].strip()  # noqa: E731
            try:
                variable = get("variable")
            except IndexError:
                raise RowError(line, "too few fields") from None
            if variable not in schema:
                raise SchemaError(f"line {line}: unknown variable {variable!r}")
            try:
                ts = parse_timestamp(get("timestamp"))
            except ValueError as exc:
                raise RowError(line, f"bad timestamp: {exc}") from None
            try:
                value = _parse_value(get("value"), schema.kind(variable))
            except ValueError as exc:
                raise RowError(line, f"bad value for {variable!r}: {exc}") from None
            try:
                prov = Provenance(get("subject"), get("phone"), get("location"), get("session"))
            except IngestError as exc:
                raise RowError(line, str(exc)) from None
            out.append(RawRegistration(ts, variable, value, prov))
    return out


def load_intervals(
    path: str | Path,
    vocabulary: Iterable[str] | None = ACTIVITIES,
    columns: Mapping[str, str] = INTERVAL_COLUMNS,
) -> list[ActivityInterval]:
    vocab = set(vocabulary) if vocabulary is not None else None
    fh, reader, pos = _read_rows(path, columns)
    out = []
    with fh:
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            get = lambda key: row[pos[key]].strip()  # noqa: E731
            activity = get("activity")
            if vocab is not None and activity not in vocab:
                raise RowError(line, f"activity {activity!r} not in vocabulary")
            try:
                start, end = parse_timestamp(get("start")), parse_timestamp(get("end"))
                prov = Provenance(get("subject"), get("phone"), get("location"), get("session"))
                out.append(ActivityInterval(activity, start, end, prov))
            except (ValueError, IngestError) as exc:
                raise RowError(line, str(exc)) from None
    return out


def mode(tokens: Sequence[str]) -> str:
    counts = Counter(tokens)
    best = max(counts.values())
    return min(t for t, c in counts.items() if c == best)


def _aggregate(values_by_var: Mapping[str, list], schema: VariableSchema) -> dict[str, Value]:
    features: dict[str, Value] = {}
    for var in schema.variables:
        values = values_by_var.get(var.name)
        if not values:
            features[var.name] = MISSING
        elif var.kind is VariableKind.CATEGORICAL:
            features[var.name] = mode(values)
        elif var.kind is VariableKind.CUMULATIVE:
            features[var.name] = float(math.fsum(values))
        else:
            features[var.name] = float(math.fsum(values) / len(values))
    return features


def aggregate_to_minutes(
    registrations: Iterable[RawRegistration], schema: VariableSchema
) -> dict[tuple[Provenance, datetime], dict[str, Value]]:
    buckets: dict[tuple[Provenance, datetime], dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for reg in registrations:
        schema.kind(reg.variable)
        buckets[(reg.provenance, truncate_minute(reg.timestamp))][reg.variable].append(reg.value)
    return {key: _aggregate(buckets[key], schema) for key in sorted(buckets)}


def _check_overlaps(intervals: Sequence[ActivityInterval]) -> dict[Provenance, list[ActivityInterval]]:
    by_prov: dict[Provenance, list[ActivityInterval]] = defaultdict(list)
    for iv in intervals:
        by_prov[iv.provenance].append(iv)
    conflicts = []
    for prov, ivs in by_prov.items():
        ivs.sort(key=lambda iv: (iv.start, iv.end))
        for a, b in zip(ivs, ivs[1:]):
            if b.start < a.end:
                conflicts.append(f"{prov}: {a.activity} [{a.start}, {a.end}) overlaps "
                                 f"{b.activity} [{b.start}, {b.end})")
    if conflicts:
        raise IntervalConflictError("overlapping intervals:\n" + "\n".join(conflicts))
    return by_prov


_MINUTE = timedelta(minutes=1)


def attach_labels(
    minute_features: Mapping[tuple[Provenance, datetime], Mapping[str, Value]],
    intervals: Sequence[ActivityInterval],
    registrations: Sequence[RawRegistration],
    schema: VariableSchema,
    vocabulary: Iterable[str] | None = None,
) -> "LabeledDataset":
    """Label aggregated minutes with the activity intervals covering them.

    A minute wholly inside one interval keeps its aggregated features. A minute
    that is only partly covered, or covered by several intervals, is split:
    one sample per overlapping interval, re-aggregated from the registrations
    inside that interval. Unlabelled minutes, and split parts that received no
    registrations, are dropped.
    """
    by_prov = _check_overlaps(intervals)

    regs_by_minute: dict[tuple[Provenance, datetime], list[RawRegistration]] = defaultdict(list)
    for reg in registrations:
        regs_by_minute[(reg.provenance, truncate_minute(reg.timestamp))].append(reg)

    samples = []
    for (prov, minute), feats in minute_features.items():
        lo, hi = minute, minute + _MINUTE
        covering = [iv for iv in by_prov.get(prov, ()) if iv.start < hi and iv.end > lo]
        if not covering:
            continue
        if len(covering) == 1 and covering[0].start <= lo and covering[0].end >= hi:
            samples.append(MinuteSample(minute, dict(feats), covering[0].activity, 60.0, prov))
            continue
        for iv in covering:
            seg_lo, seg_hi = max(lo, iv.start), min(hi, iv.end)
            inside: dict[str, list] = defaultdict(list)
            for reg in regs_by_minute.get((prov, minute), ()):
                if seg_lo <= reg.timestamp < seg_hi:
                    inside[reg.variable].append(reg.value)
            if not inside:
                continue
            coverage = (seg_hi - seg_lo).total_seconds()
            samples.append(MinuteSample(minute, _aggregate(inside, schema), iv.activity, coverage, prov))

    samples.sort(key=lambda s: (s.provenance, s.minute))
    if vocabulary is None:
        vocabulary = sorted({iv.activity for iv in intervals})
    return LabeledDataset(schema, samples, tuple(vocabulary))


@dataclass
class Frame:
    """Columnar view of a dataset used by the scorer and the experiments.

    Numeric columns are float arrays with NaN for MISSING; categorical columns
    are object arrays with ``None`` for MISSING.
    """

    schema: VariableSchema
    columns: dict[str, np.ndarray]
    labels: np.ndarray
    subject: np.ndarray
    phone: np.ndarray
    location: np.ndarray
    session: np.ndarray
    minute: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Frame":
        idx = np.asarray(idx)
        return Frame(
            self.schema,
            {k: v[idx] for k, v in self.columns.items()},
            self.labels[idx], self.subject[idx], self.phone[idx],
            self.location[idx], self.session[idx], self.minute[idx],
        )

    def factor(self, name: str) -> np.ndarray:
        aliases = {"phone": "phone", "phone_model": "phone", "location": "location",
                   "carry_location": "location", "subject": "subject", "session": "session"}
        try:
            return getattr(self, aliases[name])
        except KeyError:
            raise ValueError(f"unknown factor {name!r}") from None

    @classmethod
    def from_samples(cls, schema: VariableSchema, samples: Sequence[MinuteSample]) -> "Frame":
        columns = {}
        for var in schema.variables:
            raw = [s.features.get(var.name) for s in samples]
            if var.kind is VariableKind.CATEGORICAL:
                col = np.empty(len(raw), dtype=object)
                col[:] = raw
            else:
                col = np.array([np.nan if v is None else float(v) for v in raw], dtype=float)
            columns[var.name] = col
        obj = lambda xs: np.array(list(xs), dtype=object)  # noqa: E731
        return cls(
            schema, columns,
            obj(s.label for s in samples),
            obj(s.provenance.subject_id for s in samples),
            obj(s.provenance.phone_model for s in samples),
            obj(s.provenance.carry_location for s in samples),
            obj(s.provenance.session for s in samples),
            obj(s.minute for s in samples),
        )


@dataclass
class LabeledDataset:
    schema: VariableSchema
    samples: list[MinuteSample]
    activity_vocabulary: tuple[str, ...] = ()
    _frame: Frame | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.activity_vocabulary:
            self.activity_vocabulary = tuple(sorted({s.label for s in self.samples}))
        vocab = set(self.activity_vocabulary)
        names = set(self.schema.names)
        for s in self.samples:
            if s.label not in vocab:
                raise IngestError(f"label {s.label!r} not in activity vocabulary")
            if set(s.features) != names:
                raise IngestError(f"sample at {s.minute} does not cover the schema variables")
            if not 0 < s.coverage_seconds <= 60:
                raise IngestError(f"coverage_seconds {s.coverage_seconds} outside (0, 60]")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def frame(self) -> Frame:
        if self._frame is None:
            self._frame = Frame.from_samples(self.schema, self.samples)
        return self._frame

    def subset(self, keep) -> "LabeledDataset":
        return LabeledDataset(self.schema, [s for s in self.samples if keep(s)], self.activity_vocabulary)


@dataclass
class SchemaReport:
    n_samples: int
    missing_rate: dict[str, float]
    activity_counts: dict[str, int]
    factor_levels: dict[str, list[str]]

    def to_json(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "missing_rate": self.missing_rate,
            "activity_counts": self.activity_counts,
            "factor_levels": self.factor_levels,
        }


def dataset_summary(dataset: LabeledDataset) -> SchemaReport:
    if not dataset.samples:
        raise IngestError("cannot summarise an empty dataset")
    n = len(dataset.samples)
    missing = {
        name: sum(s.features[name] is None for s in dataset.samples) / n
        for name in dataset.schema.names
    }
    counts = Counter(s.label for s in dataset.samples)
    activity_counts = {a: counts[a] for a in dataset.activity_vocabulary if counts[a]}
    levels = {
        "subject": sorted({s.provenance.subject_id for s in dataset.samples}),
        "phone": sorted({s.provenance.phone_model for s in dataset.samples}),
        "location": sorted({s.provenance.carry_location for s in dataset.samples}),
        "session": sorted({s.provenance.session for s in dataset.samples}),
    }
    return SchemaReport(n, missing, activity_counts, levels)


def _format_value(v: Value) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    """Canonical CSV: one row per sample, MISSING as an empty field. The
    schema is written next to it as ``<stem>.schema.json``."""
    path = Path(path)
    names = dataset.schema.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_META_COLUMNS) + names)
        for s in dataset.samples:
            p = s.provenance
            w.writerow(
                [p.subject_id, p.phone_model, p.carry_location, p.session,
                 s.minute.isoformat(), s.label, repr(float(s.coverage_seconds))]
                + [_format_value(s.features[n]) for n in names]
            )
    meta = dataset.schema.to_json()
    meta["activity_vocabulary"] = list(dataset.activity_vocabulary)
    schema_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def schema_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".schema.json")


def read_dataset(path: str | Path, schema: VariableSchema | None = None) -> LabeledDataset:
    path = Path(path)
    vocabulary: tuple[str, ...] = ()
    if schema is None:
        sidecar = schema_path(path)
        if not sidecar.exists():
            raise FormatError(f"{path}: no schema given and sidecar {sidecar} not found")
        meta = json.loads(sidecar.read_text())
        schema = VariableSchema.from_json(meta)
        vocabulary = tuple(meta.get("activity_vocabulary", ()))
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: missing header") from None
        missing = [c for c in list(_META_COLUMNS) + schema.names if c not in header]
        if missing:
            raise FormatError(f"{path}: header lacks columns {missing}")
        pos = {c: header.index(c) for c in header}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            try:
                prov = Provenance(row[pos["subject"]], row[pos["phone"]],
                                  row[pos["location"]], row[pos["session"]])
                feats: dict[str, Value] = {}
                for var in schema.variables:
                    raw = row[pos[var.name]]
                    feats[var.name] = None if raw == "" else _parse_value(raw, var.kind)
                samples.append(MinuteSample(
                    parse_timestamp(row[pos["minute"]]), feats, row[pos["label"]],
                    float(row[pos["coverage_seconds"]]), prov,
                ))
            except (ValueError, IndexError, IngestError) as exc:
                raise RowError(line, str(exc)) from None
    return LabeledDataset(schema, samples, vocabulary)
