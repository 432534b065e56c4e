import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, strategies as st

from oracles import mode_bruteforce
from trace2lr.ingest import (
    ActivityInterval,
    FormatError,
    IngestError,
    IntervalConflictError,
    LabeledDataset,
    MinuteSample,
    Provenance,
    RawRegistration,
    RowError,
    SchemaError,
    Variable,
    VariableKind,
    VariableSchema,
    aggregate_to_minutes,
    attach_labels,
    dataset_summary,
    load_intervals,
    load_registrations,
    mode,
    read_dataset,
    write_dataset,
)

UTC = timezone.utc
P = Provenance("s01", "iPhone 7", "hand", "S1")
SCHEMA = VariableSchema((
    Variable("type", VariableKind.CATEGORICAL),
    Variable("count", VariableKind.CUMULATIVE),
    Variable("floorsAscended", VariableKind.CUMULATIVE),
    Variable("speed", VariableKind.NONCUMULATIVE),
))
HEADER = "timestamp,variable,value,subject,phone,location,session\n"


def t(h, m, s=0):
    return datetime(2022, 5, 2, h, m, s, tzinfo=UTC)


def reg(ts, var, value, prov=P):
    return RawRegistration(ts, var, value, prov)


# ---------------------------------------------------------------- loading

def test_load_registration_row(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text(HEADER + "2022-05-02T10:01:33, count, 12, s01, iPhone 7, hand, S1\n")
    [r] = load_registrations(f, SCHEMA)
    assert r.value == 12.0 and r.variable == "count"
    assert r.timestamp == t(10, 1, 33)
    assert r.provenance == P


def test_load_registration_type_mismatch(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text(HEADER + "2022-05-02T10:01:33,count,1,s01,iPhone 7,hand,S1\n"
                 "2022-05-02T10:01:34,floorsAscended,abc,s01,iPhone 7,hand,S1\n")
    with pytest.raises(RowError) as exc:
        load_registrations(f, SCHEMA)
    assert exc.value.line == 3


def test_load_registration_header_only(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text(HEADER)
    assert load_registrations(f, SCHEMA) == []


def test_load_registration_errors(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("")
    with pytest.raises(FormatError):
        load_registrations(f, SCHEMA)
    f.write_text(HEADER + "2022-05-02T10:01:33,altitude,1,s01,iPhone 7,hand,S1\n")
    with pytest.raises(SchemaError, match="altitude"):
        load_registrations(f, SCHEMA)
    f.write_text(HEADER + "yesterday,count,1,s01,iPhone 7,hand,S1\n")
    with pytest.raises(RowError, match="line 2"):
        load_registrations(f, SCHEMA)


def test_load_intervals(tmp_path):
    f = tmp_path / "i.csv"
    f.write_text("activity,start,end,subject,phone,location,session\n"
                 "walking,2022-05-02T10:00:00Z,2022-05-02T10:10:00Z,s01,iPhone 7,hand,S1\n")
    [iv] = load_intervals(f)
    assert iv.activity == "walking" and iv.end - iv.start == timedelta(minutes=10)
    f.write_text("activity,start,end,subject,phone,location,session\n"
                 "juggling,2022-05-02T10:00:00Z,2022-05-02T10:10:00Z,s01,iPhone 7,hand,S1\n")
    with pytest.raises(RowError):
        load_intervals(f)


# ---------------------------------------------------------------- aggregation

def test_aggregation_rules():
    regs = [
        reg(t(10, 1, 1), "type", "walking"), reg(t(10, 1, 2), "type", "walking"),
        reg(t(10, 1, 3), "type", "stationary"),
        reg(t(10, 1, 4), "count", 2.0), reg(t(10, 1, 5), "count", 3.0),
        reg(t(10, 1, 6), "speed", 1.0), reg(t(10, 1, 7), "speed", 3.0),
    ]
    [(key, feats)] = aggregate_to_minutes(regs, SCHEMA).items()
    assert key == (P, t(10, 1))
    assert feats == {"type": "walking", "count": 5.0, "floorsAscended": None, "speed": 2.0}


def test_registered_zero_is_not_missing():
    [feats] = aggregate_to_minutes([reg(t(10, 1, 1), "count", 0.0)], SCHEMA).values()
    assert feats["count"] == 0.0 and feats["floorsAscended"] is None


def test_aggregate_empty():
    assert aggregate_to_minutes([], SCHEMA) == {}


def test_mode_tie_break():
    assert mode(["b", "a", "b", "a"]) == "a"


@given(st.lists(st.sampled_from(["walking", "stationary", "running", "automotive"]), min_size=1, max_size=10))
def test_mode_matches_bruteforce(tokens):
    assert mode(tokens) == mode_bruteforce(tokens)


# ---------------------------------------------------------------- labelling

def _label(regs, intervals):
    return attach_labels(aggregate_to_minutes(regs, SCHEMA), intervals, regs, SCHEMA)


def test_minute_inside_interval():
    regs = [reg(t(10, 5, 10), "count", 4.0)]
    ds = _label(regs, [ActivityInterval("walking", t(10, 0), t(10, 10), P)])
    [s] = ds.samples
    assert (s.label, s.coverage_seconds, s.minute) == ("walking", 60.0, t(10, 5))


def test_split_minute():
    regs = [reg(t(10, 5, 10), "count", 4.0), reg(t(10, 5, 30), "count", 6.0),
            reg(t(10, 5, 50), "count", 1.0)]
    ivs = [ActivityInterval("walking", t(10, 0), t(10, 5, 20), P),
           ActivityInterval("running", t(10, 5, 20), t(10, 10), P)]
    ds = _label(regs, ivs)
    by_label = {s.label: s for s in ds.samples}
    assert by_label["walking"].coverage_seconds == 20.0
    assert by_label["running"].coverage_seconds == 40.0
    assert by_label["walking"].features["count"] == 4.0
    assert by_label["running"].features["count"] == 7.0
    assert all(s.minute == t(10, 5) for s in ds.samples)


def test_unlabelled_minute_dropped():
    regs = [reg(t(10, 5, 10), "count", 4.0)]
    ds = _label(regs, [ActivityInterval("walking", t(11, 0), t(11, 10), P)])
    assert ds.samples == []


def test_overlapping_intervals_rejected():
    ivs = [ActivityInterval("walking", t(10, 0), t(10, 6), P),
           ActivityInterval("running", t(10, 5), t(10, 10), P)]
    with pytest.raises(IntervalConflictError, match="walking"):
        _label([reg(t(10, 5, 10), "count", 1.0)], ivs)


def test_interval_needs_positive_length():
    with pytest.raises(IngestError):
        ActivityInterval("walking", t(10, 5), t(10, 5), P)


@st.composite
def split_minutes(draw):
    cuts = sorted(set(draw(st.lists(st.integers(1, 59), min_size=1, max_size=4))))
    edges = [-30] + cuts + [90]
    labels = ["walking", "running", "sitting", "car", "bus"]
    ivs = [ActivityInterval(labels[i], t(10, 5) + timedelta(seconds=a), t(10, 5) + timedelta(seconds=b), P)
           for i, (a, b) in enumerate(zip(edges, edges[1:]))]
    secs = draw(st.lists(st.integers(0, 59), min_size=1, max_size=15))
    regs = [reg(t(10, 5, s), "count", float(i + 1)) for i, s in enumerate(secs)]
    return regs, ivs


@given(split_minutes())
def test_split_coverage_and_no_leakage(case):
    regs, ivs = case
    ds = _label(regs, ivs)
    assert sum(s.coverage_seconds for s in ds.samples) <= 60.0
    span = {iv.activity: iv for iv in ivs}
    for s in ds.samples:
        iv = span[s.label]
        inside = [r.value for r in regs if iv.start <= r.timestamp < iv.end]
        assert inside, "a sample was emitted for a part without registrations"
        assert s.features["count"] == pytest.approx(sum(inside))
    assert sum(s.features["count"] for s in ds.samples) == pytest.approx(sum(r.value for r in regs))


@given(split_minutes(), st.randoms(use_true_random=False))
def test_aggregation_is_order_independent(tmp_path_factory, case, rnd):
    regs, ivs = case
    shuffled = regs[:]
    rnd.shuffle(shuffled)
    d = tmp_path_factory.mktemp("det")
    write_dataset(_label(regs, ivs), d / "a.csv")
    write_dataset(_label(shuffled, ivs), d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


# ---------------------------------------------------------------- datasets

def _sample(label, feats, minute=t(10, 0)):
    return MinuteSample(minute, feats, label, 60.0, P)


def test_summary_counts_and_missing():
    vocab = ("walking", "running")
    feats = {"type": "walking", "count": 0.0, "floorsAscended": None, "speed": 1.0}
    ds = LabeledDataset(SCHEMA, [_sample("walking", feats)], vocab)
    rep = dataset_summary(ds)
    assert rep.missing_rate["floorsAscended"] == 1.0
    assert rep.missing_rate["count"] == 0.0
    assert sum(rep.activity_counts.values()) == 1
    with pytest.raises(IngestError):
        dataset_summary(LabeledDataset(SCHEMA, [], vocab))


def test_summary_nineteen_activities():
    from trace2lr.ingest import ACTIVITIES
    assert len(ACTIVITIES) == 19
    feats = {"type": "x", "count": 1.0, "floorsAscended": 1.0, "speed": 1.0}
    samples = [_sample(a, feats, t(10, i)) for i, a in enumerate(ACTIVITIES)]
    rep = dataset_summary(LabeledDataset(SCHEMA, samples, ACTIVITIES))
    assert len(rep.activity_counts) == 19
    assert sum(rep.activity_counts.values()) == 19
    assert all(v == 0.0 for v in rep.missing_rate.values())


def test_dataset_validates_samples():
    with pytest.raises(IngestError):
        LabeledDataset(SCHEMA, [_sample("walking", {"type": "x"})], ("walking",))
    with pytest.raises(IngestError):
        LabeledDataset(SCHEMA, [_sample("juggling", dict.fromkeys(SCHEMA.names))], ("walking",))


def test_dataset_roundtrip(tmp_path, small_dataset):
    path = tmp_path / "ds.csv"
    write_dataset(small_dataset, path)
    back = read_dataset(path)
    assert back.schema == small_dataset.schema
    assert back.activity_vocabulary == small_dataset.activity_vocabulary
    assert [(s.minute, s.label, s.features, s.provenance) for s in back.samples] == \
        [(s.minute, s.label, s.features, s.provenance) for s in small_dataset.samples]
    write_dataset(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_schema_rejects_duplicates():
    with pytest.raises(SchemaError):
        VariableSchema((Variable("a", VariableKind.CATEGORICAL), Variable("a", VariableKind.CUMULATIVE)))
