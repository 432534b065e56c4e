import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_dataset():
    from trace2lr.synthetic import make_dataset
    return make_dataset(activities=("walking", "running", "sitting", "car"), n_subjects=4,
                        minutes_per_activity=8, separation=1.5, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_gaussian(n_per_class: int, seed: int = 0, mu: float = 1.0):
    """Scores ~ N(+mu, 1) under H1 and N(-mu, 1) under H2. The true natural-log
    LR of a score s is 2 * mu * s."""
    r = np.random.default_rng(seed)
    s = np.r_[r.normal(mu, 1.0, n_per_class), r.normal(-mu, 1.0, n_per_class)]
    y = np.r_[np.ones(n_per_class, int), np.zeros(n_per_class, int)]
    return s, y


def table_dataset(columns: dict, labels, phones=None):
    """LabeledDataset from {name: (kind, values)}; None marks MISSING."""
    from datetime import datetime, timedelta, timezone
    from trace2lr.ingest import (LabeledDataset, MinuteSample, Provenance, Variable,
                                 VariableKind, VariableSchema)
    schema = VariableSchema(tuple(Variable(n, VariableKind(k)) for n, (k, _) in columns.items()))
    t0 = datetime(2022, 5, 2, 9, 0, tzinfo=timezone.utc)
    samples = []
    for i, lab in enumerate(labels):
        phone = "iPhone 7" if phones is None else phones[i]
        prov = Provenance(f"s{i % 4:02d}", phone, "hand", "S1")
        feats = {n: vals[i] for n, (_, vals) in columns.items()}
        samples.append(MinuteSample(t0 + timedelta(minutes=i), feats, lab, 60.0, prov))
    return LabeledDataset(schema, samples)
