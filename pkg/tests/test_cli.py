import csv
import json

import pytest

from trace2lr.cli import VERBS, run_cli
from trace2lr.config import ConfigError, apply_overrides, load_config
from trace2lr.ingest import write_dataset
from trace2lr.synthetic import make_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = make_dataset(activities=("walking", "running", "sitting", "car"), n_subjects=3,
                      minutes_per_activity=8, separation=1.5, seed=0)
    write_dataset(ds, root / "data.csv")
    cfg = {
        "dataset": "data.csv",
        "output_dir": "out",
        "seed": 3,
        "scorer": {"rounds": 10, "max_depth": 3},
        "bootstrap": {"replicates": 10},
        "families": ["gradient_boosted", "single_tree"],
        "calibrators": ["logistic", "gaussian"],
        "groups": {"movement": ["walking", "running"], "stationary": ["sitting"], "transport": ["car"]},
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def _run(workspace, *argv, out="out"):
    return run_cli(list(argv) + ["--config", str(workspace / "cfg.json"), "--out", str(workspace / out)])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_pairwise_outputs(workspace, capsys):
    assert _run(workspace, "pairwise") == 0
    out = workspace / "out"
    for name in ("pairwise_cllr.csv", "pairwise_cllrmin.csv", "pairwise_long.csv", "heatmap.svg", "pairwise.json"):
        assert (out / name).is_file()
    rows = _rows(out / "pairwise_cllr.csv")
    assert rows[0][1:] == ["walking", "running", "sitting", "car"] and len(rows) == 5
    assert len(_rows(out / "pairwise_long.csv")) == 17
    assert "pairwise: 6/6" in capsys.readouterr().out


def test_pairwise_is_deterministic(workspace):
    assert _run(workspace, "pairwise", out="a") == 0
    assert _run(workspace, "pairwise", out="b") == 0
    for name in ("pairwise_cllr.csv", "pairwise_long.csv", "heatmap.svg", "pairwise.json"):
        assert (workspace / "a" / name).read_bytes() == (workspace / "b" / name).read_bytes()


def test_evaluate_outputs(workspace):
    assert _run(workspace, "evaluate", "--h1", "running", "--h2", "car") == 0
    out = workspace / "out"
    for name in ("pav.svg", "tippett.svg", "ece.svg", "cllr_report.json", "ece.csv", "validation_lrs.csv"):
        assert (out / name).is_file()
    rep = json.loads((out / "cllr_report.json").read_text())
    assert rep["cllr_min"] <= rep["cllr"] + 1e-12
    assert rep["h1"] == ["running"] and rep["h2"] == ["car"]


@pytest.mark.parametrize("verb, files", [
    ("ablation", ["ablation.csv", "ablation.json"]),
    ("sensitivity", ["sensitivity_phone.csv", "sensitivity_phone.json"]),
    ("groups", ["group_sweep.csv", "group_sweep.svg"]),
    ("timeline", ["timeline.csv", "timeline.svg"]),
    ("importance", ["importance.csv", "importance.svg"]),
])
def test_other_verbs(workspace, verb, files):
    assert _run(workspace, verb, out=verb) == 0
    for name in files:
        path = workspace / verb / name
        assert path.is_file() and path.stat().st_size > 0
        if name.endswith(".csv"):
            rows = _rows(path)
            assert len(rows) >= 2 and all(len(r) == len(rows[0]) for r in rows)


def test_ablation_table(workspace):
    assert _run(workspace, "ablation", out="abl") == 0
    rows = _rows(workspace / "abl" / "ablation.csv")
    assert [r[:2] for r in rows[1:]] == [["gradient_boosted", "logistic"], ["gradient_boosted", "gaussian"],
                                        ["single_tree", "logistic"], ["single_tree", "gaussian"]]


def test_groups_flag(workspace):
    assert _run(workspace, "groups", "--groups", "movement,transport", out="g2") == 0
    rows = _rows(workspace / "g2" / "group_sweep.csv")
    assert [r[0] for r in rows[1:]] == ["movement+transport"]
    assert _run(workspace, "groups", "--groups", "elevation", out="g3") == 1


def test_fit_writes_model_and_system(workspace):
    assert _run(workspace, "fit", "--h1", "walking", "--h2", "sitting", out="fit") == 0
    model = json.loads((workspace / "fit" / "model.json").read_text())
    system = json.loads((workspace / "fit" / "lr_system.json").read_text())
    assert model["class_order"] == ["walking", "sitting"]
    assert system["model_ref"] == "model.json"
    assert system["bounds"]["lower_log10"] <= 0 <= system["bounds"]["upper_log10"]


def test_ingest(tmp_path):
    (tmp_path / "schema.json").write_text(json.dumps({"count": "cumulative_numeric", "type": "categorical"}))
    (tmp_path / "regs.csv").write_text(
        "timestamp,variable,value,subject,phone,location,session\n"
        "2022-05-02T10:05:10Z,count,4,s01,iPhone 7,hand,S1\n"
        "2022-05-02T10:05:30Z,count,6,s01,iPhone 7,hand,S1\n"
        "2022-05-02T10:05:31Z,type,running,s01,iPhone 7,hand,S1\n"
        "2022-05-02T10:06:02Z,count,3,s01,iPhone 7,hand,S1\n")
    (tmp_path / "ivs.csv").write_text(
        "activity,start,end,subject,phone,location,session\n"
        "walking,2022-05-02T10:00:00Z,2022-05-02T10:05:20Z,s01,iPhone 7,hand,S1\n"
        "running,2022-05-02T10:05:20Z,2022-05-02T10:10:00Z,s01,iPhone 7,hand,S1\n")
    (tmp_path / "cfg.json").write_text(json.dumps({
        "dataset": "dataset.csv",
        "ingest": {"registrations": ["regs.csv"], "intervals": "ivs.csv", "schema": "schema.json"}}))
    assert run_cli(["ingest", "--config", str(tmp_path / "cfg.json")]) == 0
    rows = _rows(tmp_path / "dataset.csv")
    assert len(rows) == 4
    by = {(r[4], r[5]): r for r in rows[1:]}
    assert by[("2022-05-02T10:05:00+00:00", "walking")][-2:] == ["4.0", ""]
    assert by[("2022-05-02T10:05:00+00:00", "running")][-2:] == ["6.0", "running"]
    summary = json.loads((tmp_path / "out" / "dataset_summary.json").read_text())
    assert summary["n_samples"] == 3


def test_exit_codes(workspace, tmp_path, capsys):
    assert run_cli(["pairwise", "--config", str(tmp_path / "nope.json")]) == 1
    assert "nope.json" in capsys.readouterr().err
    assert run_cli(["frobnicate", "--config", str(workspace / "cfg.json")]) == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert run_cli(["pairwise", "--config", str(workspace / "cfg.json"), "--bogus"]) == 1
    assert _run(workspace, "evaluate") == 1                     # no hypotheses
    assert _run(workspace, "pairwise", "scorer.rounds=0") == 1   # invalid override
    assert _run(workspace, "evaluate", "--h1", "running", "--h2", "running") == 1
    assert _run(workspace, "evaluate", "--h1", "running", "--h2", "tram") == 2   # no H2 data


def test_verbs_listed():
    assert set(VERBS) == {"ingest", "fit", "evaluate", "pairwise", "ablation", "sensitivity", "groups",
                          "timeline", "importance"}


# ---------------------------------------------------------------- config

def test_overrides_and_unknown_keys(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"dataset": "d.csv", "scorer": {"rounds": 5}}))
    cfg = load_config(tmp_path / "c.json", ["scorer.rounds=7", "calibrator=kde", "bootstrap.replicates=3"])
    assert cfg.scorer_config().rounds == 7 and cfg.calibrator == "kde"
    assert cfg.bootstrap_plan().replicates == 3 and cfg.bootstrap_plan().seed == cfg.seed
    assert cfg.scorer_config("single_tree").rounds == 1
    (tmp_path / "bad.json").write_text(json.dumps({"datset": "d.csv"}))
    with pytest.raises(ConfigError, match="datset"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json", ["calibrator=isotonic"])
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals-sign"])
