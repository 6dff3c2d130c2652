import json
import logging

import pytest

from recurtmle import cli
from recurtmle.event_data import write_csv
from recurtmle.sim.dgp import primary_spec, simulate
from recurtmle.tmle import PositivityError


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    with open(path, "w", newline="") as fh:
        write_csv(simulate(primary_spec(), 150, seed=4), fh, ["l1", "l2", "l3"])
    return path


def test_unknown_config_key_exits_1_naming_it(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 1.0, "colour": "blue"}))
    assert cli.main(["estimate", "--config", str(cfg)]) == 1
    assert "colour" in capsys.readouterr().err


def test_bad_value_type_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": "x"}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "seed" in capsys.readouterr().err


def test_estimate_writes_reports_and_difference(data_file, tmp_path, capsys):
    out = tmp_path / "new" / "dir"
    code = cli.main(["estimate", "--data", str(data_file), "--tau", "1.2", "--estimator", "unadjusted", "--out", str(out)])
    assert code == 0
    captured = capsys.readouterr()
    assert "created output directory" in captured.err and str(out) in captured.err
    rep = json.loads((out / "reports.json").read_text())["reports"]["unadjusted"]
    assert set(rep) == {"1", "0", "difference_1_minus_0"}
    assert rep["difference_1_minus_0"]["estimate"] == pytest.approx(rep["1"]["psi_hat"] - rep["0"]["psi_hat"])
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "estimate" and man["config"]["estimators"] == ["unadjusted"] and "numpy" in man["versions"]


def test_flags_override_config(data_file, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 0.5, "estimators": ["unadjusted"], "treat": [1]}))
    out = tmp_path / "o"
    assert cli.main(["estimate", "--config", str(cfg), "--data", str(data_file), "--tau", "1.0", "--out", str(out)]) == 0
    assert json.loads((out / "reports.json").read_text())["tau"] == 1.0


def test_tau_beyond_last_event_warns(data_file, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="recurtmle"):
        code = cli.main(["estimate", "--data", str(data_file), "--tau", "50", "--estimator", "unadjusted", "--treat", "1", "--out", str(tmp_path)])
    assert code == 0
    assert any("exceeds the last event time" in r.message for r in caplog.records)


def test_malformed_data_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,tstart,tstop,event,a,l1\n1,0,5,9,1,0\n")
    assert cli.main(["estimate", "--data", str(bad), "--tau", "1", "--out", str(tmp_path)]) == 1
    assert "row 2" in capsys.readouterr().err


def test_positivity_failure_exits_2(data_file, tmp_path, monkeypatch, capsys):
    def fail(*args, **kwargs):
        raise PositivityError("zero censoring survival", "17")

    monkeypatch.setattr(cli, "estimate", fail)
    code = cli.main(["estimate", "--data", str(data_file), "--tau", "1.2", "--estimator", "unadjusted", "--out", str(tmp_path)])
    assert code == 2
    assert "17" in capsys.readouterr().err


def test_replicate_is_deterministic(tmp_path):
    args = ["replicate", "--n", "50", "--reps", "2", "--seed", "3", "--mc-size", "100000", "--estimator", "unadjusted", "--estimator", "tmle_oracle_form"]
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(args + ["--out", str(out)]) == 0
        runs.append({f: (out / f).read_bytes() for f in ("replications.csv", "summary.csv", "replication.json")})
        man = json.loads((out / "manifest.json").read_text())
        man["config"].pop("out")
        runs[-1]["manifest"] = man
    assert runs[0] == runs[1]
    summary = (tmp_path / "a" / "summary.csv").read_text().splitlines()
    assert len(summary) == 3


def test_simulate_and_inspect_weights(tmp_path, capsys):
    out = tmp_path / "s"
    assert cli.main(["simulate", "--n", "120", "--seed", "5", "--out", str(out)]) == 0
    data = out / "simulated.csv"
    assert data.exists()
    assert cli.main(["inspect-weights", "--data", str(data), "--tau", "1.2", "--estimator", "unadjusted", "--treat", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "positivity.json").read_text())["reports"]["1"]
    assert rep["max_weight"] >= 1.0 and "violation" in rep


def test_missing_required_inputs(tmp_path, capsys):
    assert cli.main(["estimate", "--tau", "1", "--out", str(tmp_path)]) == 1
    assert "--data" in capsys.readouterr().err
