"""
End-to-end runs of the command line.
"""

import json

import pytest

from feeder_model import FIXTURES_DIR
from main import main

THREE_BUS = str(FIXTURES_DIR / "three_bus.json")
IEEE13 = str(FIXTURES_DIR / "ieee13_synthetic.json")


def _without_timing(path):
    document = json.loads(path.read_text())
    document.pop("timing", None)
    return document


def _pipeline(root, seed=5):
    data, out = root / "data", root / "out"
    common = ["--feeder", THREE_BUS, "--seed", str(seed), "--workers", "2"]
    assert main(["synth", *common, "--output-dir", str(data), "--days", "2", "--teachers", "2"]) == 0
    assert main(["enrich", *common, "--output-dir", str(out),
                 "--pmu-dir", str(data / "pmu"), "--sm-dir", str(data / "sm")]) == 0
    assert main(["solve", *common, "--output-dir", str(out), "--moments", str(out / "moments.json"),
                 "--mode", "drcc", "--epsilon", "0.05", "--horizon", "24"]) == 0
    assert main(["validate", *common, "--output-dir", str(out), "--moments", str(out / "moments.json"),
                 "--dispatch", str(out / "dispatch.json"), "--samples", "1000", "--skip-energy"]) == 0
    return out


def test_help_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    assert "solve" in capsys.readouterr().out


def test_feeder_validate(capsys):
    assert main(["feeder", "validate", IEEE13]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True


def test_feeder_validate_reports_cycle(tmp_path, capsys, feeder_doc):
    feeder_doc["lines"].append({"from": "3", "to": "1", "r": feeder_doc["lines"][0]["r"],
                                "x": feeder_doc["lines"][0]["x"]})
    path = tmp_path / "loop.json"
    path.write_text(json.dumps(feeder_doc))
    assert main(["feeder", "validate", str(path)]) == 3
    kinds = {v["kind"] for v in json.loads(capsys.readouterr().out)["violations"]}
    assert "cycle" in kinds


def test_bad_feeder_document_exits_with_schema_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\"root\": 1,")
    assert main(["feeder", "validate", str(path)]) == 2
    assert "bad.json:1:" in capsys.readouterr().err


def test_epsilon_out_of_range(tmp_path, capsys):
    moments = tmp_path / "moments.json"
    moments.write_text(json.dumps({"entries": []}))
    code = main(["solve", "--feeder", THREE_BUS, "--moments", str(moments), "--epsilon", "1.5",
                 "--output-dir", str(tmp_path)])
    assert code == 2
    assert "epsilon" in capsys.readouterr().err


def test_missing_teachers_exit_code(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--feeder", THREE_BUS, "--output-dir", str(data), "--days", "2", "--teachers", "0"]) == 0
    code = main(["enrich", "--feeder", THREE_BUS, "--sm-dir", str(data / "sm"), "--output-dir", str(tmp_path)])
    assert code == 4
    assert "--sm-only" in capsys.readouterr().err


def test_sm_only_moments_are_low_confidence(tmp_path):
    data, out = tmp_path / "data", tmp_path / "out"
    assert main(["synth", "--feeder", THREE_BUS, "--output-dir", str(data), "--days", "2", "--teachers", "0"]) == 0
    assert main(["enrich", "--feeder", THREE_BUS, "--sm-dir", str(data / "sm"), "--output-dir", str(out),
                 "--sm-only"]) == 0
    assert json.loads((out / "moments.json").read_text())["low_confidence"] is True


def test_infeasible_dispatch_exit_code(tmp_path):
    data, out = tmp_path / "data", tmp_path / "out"
    assert main(["synth", "--feeder", THREE_BUS, "--output-dir", str(data), "--days", "2", "--teachers", "0"]) == 0
    assert main(["enrich", "--feeder", THREE_BUS, "--sm-dir", str(data / "sm"), "--output-dir", str(out),
                 "--sm-only"]) == 0
    code = main(["solve", "--feeder", THREE_BUS, "--moments", str(out / "moments.json"), "--mode", "det",
                 "--horizon", "2", "--v-min", "1.2", "--v-max", "1.21", "--output-dir", str(out)])
    assert code == 6
    assert json.loads((out / "dispatch.json").read_text())["status"] == "infeasible"


def test_full_pipeline_is_deterministic(tmp_path, capsys):
    first = _pipeline(tmp_path / "one")
    output = capsys.readouterr().out
    assert "drcc: status=optimal" in output
    assert "Monte-Carlo (gaussian, n=1000, seed=5)" in output
    assert "Oracle: max |V| discrepancy" in output

    report = json.loads((first / "report.json").read_text())
    assert report["monte_carlo"]["max_rate"] <= 0.05
    assert report["oracle"]["max_abs_voltage_discrepancy"] <= 0.01
    assert set(report["timing"]) >= {"monte_carlo_ms", "oracle_ms"}

    second = _pipeline(tmp_path / "two")
    for name in ("moments.json", "dispatch.json", "report.json"):
        assert _without_timing(first / name) == _without_timing(second / name)
    assert (first / "enriched.csv").read_text() == (second / "enriched.csv").read_text()


def test_check_command(capsys):
    assert main(["check"]) == 0
    assert "solvers" in json.loads(capsys.readouterr().out)["health"]["checks"]
