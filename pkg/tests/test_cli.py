import json
import subprocess
import sys

import pytest

from interbench import pipeline
from interbench.cli import main, render_table

CONFIG = {
    "dataset": {"synthetic": {"n": 200, "d": 4, "separation": 2.0}},
    "model": {"hidden": [8]},
    "train": {"epochs": 3, "batch_size": 32, "learning_rate": 0.01},
    "attacks": [{"name": "pgd"}],
    "seeds": [0, 1, 2],
}


def write_config(tmp_path, cfg=None, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg or CONFIG))
    return p


def agg(mean, stderr=0.0, n=1):
    return {"mean": mean, "stderr": stderr, "n": n}


def report_with(aggregate, per_seed=(), **extra):
    return {"config_digest": "a" * 64, "created": "2024-01-01T00:00:00+00:00",
            "per_seed": list(per_seed), "aggregate": aggregate, **extra}


class TestRun:
    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        assert main(["run", "--config", str(missing), "--out", str(tmp_path)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_minimal(self, tmp_path):
        cfg = {**CONFIG, "attacks": [], "seeds": [0]}
        out = tmp_path / "out"
        assert main(["run", "--config", str(write_config(tmp_path, cfg)), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert pipeline.report_errors(report) == []

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        assert main(["run", "--config", str(p)]) == 1
        assert "invalid JSON" in capsys.readouterr().err

    def test_jobs_identical(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "one"), "--jobs", "1"]) == 0
        assert main(["run", "--config", str(path), "--out", str(tmp_path / "four"), "--jobs", "4"]) == 0
        a = json.loads((tmp_path / "one" / "report.json").read_text())
        b = json.loads((tmp_path / "four" / "report.json").read_text())
        assert pipeline.canonical_report(a) == pipeline.canonical_report(b)

    def test_seed_override(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", str(write_config(tmp_path)), "--out", str(out), "--seed-override", "9"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert {r["seed"] for r in report["per_seed"]} == {9}

    def test_runtime_error(self, tmp_path, capsys):
        cfg = {**CONFIG, "seeds": [0], "split": {"train": 1.0, "test": 0.0, "adversary": 0.0}}
        assert main(["run", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "x")]) == 2
        assert "run failed" in capsys.readouterr().err
        assert not (tmp_path / "x" / "report.json").exists()

    def test_unknown_flag(self, capsys):
        assert main(["run", "--config", "x", "--bogus"]) == 1
        assert main([]) == 1


class TestValidate:
    def test_unknown_attack(self, tmp_path, capsys):
        path = write_config(tmp_path, {**CONFIG, "attacks": [{"name": "nosuch"}]})
        assert main(["validate", "--config", str(path)]) == 1
        err = capsys.readouterr().err
        assert "$.attacks[0].name" in err and "registered attacks" in err

    def test_split_sum(self, tmp_path):
        path = write_config(tmp_path, {**CONFIG, "split": {"train": 0.6, "test": 0.4, "adversary": 0.2}})
        assert main(["validate", "--config", str(path)]) == 1

    def test_valid_is_silent(self, tmp_path, capsys):
        assert main(["validate", "--config", str(write_config(tmp_path))]) == 0
        assert capsys.readouterr().out == ""


class TestReport:
    def test_single_metric_row(self, tmp_path, capsys):
        p = tmp_path / "r.json"
        p.write_text(json.dumps(report_with({"std.utility.acc_te": agg(0.91, 0.01, 3)})))
        assert main(["report", "--in", str(p)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out == ["std.utility.acc_te  0.9100 ± 0.0100"]

    def test_null_metric_dash(self):
        recs = [{"seed": 0, "model": "std", "metrics": {"unauth_model_ownership.fid_corr": None}, "errors": {}}]
        text = render_table(report_with({}, recs))
        assert text.split() == ["std.unauth_model_ownership.fid_corr", "-"]

    def test_plotdata_rows(self, tmp_path, capsys):
        points = [{"value": v, "aggregate": {"def.utility.acc_te": agg(0.9 - v)}} for v in (0, 0.1, 0.2, 0.3)]
        p = tmp_path / "r.json"
        p.write_text(json.dumps(report_with({}, sweep={"param": "fraction", "values": [0, 0.1, 0.2, 0.3],
                                                       "points": points})))
        assert main(["report", "--in", str(p), "--format", "plotdata"]) == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0] == "metric,x,y,yerr" and len(lines) == 5

    def test_plotdata_metric_filter(self, tmp_path, capsys):
        points = [{"value": v, "aggregate": {"def.utility.acc_te": agg(0.9), "std.utility.acc_te": agg(0.8),
                                             "def.evasion.acc_rob": agg(0.5)}} for v in (0, 1)]
        p = tmp_path / "r.json"
        p.write_text(json.dumps(report_with({}, sweep={"param": "epsilon", "values": [0, 1], "points": points})))
        assert main(["report", "--in", str(p), "--format", "plotdata", "--metric", "utility.acc_te"]) == 0
        rows = capsys.readouterr().out.strip().split("\n")[1:]
        assert sorted({r.split(",")[0] for r in rows}) == ["def.utility.acc_te", "std.utility.acc_te"]
        assert main(["report", "--in", str(p), "--format", "plotdata", "--metric", "def.evasion.acc_rob"]) == 0
        assert len(capsys.readouterr().out.strip().split("\n")) == 3

    def test_plotdata_without_sweep(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text(json.dumps(report_with({})))
        assert main(["report", "--in", str(p), "--format", "plotdata"]) == 1

    def test_schema_violation(self, tmp_path, capsys):
        p = tmp_path / "r.json"
        p.write_text(json.dumps({"per_seed": []}))
        assert main(["report", "--in", str(p)]) == 1
        assert "config_digest" in capsys.readouterr().err

    def test_csv_format(self, tmp_path, capsys):
        recs = [{"seed": 0, "model": "std", "metrics": {"utility.acc_te": 0.5}, "errors": {}}]
        p = tmp_path / "r.json"
        p.write_text(json.dumps(report_with({}, recs)))
        assert main(["report", "--in", str(p), "--format", "csv"]) == 0
        assert capsys.readouterr().out == "seed,model,metric,value\n0,std,utility.acc_te,0.5\n"


class TestList:
    def test_contents(self, capsys):
        assert main(["list"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert "evasion.attacks.pgd" in lines
        assert "unauth_model_ownership.metrics.fid_corr" in lines
        assert lines == sorted(lines)

    def test_stable(self, capsys):
        main(["list"])
        first = capsys.readouterr().out
        main(["list"])
        assert capsys.readouterr().out == first


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "interbench", "list"], capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "evasion.attacks.pgd" in res.stdout
