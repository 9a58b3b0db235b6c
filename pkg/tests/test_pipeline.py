import copy
import json
import math
import statistics

import numpy as np
import pytest

from interbench import pipeline, registry
from interbench.pipeline import (ConfigError, ExperimentConfig, aggregate, aggregate_records,
                                 canonical_report, emit_report, membership_challenges,
                                 report_csv, report_errors, run_experiment, validate_config)

BASE = {
    "dataset": {"synthetic": {"n": 200, "d": 4, "separation": 2.0, "correlation": 0.5}},
    "split": {"train": 0.5, "test": 0.25, "adversary": 0.25},
    "model": {"hidden": [8]},
    "train": {"epochs": 3, "batch_size": 32, "learning_rate": 0.01},
    "seeds": [0, 1],
}


def cfg(**changes):
    out = copy.deepcopy(BASE)
    out.update(changes)
    return out


class TestValidation:
    def test_valid(self):
        assert validate_config(cfg(attacks=[{"name": "pgd", "params": {"epsilon": 0.1}}])) == []

    def test_unknown_attack_cites_registry(self):
        problems = validate_config(cfg(attacks=[{"name": "nosuch"}]))
        assert problems[0][0] == "$.attacks[0].name"
        assert "registered attacks" in problems[0][1] and "pgd" in problems[0][1]

    def test_split_sum(self):
        problems = validate_config(cfg(split={"train": 0.6, "test": 0.4, "adversary": 0.2}))
        assert problems == [("$.split", "fractions sum to 1.2 > 1")]

    def test_param_range_path(self):
        problems = validate_config(cfg(defense={"name": "dpsgd", "params": {"clip_norm": -1}}))
        assert problems[0][0] == "$.defense.params.clip_norm"

    def test_unknown_param(self):
        problems = validate_config(cfg(attacks=[{"name": "pgd", "params": {"eps": 0.1}}]))
        assert problems[0][0] == "$.attacks[0].params"

    def test_sweep_checks(self):
        bad = cfg(defense={"name": "adversarial_training"}, sweep={"param": "fraction", "values": [0.1]})
        assert validate_config(bad)[0][0] == "$.sweep.param"
        bad = cfg(defense={"name": "adversarial_training"}, sweep={"param": "epsilon", "values": [0.1, -1]})
        assert validate_config(bad)[0][0] == "$.sweep.values[1]"
        assert validate_config(cfg(sweep={"param": "epsilon", "values": [0]}))[0][0] == "$.sweep"

    def test_structure(self):
        assert validate_config([]) == [("$", "config must be a JSON object")]
        assert validate_config({"dataset": {"synthetic": {}}})[0][0] == "$"
        assert validate_config(cfg(seeds=[]))[0][0] == "$.seeds"

    def test_synthetic_fields(self):
        problems = validate_config(cfg(dataset={"synthetic": {"n": 10, "colour": 1}}))
        assert problems == [("$.dataset.synthetic.colour", "unknown synthetic field 'colour'")]
        assert validate_config(cfg(dataset={"synthetic": {"ratio": 2}}))[0][0] == "$.dataset.synthetic"

    def test_missing_csv(self, tmp_path):
        problems = validate_config(cfg(dataset={"csv": {"path": str(tmp_path / "nope.csv")}}))
        assert problems[0][0] == "$.dataset.csv.path"

    def test_duplicate_attack(self):
        problems = validate_config(cfg(attacks=[{"name": "pgd"}, {"name": "pgd"}]))
        assert problems[0][0] == "$.attacks[1].name"

    def test_from_dict_raises(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(cfg(attacks=[{"name": "nosuch"}]))
        assert err.value.violations

    def test_digest_is_key_order_free(self):
        a = ExperimentConfig.from_dict(cfg())
        b = ExperimentConfig.from_dict(dict(reversed(list(cfg().items()))))
        assert a.digest() == b.digest()


class TestAggregate:
    def test_constant(self):
        assert aggregate([5, 5, 5]) == {"mean": 5.0, "stderr": 0.0, "n": 3}

    def test_two_values(self):
        assert aggregate([1, 3]) == {"mean": 2.0, "stderr": 1.0, "n": 2}

    def test_single(self):
        assert aggregate([4.2]) == {"mean": 4.2, "stderr": 0.0, "n": 1}

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_two_pass_oracle(self):
        vals = np.random.default_rng(0).standard_normal(100) * 3 + 7
        mean = sum(vals) / 100
        var = sum((v - mean) ** 2 for v in vals) / 99
        got = aggregate(vals)
        assert abs(got["mean"] - mean) <= 1e-12
        assert abs(got["stderr"] - math.sqrt(var / 100)) <= 1e-12
        assert got["stderr"] == pytest.approx(statistics.stdev(vals) / 10, abs=1e-12)

    def test_paired_delta(self):
        recs = [{"seed": 0, "model": "std", "metrics": {"a": 1.0}},
                {"seed": 0, "model": "def", "metrics": {"a": 2.0}},
                {"seed": 1, "model": "std", "metrics": {"a": 1.0}},
                {"seed": 1, "model": "def", "metrics": {"a": None}},
                {"seed": 2, "model": "def", "metrics": {"a": 5.0}}]
        agg = aggregate_records(recs)
        assert agg["delta.a"] == {"mean": 1.0, "stderr": 0.0, "n": 1}
        assert agg["def.a"]["n"] == 2 and agg["std.a"]["n"] == 2


class TestRun:
    def test_no_attacks(self):
        report = run_experiment(cfg(seeds=[7]))
        assert len(report["per_seed"]) == 1
        rec = report["per_seed"][0]
        assert rec["seed"] == 7 and rec["model"] == "std"
        assert set(rec["metrics"]) == {"utility.acc_te", "utility.acc_tr"}
        assert set(report["aggregate"]) == {"std.utility.acc_te", "std.utility.acc_tr"}
        assert report_errors(report) == []

    def test_deterministic(self):
        c = cfg(attacks=[{"name": "pgd"}, {"name": "model_extraction"}])
        assert canonical_report(run_experiment(c)) == canonical_report(run_experiment(c))

    def test_noop_defense(self):
        c = cfg(defense={"name": "adversarial_training", "params": {"epsilon": 0.0}},
                attacks=[{"name": "pgd", "params": {"epsilon": 0.1}}, {"name": "model_extraction"},
                         {"name": "attribute_inference", "params": {"epochs": 5}},
                         {"name": "reconstruction", "params": {"steps": 10}}],
                evaluations=[{"name": "fairness"}])
        report = run_experiment(c)
        by = {(r["seed"], r["model"]): r["metrics"] for r in report["per_seed"]}
        for seed in (0, 1):
            std, dfn = by[(seed, "std")], by[(seed, "def")]
            assert std.keys() == dfn.keys()
            for k in std:
                if std[k] is None:
                    assert dfn[k] is None
                else:
                    assert abs(std[k] - dfn[k]) <= 1e-9, k
        for k, v in report["aggregate"].items():
            if k.startswith("delta."):
                assert abs(v["mean"]) <= 1e-9

    def test_seed_permutation(self):
        a = run_experiment(cfg(seeds=[0, 1, 2], attacks=[{"name": "pgd"}]))
        b = run_experiment(cfg(seeds=[2, 0, 1], attacks=[{"name": "pgd"}]))
        key = lambda r: (r["seed"], r["model"])
        assert sorted(a["per_seed"], key=key) == sorted(b["per_seed"], key=key)
        for k in a["aggregate"]:
            for f in ("mean", "stderr"):
                assert abs(a["aggregate"][k][f] - b["aggregate"][k][f]) <= 1e-12

    def test_failing_attack_isolated(self):
        c = cfg(seeds=[0], attacks=[{"name": "badnets"}, {"name": "pgd"},
                                    {"name": "reconstruction", "params": {"steps": 5, "ssim": True}}])
        rec = run_experiment(c)["per_seed"][0]
        assert "badnets" in rec["errors"] and "reconstruction" in rec["errors"]
        assert "evasion.acc_rob" in rec["metrics"]

    def test_metric_names_registered(self):
        c = cfg(seeds=[0], defense={"name": "dpsgd", "params": {"noise_multiplier": 0.5}},
                attacks=[{"name": "pgd"}, {"name": "model_extraction"},
                         {"name": "lira", "params": {"shadows": 4, "challenges": 20}},
                         {"name": "attribute_inference", "params": {"epochs": 5}},
                         {"name": "reconstruction", "params": {"steps": 5}}],
                evaluations=[{"name": "fairness"}])
        report = run_experiment(c)
        names = {k for r in report["per_seed"] for k in r["metrics"]}
        assert names <= set(registry.METRICS)
        assert "membership_inference.dp_epsilon" in names and "membership_inference.auc" in names
        for r in report["per_seed"]:
            assert r["errors"] == {}

    def test_sweep_shares_baseline(self):
        c = cfg(defense={"name": "outlier_removal", "params": {"k": 3}},
                sweep={"param": "fraction", "values": [0.0, 0.2]})
        report = run_experiment(c)
        assert report["aggregate"] == {} and len(report["sweep"]["points"]) == 2
        assert len(report["per_seed"]) == 2 * 2 * 2
        std = [r["metrics"] for r in report["per_seed"] if r["model"] == "std" and r["seed"] == 0]
        assert std[0] == std[1]
        zero = report["sweep"]["points"][0]["aggregate"]
        assert zero["delta.utility.acc_te"]["mean"] == 0.0

    def test_ownership_defenses(self):
        wm = run_experiment(cfg(seeds=[0], defense={"name": "watermarking", "params": {"count": 10}},
                                attacks=[{"name": "model_extraction"}]))
        d = next(r for r in wm["per_seed"] if r["model"] == "def")["metrics"]
        assert {"unauth_model_ownership.wm_trigger_acc", "unauth_model_ownership.wm_verified",
                "unauth_model_ownership.surrogate_wm_trigger_acc"} <= set(d)
        di = run_experiment(cfg(seeds=[0], defense={"name": "dataset_inference", "params": {"max_steps": 20}}))
        d = next(r for r in di["per_seed"] if r["model"] == "def")["metrics"]
        assert "unauth_model_ownership.di_stolen" in d

    def test_debiasing_and_badnets_on_grid(self):
        c = cfg(seeds=[0], dataset={"synthetic": {"n": 200, "d": 64, "grid": [8, 8], "correlation": 0.5}},
                defense={"name": "adversarial_debiasing"},
                attacks=[{"name": "badnets", "params": {"patch_size": 2}},
                         {"name": "reconstruction", "params": {"steps": 5}}],
                evaluations=[{"name": "fairness"}])
        report = run_experiment(c)
        for r in report["per_seed"]:
            assert r["errors"] == {}
            assert "poisoning.acc_pois" in r["metrics"] and "data_reconstruction.ssim_avg" in r["metrics"]

    def test_csv_dataset(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = ["a,b,sens_sex,label"] + [f"{rng.random()},{rng.random()},{i % 2},{(i // 2) % 2}" for i in range(80)]
        path = tmp_path / "t.csv"
        path.write_text("\n".join(rows) + "\n")
        report = run_experiment(cfg(seeds=[0], dataset={"csv": {"path": str(path)}},
                                    evaluations=[{"name": "fairness"}]))
        assert report["per_seed"][0]["errors"] == {}

    def test_challenges_balanced(self):
        data = pipeline.load_dataset(BASE, 0)
        splits = pipeline.split(data, pipeline.SplitSpec(0.5, 0.25, 0.25, seed=0))
        ch, truth = membership_challenges(splits, 20, 0)
        assert len(ch) == 20 and truth.sum() == 10
        with pytest.raises(ValueError):
            membership_challenges(splits, 200, 0)


class TestEmit:
    def test_empty_aggregate(self, tmp_path):
        report = {"config_digest": "0" * 64, "created": "2024-01-01T00:00:00+00:00", "per_seed": [], "aggregate": {}}
        paths = emit_report(report, tmp_path)
        loaded = json.loads(paths["json"].read_text())
        assert loaded["aggregate"] == {} and report_errors(loaded) == []
        assert "plotdata" not in paths

    def test_csv_rows(self):
        metrics = {"a": 1.0, "b": 2.0, "c": None}
        recs = [{"seed": s, "model": m, "metrics": metrics, "errors": {}} for s in (0, 1) for m in ("std", "def")]
        text = report_csv({"per_seed": recs})
        lines = text.strip().split("\n")
        assert lines[0] == "seed,model,metric,value" and len(lines) == 13
        assert lines[3] == "0,std,c,"

    def test_reemission_identical(self, tmp_path):
        report = run_experiment(cfg(seeds=[0]))
        a = emit_report(report, tmp_path / "a")
        b = emit_report(report, tmp_path / "b")
        for fmt in a:
            assert a[fmt].read_bytes() == b[fmt].read_bytes()

    def test_schema_violation_writes_nothing(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report({"per_seed": []}, tmp_path / "x")
        assert not (tmp_path / "x").exists()

    def test_no_temp_files_left(self, tmp_path):
        emit_report(run_experiment(cfg(seeds=[0])), tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["report.csv", "report.json"]

    def test_created_from_environment(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        assert run_experiment(cfg(seeds=[0]))["created"] == "1970-01-01T00:00:00+00:00"


def test_registry_listing():
    lines = registry.listing()
    assert lines == sorted(lines) and len(lines) == len(set(lines))
    assert "evasion.attacks.pgd" in lines and "unauth_model_ownership.metrics.fid_corr" in lines
    assert set(pipeline.ATTACK_RUNNERS) == set(registry.ATTACKS)
    assert set(pipeline.EVALUATION_RUNNERS) == set(registry.EVALUATIONS)
    with pytest.raises(KeyError):
        registry.metric_name("evasion", "nope")
