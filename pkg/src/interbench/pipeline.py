"""Experiment runner: train baseline and defended models, attack both, aggregate.

A run is described by a JSON-compatible config dict::

    {
      "dataset": {"synthetic": {...SyntheticSpec fields}} | {"csv": {"path": ..., "label": ...}},
      "split": {"train": .5, "test": .25, "adversary": .25},
      "model": {"hidden": [32]},
      "train": {"epochs": 20, "batch_size": 64, "learning_rate": 0.003},
      "defense": {"name": "adversarial_training", "params": {"epsilon": 0.03}} | null,
      "attacks": [{"name": "pgd", "params": {...}}, ...],
      "evaluations": [{"name": "fairness"}],
      "seeds": [0, 1, 2],
      "sweep": {"param": "epsilon", "values": [0, 0.01, 0.1]},
      "output": "results/"
    }

Data routing: the adversary split feeds extraction and attribute/distribution
inference; the test split feeds evasion, poisoning evaluation and fairness;
membership challenges are drawn half from train, half from test.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from interbench import fairness, nn, registry
from interbench._rng import child_seed, substream
from interbench.data import (
    CsvSchema,
    LabeledDataset,
    SplitSpec,
    Splits,
    SyntheticSpec,
    corner_patch,
    load_csv,
    split,
    synth_gauss,
)
from interbench.privacy import dp as dpmod
from interbench.privacy import inference, membership, reconstruction
from interbench.security import evasion, ownership, poisoning

log = logging.getLogger("interbench")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``violations`` lists ``(path, message)``."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.violations))


# ---------------------------------------------------------------------------
# config schema and validation

_ITEM = {
    "type": "object",
    "required": ["name"],
    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "seeds"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "dataset": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {
                "synthetic": {"type": "object"},
                "csv": {
                    "type": "object",
                    "required": ["path"],
                    "additionalProperties": False,
                    "properties": {
                        "path": {"type": "string"},
                        "label": {"type": "string"},
                        "sensitive": {"type": ["string", "null"]},
                        "normalize": {"type": "boolean"},
                        "sensitive_as_features": {"type": "boolean"},
                        "meta": {"type": ["string", "null"]},
                    },
                },
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: registry.UNIT for k in ("train", "test", "adversary")},
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"hidden": {"type": "array", "items": registry.POS_INT}},
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": registry.NONNEG_INT,
                "batch_size": registry.POS_INT,
                "learning_rate": registry.POS,
                "optimizer": {"enum": ["sgd", "adam"]},
                "beta1": registry.UNIT,
                "beta2": registry.UNIT,
                "eps_adam": registry.POS,
            },
        },
        "defense": {"oneOf": [{"type": "null"}, _ITEM]},
        "attacks": {"type": "array", "items": _ITEM},
        "evaluations": {"type": "array", "items": _ITEM},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "sweep": {
            "type": "object",
            "required": ["param", "values"],
            "additionalProperties": False,
            "properties": {"param": {"type": "string"}, "values": {"type": "array", "minItems": 1}},
        },
        "output": {"type": "string"},
    },
}

_SYNTH_FIELDS = {f.name for f in fields(SyntheticSpec)}


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _schema_errors(instance, schema, prefix=()) -> list[tuple[str, str]]:
    validator = jsonschema.Draft202012Validator(schema)
    errs = sorted(validator.iter_errors(instance), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [(_path([*prefix, *e.absolute_path]), e.message) for e in errs]


def validate_config(cfg) -> list[tuple[str, str]]:
    """All violations of ``cfg`` as ``(json path, message)``; empty when valid.

    Checks structure, registry names, parameter ranges and split feasibility
    without loading data beyond the CSV header check or training anything.
    """
    if not isinstance(cfg, dict):
        return [("$", "config must be a JSON object")]
    out = _schema_errors(cfg, CONFIG_SCHEMA)
    if out:
        return out
    ds = cfg["dataset"]
    if "synthetic" in ds:
        unknown = sorted(set(ds["synthetic"]) - _SYNTH_FIELDS)
        for k in unknown:
            out.append((f"$.dataset.synthetic.{k}", f"unknown synthetic field {k!r}"))
        if not unknown:
            try:
                _synthetic_spec(ds["synthetic"], 0)
            except (ValueError, TypeError) as exc:
                out.append(("$.dataset.synthetic", str(exc)))
    else:
        if not Path(ds["csv"]["path"]).is_file():
            out.append(("$.dataset.csv.path", f"no such file: {ds['csv']['path']}"))
    sp = cfg.get("split", {})
    total = math.fsum(sp.get(k, v) for k, v in _DEFAULT_SPLIT.items())
    if total > 1 + 1e-12:
        out.append(("$.split", f"fractions sum to {total:g} > 1"))
    if sp.get("train", _DEFAULT_SPLIT["train"]) <= 0:
        out.append(("$.split.train", "train fraction must be positive"))
    try:
        _train_config(cfg, 0)
    except ValueError as exc:
        out.append(("$.train", str(exc)))

    def check_item(item, table, kind, where):
        name = item["name"]
        if name not in table:
            out.append((f"{where}.name", f"unknown {kind} {name!r}; registered {kind}s: "
                        f"{', '.join(sorted(table))} (see `interbench list`)"))
            return None
        entry = table[name]
        out.extend(_schema_errors(item.get("params", {}), entry.schema(), _parts(where) + ["params"]))
        return entry

    defense = cfg.get("defense")
    if defense is not None:
        entry = check_item(defense, registry.DEFENSES, "defense", "$.defense")
        sweep = cfg.get("sweep")
        if entry is not None and sweep is not None:
            if sweep["param"] not in entry.params:
                out.append(("$.sweep.param", f"{sweep['param']!r} is not a parameter of defense {entry.name!r}"))
            else:
                for i, v in enumerate(sweep["values"]):
                    params = {**defense.get("params", {}), sweep["param"]: v}
                    for p, m in _schema_errors(params, entry.schema()):
                        out.append((f"$.sweep.values[{i}]", m))
    elif cfg.get("sweep") is not None:
        out.append(("$.sweep", "a sweep needs a defense"))
    seen = set()
    for i, item in enumerate(cfg.get("attacks", [])):
        check_item(item, registry.ATTACKS, "attack", f"$.attacks[{i}]")
        if item["name"] in seen:
            out.append((f"$.attacks[{i}].name", f"duplicate attack {item['name']!r}"))
        seen.add(item["name"])
    for i, item in enumerate(cfg.get("evaluations", [])):
        check_item(item, registry.EVALUATIONS, "evaluation", f"$.evaluations[{i}]")
    return out


def _parts(path: str) -> list:
    parts = []
    for chunk in path[2:].replace("]", "").split("."):
        name, _, idx = chunk.partition("[")
        if name:
            parts.append(name)
        if idx:
            parts.append(int(idx))
    return parts


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated config; ``raw`` keeps the JSON form used for the digest."""

    raw: dict

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        problems = validate_config(cfg)
        if problems:
            raise ConfigError(problems)
        return cls(copy.deepcopy(cfg))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([("$", f"cannot read config {path}: {exc.strerror or exc}")]) from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("$", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")]) from exc
        return cls.from_dict(cfg)

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return ExperimentConfig({**self.raw, "seeds": list(seeds)})

    def digest(self) -> str:
        return config_digest(self.raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# per-seed building blocks

_DEFAULT_SPLIT = {"train": 0.5, "test": 0.25, "adversary": 0.25}
_DEFAULT_TRAIN = {"epochs": 20, "batch_size": 64, "learning_rate": 3e-3}

Trainer = Callable[[LabeledDataset, int], nn.Network]


def _synthetic_spec(params: dict, seed: int) -> SyntheticSpec:
    params = dict(params)
    params.setdefault("seed", seed)
    if params.get("grid") is not None:
        params["grid"] = tuple(params["grid"])
    return SyntheticSpec(**params)


def load_dataset(cfg: dict, seed: int) -> LabeledDataset:
    """Synthetic data is resampled per run seed unless the config pins ``seed``."""
    ds = cfg["dataset"]
    if "synthetic" in ds:
        return synth_gauss(_synthetic_spec(ds["synthetic"], seed))
    c = ds["csv"]
    schema = CsvSchema(label=c.get("label", "label"), sensitive=c.get("sensitive"),
                       normalize=c.get("normalize", True),
                       sensitive_as_features=c.get("sensitive_as_features", False),
                       meta=c.get("meta"))
    return load_csv(c["path"], schema)


def _train_config(cfg: dict, seed: int) -> nn.TrainConfig:
    return nn.TrainConfig(**{**_DEFAULT_TRAIN, **cfg.get("train", {})}, seed=seed)


@dataclass
class Context:
    """Everything one (seed, defense setting) run shares across attacks."""

    seed: int
    data: LabeledDataset
    splits: Splits
    hidden: list[int]
    train_cfg: nn.TrainConfig

    def sizes(self, d: int | None = None) -> list[int]:
        return [d or self.data.n_features, *self.hidden, self.data.n_classes]

    def template(self, seed: int) -> nn.Network:
        return nn.init_network(self.sizes(), child_seed(seed, "model/init"))


@dataclass
class Recipe:
    """How a model kind is trained; attacks that retrain (shadows, poisoning) reuse it."""

    name: str
    fit: Callable[[LabeledDataset, int], tuple[nn.Network, dict]]

    def __call__(self, dataset: LabeledDataset, seed: int) -> nn.Network:
        return self.fit(dataset, seed)[0]


def _lot_config(cfg: nn.TrainConfig, n: int) -> nn.TrainConfig:
    return cfg.replace(batch_size=min(cfg.batch_size, n))


def std_recipe(ctx: Context) -> Recipe:
    def fit(ds, seed):
        net, _ = nn.train(ctx.template(seed), ds, ctx.train_cfg.replace(seed=seed))
        return net, {}
    return Recipe("std", fit)


def defense_recipe(ctx: Context, name: str, params: dict) -> Recipe:
    p = params
    if name == "adversarial_training":
        def fit(ds, seed):
            pgd = evasion.PgdConfig(epsilon=p.get("epsilon", 0.03), step=p.get("step"),
                                    steps=p.get("steps", 10), seed=child_seed(seed, "def/pgd"))
            return evasion.adversarial_training(ctx.template(seed), ds, ctx.train_cfg.replace(seed=seed), pgd)[0], {}
    elif name == "outlier_removal":
        def fit(ds, seed):
            reduced, net = poisoning.outlier_removal(
                ds, ctx.splits.test, p.get("k", 5), p.get("fraction", 0.1),
                ctx.train_cfg.replace(seed=seed), ctx.template(seed), p.get("direction", "highest"))
            return net, {"removed": len(ds) - len(reduced)}
    elif name == "dpsgd":
        def fit(ds, seed):
            dpc = dpmod.DpConfig(clip_norm=p.get("clip_norm", 1.0), noise_multiplier=p.get("noise_multiplier", 1.0),
                                 delta=p.get("delta", 1e-5))
            net, rep = dpmod.dpsgd_train(ctx.template(seed), ds, _lot_config(ctx.train_cfg.replace(seed=seed), len(ds)), dpc)
            return net, {"dp_epsilon": rep.epsilon}
    elif name == "adversarial_debiasing":
        def fit(ds, seed):
            adv = nn.init_network([ctx.data.n_classes, p.get("adversary_hidden", 16), 2],
                                  child_seed(seed, "def/adversary"))
            dcfg = fairness.DebiasConfig(lam=p.get("lam", 1.0), train=ctx.train_cfg.replace(seed=seed),
                                         adversary_lr=p.get("adversary_lr", 3e-2),
                                         warmup_epochs=p.get("warmup_epochs", 0))
            return fairness.adversarial_debiasing_train(ctx.template(seed), adv, ds, dcfg), {}
    elif name == "watermarking":
        def fit(ds, seed):
            wm = ownership.WatermarkConfig(count=p.get("count", 50), seed=child_seed(seed, "def/watermark"),
                                           repeat=p.get("repeat", 1))
            augmented, trigger = ownership.embed_watermark(ds, wm)
            net, _ = nn.train(ctx.template(seed), augmented, ctx.train_cfg.replace(seed=seed))
            return net, {"trigger": trigger}
    elif name == "dataset_inference":
        # verification-only: the defended model is the baseline model
        return Recipe(name, std_recipe(ctx).fit)
    else:
        raise KeyError(f"unknown defense {name!r}")
    return Recipe(name, fit)


# attack runners: (ctx, model, recipe, params, state) -> {metric: value}


def _attack_pgd(ctx, model, recipe, p, state):
    cfg = evasion.PgdConfig(epsilon=p.get("epsilon", 0.03), step=p.get("step"), steps=p.get("steps", 10),
                            random_start=p.get("random_start", True), seed=child_seed(ctx.seed, "attack/pgd"))
    return {"evasion.acc_rob": evasion.robust_accuracy(model, ctx.splits.test, cfg)}


def _attack_badnets(ctx, model, recipe, p, state):
    if "indices" in p:
        indices = p["indices"]
    elif ctx.data.grid is not None:
        indices = corner_patch(ctx.data.grid, p.get("patch_size", 3))
    else:
        raise ValueError("badnets on non-grid data needs explicit trigger indices")
    trig = poisoning.TriggerSpec(indices=tuple(indices), values=p.get("value", 1.0),
                                 target_class=p.get("target_class", 0), poison_rate=p.get("poison_rate", 0.1),
                                 exclude_target=p.get("exclude_target", False))
    s = child_seed(ctx.seed, "attack/badnets")
    ptrain, triggered = poisoning.badnets_poison(ctx.splits.train, ctx.splits.test, trig, s)
    poisoned = recipe(ptrain, ctx.seed)
    return {"poisoning.acc_pois": nn.accuracy(poisoned, triggered),
            "poisoning.acc_clean": nn.accuracy(poisoned, ctx.splits.test)}


def _attack_extraction(ctx, model, recipe, p, state):
    adv = ctx.splits.adversary
    if "query_fraction" in p:
        adv = adv.subset(np.arange(max(1, round(p["query_fraction"] * len(adv)))))
    if not len(adv):
        raise ValueError("model extraction needs a non-empty adversary split")
    hidden = p.get("hidden", ctx.hidden)
    template = nn.init_network([ctx.data.n_features, *hidden, ctx.data.n_classes],
                               child_seed(ctx.seed, "attack/extraction/init"))
    tcfg = ctx.train_cfg.replace(epochs=p.get("epochs", ctx.train_cfg.epochs),
                                 learning_rate=p.get("learning_rate", ctx.train_cfg.learning_rate),
                                 batch_size=p.get("batch_size", ctx.train_cfg.batch_size),
                                 seed=child_seed(ctx.seed, "attack/extraction"))
    surrogate, _ = ownership.extract_model(model, template, adv, tcfg)
    state["surrogate"] = surrogate
    m = ownership.extraction_metrics(model, surrogate, ctx.splits.test)
    return {"unauth_model_ownership.fid": m["Fid"], "unauth_model_ownership.fid_corr": m["Fid_corr"],
            "unauth_model_ownership.surrogate_acc_te": m["Acc_te"]}


def membership_challenges(splits: Splits, count: int, seed: int) -> tuple[LabeledDataset, np.ndarray]:
    """``count // 2`` training rows followed by as many test rows, drawn without replacement."""
    half = count // 2
    if half > len(splits.train) or half > len(splits.test):
        raise ValueError(f"{count} challenges need {half} rows in both train and test splits")
    rng = substream(seed, "lira/challenges")
    ins = np.sort(rng.choice(len(splits.train), size=half, replace=False))
    outs = np.sort(rng.choice(len(splits.test), size=half, replace=False))
    challenges = splits.train.subset(ins).concat(splits.test.subset(outs))
    return challenges, np.r_[np.ones(half, bool), np.zeros(half, bool)]


def _attack_lira(ctx, model, recipe, p, state):
    challenges, truth = membership_challenges(ctx.splits, p.get("challenges", 200), ctx.seed)
    shadows = membership.ShadowConfig(count=p.get("shadows", 16), inclusion=p.get("inclusion", 0.5),
                                      trainer=recipe, seed=child_seed(ctx.seed, "attack/lira"),
                                      global_variance=p.get("global_variance", False))
    background = ctx.splits.adversary if len(ctx.splits.adversary) else None
    scores = membership.lira_scores(model, challenges, truth, shadows, p.get("mode", "online"), background)
    m = membership.roc_metrics(scores)
    return {"membership_inference.auc": m["auc"],
            "membership_inference.balanced_accuracy": m["balanced_accuracy"],
            "membership_inference.tpr_at_1pct_fpr": m["tpr_at_0.01_fpr"]}


def _attack_attribute(ctx, model, recipe, p, state):
    tcfg = nn.TrainConfig(epochs=p.get("epochs", 40), batch_size=64, learning_rate=p.get("learning_rate", 3e-3))
    cfg = inference.AttributeAttackConfig(hidden=p.get("hidden", 32), train=tcfg,
                                          include_label=p.get("include_label", False),
                                          seed=child_seed(ctx.seed, "attack/attribute"))
    m = inference.attribute_inference_attack(model, ctx.splits.adversary, ctx.splits.test, cfg)
    return {"attribute_inference.acc_att": m["Acc_att"], "attribute_inference.auc": m["AUC"]}


def _attack_distribution(ctx, model, recipe, p, state):
    seed = child_seed(ctx.seed, "attack/distribution")
    pool = ctx.splits.adversary
    size = p.get("train_size", min(500, len(pool)))
    cfg = inference.DistributionInferenceConfig(
        ratio0=p.get("ratio0", 0.1), ratio1=p.get("ratio1", 0.9),
        shadows_per_world=p.get("shadows_per_world", 16), train_size=size,
        probe_size=p.get("probe_size", 64),
        meta_train=nn.TrainConfig(epochs=p.get("meta_epochs", 200), batch_size=16, learning_rate=3e-3),
        seed=seed)
    victims, worlds = [], []
    for w, ratio in enumerate((cfg.ratio0, cfg.ratio1)):
        found = inference.world_models(ctx.splits.train, ratio, p.get("victims_per_world", 8),
                                       min(size, len(ctx.splits.train)), recipe, seed, f"distinf/victim/{w}")
        victims += found
        worlds += [w] * len(found)
    return {"distribution_inference.acc_dist":
            inference.distribution_inference_attack(pool, recipe, victims, worlds, cfg)}


def _attack_reconstruction(ctx, model, recipe, p, state):
    cfg = reconstruction.ReconConfig(steps=p.get("steps", 200), rate=p.get("rate", 0.1), init=p.get("init", "mid"),
                                     seed=child_seed(ctx.seed, "attack/reconstruction"))
    classes = p.get("classes", list(range(ctx.data.n_classes)))
    recons = {c: reconstruction.reconstruct_class(model, c, cfg) for c in classes}
    m = reconstruction.reconstruction_metrics(recons, ctx.splits.train, p.get("ssim"))
    out = {"data_reconstruction.mse_avg": m["MSE_avg"]}
    if "SSIM_avg" in m:
        out["data_reconstruction.ssim_avg"] = m["SSIM_avg"]
    return out


ATTACK_RUNNERS = {
    "pgd": _attack_pgd,
    "badnets": _attack_badnets,
    "model_extraction": _attack_extraction,
    "lira": _attack_lira,
    "attribute_inference": _attack_attribute,
    "distribution_inference": _attack_distribution,
    "reconstruction": _attack_reconstruction,
}


def _eval_fairness(ctx, model, p):
    m = fairness.model_fairness(model, ctx.splits.test, p.get("positive_class"))
    return {f"discriminatory_behavior.{k}": v for k, v in m.items()}


EVALUATION_RUNNERS = {"fairness": _eval_fairness}


def _ownership_metrics(ctx, defense, model, state, trigger):
    name, p = defense["name"], defense.get("params", {})
    out = {}
    surrogate = state.get("surrogate")
    if name == "watermarking":
        theta = p.get("threshold", 0.8)
        verdict = ownership.verify_watermark(model, trigger, theta)
        out["unauth_model_ownership.wm_trigger_acc"] = verdict.statistic
        out["unauth_model_ownership.wm_verified"] = float(verdict.stolen)
        if surrogate is not None:
            out["unauth_model_ownership.surrogate_wm_trigger_acc"] = nn.accuracy(surrogate, trigger)
    elif name == "dataset_inference":
        probe = ownership.ProbeConfig(step=p.get("step", 0.01), max_steps=p.get("max_steps", 200),
                                      alpha=p.get("alpha", 0.05))
        for prefix, net in (("", model), ("surrogate_", surrogate)):
            if net is None:
                continue
            v = ownership.dataset_inference(ctx.splits.train, ctx.splits.test, net, probe)
            out[f"unauth_model_ownership.{prefix}di_statistic"] = v.statistic
            out[f"unauth_model_ownership.{prefix}di_stolen"] = float(v.stolen)
    return out


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def evaluate_model(ctx: Context, model: nn.Network, recipe: Recipe, cfg: dict,
                   info: dict) -> tuple[dict, dict, dict]:
    """Utility metrics, attacks and evaluations for one model.

    Returns ``(metrics, errors, state)``; a failing attack becomes an error entry
    and the remaining attacks still run. ``state`` carries artefacts such as the
    extraction surrogate.
    """
    metrics = {"utility.acc_te": nn.accuracy(model, ctx.splits.test),
               "utility.acc_tr": nn.accuracy(model, ctx.splits.train)}
    if "dp_epsilon" in info:
        metrics["membership_inference.dp_epsilon"] = info["dp_epsilon"]
    errors: dict = {}
    state: dict = {}
    for item in cfg.get("attacks", []):
        name = item["name"]
        try:
            metrics.update(ATTACK_RUNNERS[name](ctx, model, recipe, item.get("params", {}), state))
        except Exception as exc:
            log.warning("attack %s failed (seed %d, %s): %s", name, ctx.seed, recipe.name, exc)
            errors[name] = _describe(exc)
    for item in cfg.get("evaluations", []):
        name = item["name"]
        try:
            metrics.update(EVALUATION_RUNNERS[name](ctx, model, item.get("params", {})))
        except Exception as exc:
            errors[name] = _describe(exc)
    return metrics, errors, state


def _with_ownership(ctx, defense, model, state, trigger, metrics, errors) -> tuple[dict, dict]:
    metrics, errors = dict(metrics), dict(errors)
    if defense is not None and defense["name"] in ("watermarking", "dataset_inference"):
        try:
            metrics.update(_ownership_metrics(ctx, defense, model, state, trigger))
        except Exception as exc:
            errors[defense["name"]] = _describe(exc)
    for key in metrics:
        if key not in registry.METRICS:
            raise KeyError(f"unregistered metric {key}")
    return metrics, errors


def _record(seed, model, metrics, errors, sweep_value, swept) -> dict:
    rec = {"seed": seed, "model": model, "metrics": metrics, "errors": errors}
    if swept:
        rec["sweep_value"] = sweep_value
    return rec


def run_seed(cfg: dict, seed: int) -> list[dict]:
    """Records for one seed: the baseline is trained and attacked once, the defended
    model once per sweep point."""
    data = load_dataset(cfg, seed)
    splits = split(data, SplitSpec(**{**_DEFAULT_SPLIT, **cfg.get("split", {})}, seed=seed))
    ctx = Context(seed, data, splits, list(cfg.get("model", {}).get("hidden", [32])), _train_config(cfg, seed))
    log.info("seed %d: %d train / %d test / %d adversary rows", seed, len(splits.train),
             len(splits.test), len(splits.adversary))
    std = std_recipe(ctx)
    base_model, base_info = std.fit(splits.train, seed)
    base = evaluate_model(ctx, base_model, std, cfg, base_info)
    defense = cfg.get("defense")
    sweep = cfg.get("sweep")
    swept = sweep is not None
    records = []
    for value in ([None] if sweep is None else sweep["values"]):
        if defense is None:
            point = None
        else:
            params = dict(defense.get("params", {}))
            if swept:
                params[sweep["param"]] = value
            point = {"name": defense["name"], "params": params}
        trigger = None
        if point is not None:
            log.info("seed %d: defense %s %s", seed, point["name"], point["params"])
            recipe = defense_recipe(ctx, point["name"], point["params"])
            model, info = recipe.fit(splits.train, seed)
            trigger = info.get("trigger")
        m, e = _with_ownership(ctx, point, base_model, base[2], trigger, base[0], base[1])
        records.append(_record(seed, "std", m, e, value, swept))
        if point is not None:
            dm, de, dstate = evaluate_model(ctx, model, recipe, cfg, info)
            dm, de = _with_ownership(ctx, point, model, dstate, trigger, dm, de)
            records.append(_record(seed, "def", dm, de, value, swept))
    return records


# ---------------------------------------------------------------------------
# aggregation and reports


def aggregate(values) -> dict:
    """``{"mean", "stderr", "n"}`` with ``stderr = s / sqrt(n)`` (Bessel); 0 when n == 1."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise ValueError("cannot aggregate an empty sample")
    mean = math.fsum(values) / n
    if n == 1:
        return {"mean": mean, "stderr": 0.0, "n": 1}
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return {"mean": mean, "stderr": math.sqrt(var) / math.sqrt(n), "n": n}


def aggregate_records(records: list[dict]) -> dict:
    """``std.<metric>``, ``def.<metric>`` and per-seed paired ``delta.<metric>`` aggregates."""
    by_model: dict[str, dict[int, dict]] = {}
    for r in records:
        by_model.setdefault(r["model"], {})[r["seed"]] = r["metrics"]
    out = {}
    for model, seeds in by_model.items():
        names = sorted({k for m in seeds.values() for k in m})
        for name in names:
            vals = [seeds[s][name] for s in sorted(seeds) if seeds[s].get(name) is not None]
            if vals:
                out[f"{model}.{name}"] = aggregate(vals)
    if "std" in by_model and "def" in by_model:
        std, dfn = by_model["std"], by_model["def"]
        names = sorted({k for m in dfn.values() for k in m})
        for name in names:
            diffs = [dfn[s][name] - std[s][name] for s in sorted(set(std) & set(dfn))
                     if dfn[s].get(name) is not None and std[s].get(name) is not None]
            if diffs:
                out[f"delta.{name}"] = aggregate(diffs)
    return out


REPORT_SCHEMA = {
    "type": "object",
    "required": ["config_digest", "created", "per_seed", "aggregate"],
    "properties": {
        "config_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "created": {"type": "string"},
        "per_seed": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "model", "metrics", "errors"],
                "properties": {
                    "seed": {"type": "integer"},
                    "model": {"enum": ["std", "def"]},
                    "metrics": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
                    "errors": {"type": "object", "additionalProperties": {"type": "string"}},
                    "sweep_value": {},
                },
            },
        },
        "aggregate": {"$ref": "#/$defs/aggregate"},
        "sweep": {
            "type": "object",
            "required": ["param", "values", "points"],
            "properties": {
                "param": {"type": "string"},
                "values": {"type": "array"},
                "points": {
                    "type": "array",
                    "items": {"type": "object", "required": ["value", "aggregate"],
                              "properties": {"aggregate": {"$ref": "#/$defs/aggregate"}}},
                },
            },
        },
    },
    "$defs": {
        "aggregate": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "stderr", "n"],
                "properties": {"mean": {"type": "number"}, "stderr": {"type": "number", "minimum": 0},
                               "n": {"type": "integer", "minimum": 1}},
            },
        },
    },
}


def report_errors(report) -> list[tuple[str, str]]:
    return _schema_errors(report, REPORT_SCHEMA)


def _created() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.replace(microsecond=0).isoformat()


def run_experiment(config: ExperimentConfig | dict, jobs: int = 1) -> dict:
    """Run every seed (in parallel when ``jobs > 1``) and assemble the report."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    cfg = config.raw
    seeds = config.seeds
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            per_seed = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    else:
        per_seed = [run_seed(cfg, s) for s in seeds]
    records = [r for recs in per_seed for r in recs]
    report = {"config_digest": config.digest(), "created": _created(), "config": cfg, "per_seed": records}
    sweep = cfg.get("sweep")
    if sweep is None:
        report["aggregate"] = aggregate_records(records)
    else:
        report["aggregate"] = {}
        points = []
        for value in sweep["values"]:
            chosen = [r for r in records if r.get("sweep_value") == value]
            points.append({"value": value, "aggregate": aggregate_records(chosen)})
        report["sweep"] = {"param": sweep["param"], "values": list(sweep["values"]), "points": points}
    return report


def canonical_report(report: dict) -> str:
    """Canonical JSON without the creation timestamp."""
    return canonical_json({k: v for k, v in report.items() if k != "created"})


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def report_csv(report: dict) -> str:
    """One row per (seed, model, metric); a sweep adds the parameter value column."""
    swept = "sweep" in report
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((["sweep_value"] if swept else []) + ["seed", "model", "metric", "value"])
    for r in report["per_seed"]:
        for name in sorted(r["metrics"]):
            lead = [_fmt(r.get("sweep_value"))] if swept else []
            w.writerow(lead + [r["seed"], r["model"], name, _fmt(r["metrics"][name])])
    return buf.getvalue()


def plot_rows(report: dict, metric: str | None = None) -> list[tuple]:
    """``(metric, x, y, yerr)`` per sweep point.

    ``metric`` selects one aggregate name, either in full (``def.utility.acc_te``)
    or without the model prefix (``utility.acc_te``) to get every model's curve.
    """
    sweep = report.get("sweep")
    if not sweep:
        return []
    names = sorted({k for p in sweep["points"] for k in p["aggregate"]})
    if metric is not None:
        names = [n for n in names if metric in (n, n.split(".", 1)[1])]
    rows = []
    for name in names:
        for p in sweep["points"]:
            a = p["aggregate"].get(name)
            if a is not None:
                rows.append((name, p["value"], a["mean"], a["stderr"]))
    return rows


def plot_csv(report: dict, metric: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "x", "y", "yerr"])
    for name, x, y, e in plot_rows(report, metric):
        w.writerow([name, _fmt(x), _fmt(y), _fmt(e)])
    return buf.getvalue()


def emit_report(report: dict, out_dir, formats=("json", "csv", "plotdata")) -> dict[str, Path]:
    """Write the report files atomically: everything goes to temp files first."""
    problems = report_errors(report)
    if problems:
        raise ValueError(f"report violates its schema: {problems[0][0]}: {problems[0][1]}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    render = {"json": ("report.json", report_json), "csv": ("report.csv", report_csv),
              "plotdata": ("plot.csv", plot_csv)}
    wanted = ["json", *[f for f in formats if f != "json"]]
    if "sweep" not in report:
        wanted = [f for f in wanted if f != "plotdata"]
    staged = []
    try:
        for fmt in wanted:
            name, fn = render[fmt]
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(fn(report))
            staged.append((tmp, out / name, fmt))
    except BaseException:
        for tmp, _, _ in staged:
            os.unlink(tmp)
        raise
    paths = {}
    for tmp, final, fmt in staged:
        os.replace(tmp, final)
        paths[fmt] = final
    return paths
