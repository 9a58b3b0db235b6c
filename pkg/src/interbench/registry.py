"""Inventory of risks, attacks, defenses, evaluations and metrics.

Every name the pipeline accepts or emits is listed here. Parameter schemas are
JSON Schema fragments used by config validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

POS = {"type": "number", "exclusiveMinimum": 0}
NONNEG = {"type": "number", "minimum": 0}
UNIT = {"type": "number", "minimum": 0, "maximum": 1}
POS_INT = {"type": "integer", "minimum": 1}
NONNEG_INT = {"type": "integer", "minimum": 0}
BOOL = {"type": "boolean"}

RISKS = (
    "evasion",
    "poisoning",
    "unauth_model_ownership",
    "membership_inference",
    "attribute_inference",
    "distribution_inference",
    "data_reconstruction",
    "discriminatory_behavior",
    "utility",
)


@dataclass(frozen=True)
class Entry:
    risk: str
    kind: str  # attacks | defenses | evaluations | metrics
    name: str
    description: str
    params: dict = field(default_factory=dict)

    @property
    def path(self) -> str:
        return f"{self.risk}.{self.kind}.{self.name}"

    def schema(self) -> dict:
        return {"type": "object", "properties": self.params, "additionalProperties": False}


ATTACKS = {e.name: e for e in (
    Entry("evasion", "attacks", "pgd", "L-inf projected gradient descent on the test split",
          {"epsilon": NONNEG, "step": POS, "steps": POS_INT, "random_start": BOOL}),
    Entry("poisoning", "attacks", "badnets", "patch/feature trigger poisoning; the model's recipe retrains on poisoned data",
          {"poison_rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
           "target_class": NONNEG_INT, "indices": {"type": "array", "items": NONNEG_INT, "minItems": 1},
           "patch_size": POS_INT, "value": UNIT, "exclude_target": BOOL}),
    Entry("unauth_model_ownership", "attacks", "model_extraction", "logit-MSE surrogate trained on the adversary split",
          {"epochs": POS_INT, "learning_rate": POS, "batch_size": POS_INT, "hidden": {"type": "array", "items": POS_INT},
           "query_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}),
    Entry("membership_inference", "attacks", "lira", "likelihood-ratio attack with shadow models",
          {"shadows": {"type": "integer", "minimum": 2}, "challenges": {"type": "integer", "minimum": 2},
           "mode": {"enum": ["online", "offline"]}, "inclusion": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
           "global_variance": BOOL}),
    Entry("attribute_inference", "attacks", "attribute_inference", "MLP on output probabilities predicting the sensitive attribute",
          {"hidden": POS_INT, "epochs": POS_INT, "learning_rate": POS, "include_label": BOOL}),
    Entry("distribution_inference", "attacks", "distribution_inference", "meta-classifier over shadow fingerprints of two property ratios",
          {"ratio0": UNIT, "ratio1": UNIT, "shadows_per_world": {"type": "integer", "minimum": 2},
           "victims_per_world": POS_INT, "train_size": POS_INT, "probe_size": POS_INT, "meta_epochs": POS_INT}),
    Entry("data_reconstruction", "attacks", "reconstruction", "input-space descent towards each class",
          {"steps": NONNEG_INT, "rate": POS, "init": {"enum": ["mid", "uniform"]}, "ssim": BOOL,
           "classes": {"type": "array", "items": NONNEG_INT, "minItems": 1}}),
)}

DEFENSES = {e.name: e for e in (
    Entry("evasion", "defenses", "adversarial_training", "train on PGD perturbations of every batch",
          {"epsilon": NONNEG, "step": POS, "steps": POS_INT}),
    Entry("poisoning", "defenses", "outlier_removal", "drop records by KNN-Shapley value, then retrain",
          {"fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}, "k": POS_INT,
           "direction": {"enum": ["highest", "lowest"]}}),
    Entry("unauth_model_ownership", "defenses", "watermarking", "memorised random trigger set",
          {"count": POS_INT, "repeat": POS_INT, "threshold": UNIT}),
    Entry("unauth_model_ownership", "defenses", "dataset_inference", "boundary-distance fingerprint test (verification only)",
          {"step": POS, "max_steps": POS_INT, "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    Entry("membership_inference", "defenses", "dpsgd", "per-sample clipping and Gaussian noise",
          {"clip_norm": POS, "noise_multiplier": NONNEG, "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    Entry("discriminatory_behavior", "defenses", "adversarial_debiasing", "predictor trained against a sensitive-attribute adversary",
          {"lam": NONNEG, "adversary_hidden": POS_INT, "adversary_lr": POS, "warmup_epochs": NONNEG_INT}),
)}

EVALUATIONS = {e.name: e for e in (
    Entry("discriminatory_behavior", "evaluations", "fairness", "group parity metrics on the test split",
          {"positive_class": NONNEG_INT}),
)}

_METRIC_ENTRIES = (
    Entry("utility", "metrics", "acc_te", "test accuracy"),
    Entry("utility", "metrics", "acc_tr", "training accuracy"),
    Entry("evasion", "metrics", "acc_rob", "accuracy on PGD examples"),
    Entry("poisoning", "metrics", "acc_pois", "accuracy of the poisoned model on the fully triggered test split"),
    Entry("poisoning", "metrics", "acc_clean", "clean test accuracy of the poisoned model"),
    Entry("unauth_model_ownership", "metrics", "fid", "surrogate-target agreement on the test split"),
    Entry("unauth_model_ownership", "metrics", "fid_corr", "surrogate accuracy among agreements"),
    Entry("unauth_model_ownership", "metrics", "surrogate_acc_te", "surrogate test accuracy"),
    Entry("unauth_model_ownership", "metrics", "wm_trigger_acc", "trigger-set accuracy of the model"),
    Entry("unauth_model_ownership", "metrics", "wm_verified", "1 when the model passes watermark verification"),
    Entry("unauth_model_ownership", "metrics", "surrogate_wm_trigger_acc", "trigger-set accuracy of the extraction surrogate"),
    Entry("unauth_model_ownership", "metrics", "di_statistic", "Welch t of private vs public boundary distances"),
    Entry("unauth_model_ownership", "metrics", "di_stolen", "1 when dataset inference flags the model"),
    Entry("unauth_model_ownership", "metrics", "surrogate_di_statistic", "dataset-inference t statistic on the surrogate"),
    Entry("unauth_model_ownership", "metrics", "surrogate_di_stolen", "1 when dataset inference flags the surrogate"),
    Entry("membership_inference", "metrics", "auc", "LiRA ROC AUC"),
    Entry("membership_inference", "metrics", "balanced_accuracy", "best balanced accuracy over thresholds"),
    Entry("membership_inference", "metrics", "tpr_at_1pct_fpr", "TPR at 1% FPR"),
    Entry("membership_inference", "metrics", "dp_epsilon", "RDP accountant epsilon of the training run"),
    Entry("attribute_inference", "metrics", "acc_att", "balanced attribute-inference accuracy"),
    Entry("attribute_inference", "metrics", "auc", "attribute-inference AUC"),
    Entry("distribution_inference", "metrics", "acc_dist", "meta-classifier accuracy on victim models"),
    Entry("data_reconstruction", "metrics", "mse_avg", "mean MSE to the class-mean record"),
    Entry("data_reconstruction", "metrics", "ssim_avg", "mean SSIM to the class-mean record"),
    Entry("discriminatory_behavior", "metrics", "demographic_parity_gap", "max - min positive rate"),
    Entry("discriminatory_behavior", "metrics", "tp_parity_gap", "max - min TPR"),
    Entry("discriminatory_behavior", "metrics", "fp_parity_gap", "max - min FPR"),
    Entry("discriminatory_behavior", "metrics", "equalized_odds_gap", "max of the TPR and FPR gaps"),
    Entry("discriminatory_behavior", "metrics", "p_rule", "100 * min / max positive rate"),
)
# keyed by report name ``<risk>.<metric>``; bare names collide across risks (auc)
METRICS = {f"{e.risk}.{e.name}": e for e in _METRIC_ENTRIES}


def entries() -> list[Entry]:
    return [*ATTACKS.values(), *DEFENSES.values(), *EVALUATIONS.values(), *METRICS.values()]


def listing() -> list[str]:
    """Sorted ``risk.kind.name`` lines for every registered item."""
    return sorted(e.path for e in entries())


def metric_name(risk: str, name: str) -> str:
    key = f"{risk}.{name}"
    if key not in METRICS:
        raise KeyError(f"unregistered metric {key}")
    return key


def lookup(kind: str, name: str) -> Entry:
    table = {"attacks": ATTACKS, "defenses": DEFENSES, "evaluations": EVALUATIONS}[kind]
    return table[name]
