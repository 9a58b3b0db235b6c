"""Attribute and distribution inference from model outputs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from interbench import nn
from interbench._rng import child_seed, substream
from interbench.data import DataError, LabeledDataset, sample_with_ratio
from interbench.privacy.membership import auc_score


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


def _fit_classifier(X: np.ndarray, y: np.ndarray, n_classes: int, hidden: int,
                    cfg: nn.TrainConfig) -> nn.Network:
    net = nn.init_network([X.shape[1], hidden, n_classes], seed=cfg.seed)
    model, _ = nn.fit_loop(net, X, y, cfg)
    return model


def balanced_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean per-group recall over the groups present in ``truth``."""
    groups = np.unique(truth)
    return float(np.mean([np.mean(pred[truth == g] == g) for g in groups]))


@dataclass(frozen=True)
class AttributeAttackConfig:
    """Attack network on the target's output probabilities.

    ``include_label`` appends the one-hot true label to the attack features.
    """

    hidden: int = 32
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(
        epochs=40, batch_size=64, learning_rate=3e-3))
    include_label: bool = False
    seed: int = 0


def _attack_features(target: nn.Network, data: LabeledDataset, include_label: bool) -> np.ndarray:
    feats = nn.predict_proba(target, data.X)
    if include_label:
        feats = np.hstack([feats, np.eye(target.n_outputs)[data.y]])
    return feats


def attribute_inference_attack(target: nn.Network, adversary_data: LabeledDataset,
                               eval_data: LabeledDataset,
                               attack_cfg: AttributeAttackConfig | None = None) -> dict:
    """Infer the sensitive attribute from the target's outputs.

    Returns balanced attack accuracy ``Acc_att`` and ``AUC`` (macro one-vs-rest when
    there are more than two groups). Predictions divide the attack posterior by the
    training group prior, the decision rule that maximises balanced accuracy.
    """
    cfg = attack_cfg or AttributeAttackConfig()
    if adversary_data.z is None or eval_data.z is None:
        raise DataError("attribute inference needs the sensitive attribute in both sets")
    if np.unique(eval_data.z).size < 2:
        raise DataError("evaluation set holds a single sensitive group")
    g = max(adversary_data.n_groups, eval_data.n_groups)
    Xa, Xe = _standardize(_attack_features(target, adversary_data, cfg.include_label),
                          _attack_features(target, eval_data, cfg.include_label))
    attack = _fit_classifier(Xa, adversary_data.z, g, cfg.hidden, cfg.train.replace(seed=cfg.seed))
    post = nn.predict_proba(attack, Xe)
    prior = np.bincount(adversary_data.z, minlength=g) / len(adversary_data)
    pred = np.argmax(post / np.maximum(prior, 1e-12), axis=1)
    z = eval_data.z
    if g == 2:
        auc = auc_score(post[z == 1, 1], post[z == 0, 1])
    else:
        aucs = [auc_score(post[z == k, k], post[z != k, k]) for k in range(g)
                if 0 < np.sum(z == k) < len(z)]
        auc = float(np.mean(aucs))
    return {"Acc_att": balanced_accuracy(pred, z), "AUC": auc}


# ---------------------------------------------------------------------------
# distribution inference

Trainer = Callable[[LabeledDataset, int], nn.Network]


@dataclass(frozen=True)
class DistributionInferenceConfig:
    """Two worlds differ in the share of ``z == 1`` rows in the training data."""

    ratio0: float = 0.1
    ratio1: float = 0.9
    shadows_per_world: int = 16
    train_size: int = 500
    probe_size: int = 64
    meta_hidden: int = 32
    meta_train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(
        epochs=200, batch_size=16, learning_rate=3e-3))
    seed: int = 0

    def __post_init__(self):
        if self.ratio0 == self.ratio1:
            raise ValueError("the two worlds need different ratios")
        for r in (self.ratio0, self.ratio1):
            if not 0 <= r <= 1:
                raise ValueError("ratios must lie in [0, 1]")
        if self.shadows_per_world < 2:
            raise ValueError("need at least two shadow models per world")


def world_models(pool: LabeledDataset, ratio: float, count: int, size: int, trainer: Trainer,
                 seed: int, label: str) -> list[nn.Network]:
    """Train ``count`` models on ratio-controlled subsamples of ``pool``."""
    models = []
    for k in range(count):
        s = child_seed(seed, f"{label}/{k}")
        world = sample_with_ratio(pool, ratio, size, substream(s, "world/sample"))
        models.append(trainer(world, s))
    return models


def draw_probe(pool: LabeledDataset, size: int, seed: int) -> np.ndarray:
    size = min(size, len(pool))
    rows = substream(seed, "distinf/probe").choice(len(pool), size=size, replace=False)
    return pool.X[np.sort(rows)]


def model_fingerprint(net: nn.Network, probe: np.ndarray) -> np.ndarray:
    return nn.predict_proba(net, probe).ravel()


def distribution_inference_attack(shadow_pool: LabeledDataset, trainer: Trainer,
                                  victims: Sequence[nn.Network], victim_worlds: Sequence[int],
                                  cfg: DistributionInferenceConfig | None = None,
                                  probe: np.ndarray | None = None) -> float:
    """Meta-classifier accuracy at telling which world each victim was trained in.

    Shadows are trained by ``trainer`` on subsamples of ``shadow_pool``; a model is
    represented by its concatenated softmax outputs on a fixed probe set.
    """
    cfg = cfg or DistributionInferenceConfig()
    victim_worlds = np.asarray(victim_worlds, dtype=np.int64)
    if len(victims) != victim_worlds.size or not len(victims):
        raise ValueError("one world label per victim model is required")
    if probe is None:
        probe = draw_probe(shadow_pool, cfg.probe_size, cfg.seed)
    feats, labels = [], []
    for w, ratio in enumerate((cfg.ratio0, cfg.ratio1)):
        for model in world_models(shadow_pool, ratio, cfg.shadows_per_world, cfg.train_size,
                                  trainer, cfg.seed, f"distinf/shadow/{w}"):
            feats.append(model_fingerprint(model, probe))
            labels.append(w)
    F, Fv = _standardize(np.array(feats), np.array([model_fingerprint(v, probe) for v in victims]))
    meta = _fit_classifier(F, np.array(labels), 2, cfg.meta_hidden, cfg.meta_train.replace(seed=cfg.seed))
    pred = nn.predict(meta, Fv)
    return float(np.mean(pred == victim_worlds))
