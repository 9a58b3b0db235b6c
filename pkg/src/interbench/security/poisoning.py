"""Poisoning: BadNets triggers, KNN-Shapley valuation and value-based removal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from interbench import nn
from interbench._rng import substream
from interbench.data import LabeledDataset


@dataclass(frozen=True)
class TriggerSpec:
    """Feature indices overwritten with ``values``; poisoned rows get ``target_class``.

    ``exclude_target`` drops rows whose true label already is the target from the
    triggered evaluation set (the usual attack-success-rate convention).
    """

    indices: tuple[int, ...]
    values: tuple[float, ...] | float = 1.0
    target_class: int = 0
    poison_rate: float = 0.1
    exclude_target: bool = False

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("trigger needs at least one feature index")
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise ValueError("trigger indices must be unique and non-negative")
        vals = self.values
        if np.isscalar(vals):
            vals = (float(vals),) * len(idx)
        vals = tuple(float(v) for v in vals)
        if len(vals) != len(idx) or any(v < 0 or v > 1 for v in vals):
            raise ValueError("trigger values must be in [0, 1], one per index")
        object.__setattr__(self, "values", vals)
        if not 0 < self.poison_rate <= 1:
            raise ValueError("poison_rate must lie in (0, 1]")


def apply_trigger(X: np.ndarray, trig: TriggerSpec) -> np.ndarray:
    if max(trig.indices) >= X.shape[1]:
        raise IndexError(f"trigger index {max(trig.indices)} out of range for {X.shape[1]} features")
    out = np.array(X, dtype=np.float64, copy=True)
    out[:, list(trig.indices)] = np.asarray(trig.values)
    return out


def badnets_poison(train: LabeledDataset, test: LabeledDataset, trig: TriggerSpec,
                   seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Poison ``ceil(p * n)`` random training rows; trigger the whole test set.

    Returns ``(poisoned_train, triggered_eval)``; every eval row carries the trigger
    and the target label.
    """
    if not 0 <= trig.target_class < train.n_classes:
        raise ValueError("target_class outside the label range")
    rows = poisoned_rows(train, trig, seed)
    X = train.X.copy()
    if rows.size:
        X[rows] = apply_trigger(train.X[rows], trig)
    y = train.y.copy()
    y[rows] = trig.target_class
    poisoned = train.replace(X=X, y=y)
    keep = test.y != trig.target_class if trig.exclude_target else np.ones(len(test), bool)
    eval_set = test.subset(np.flatnonzero(keep))
    eval_set = eval_set.replace(
        X=apply_trigger(eval_set.X, trig),
        y=np.full(len(eval_set), trig.target_class, dtype=np.int64),
    )
    return poisoned, eval_set


def poisoned_rows(train: LabeledDataset, trig: TriggerSpec, seed: int) -> np.ndarray:
    """Row indices :func:`badnets_poison` poisons for this seed."""
    n = len(train)
    k = min(n, math.ceil(trig.poison_rate * n - 1e-9))
    return np.sort(substream(seed, "badnets/rows").choice(n, size=k, replace=False))


def knn_shapley(train: LabeledDataset, valid: LabeledDataset, K: int) -> np.ndarray:
    """Exact Shapley values of the unweighted K-NN classification utility.

    Per validation point the training rows are sorted by Euclidean distance (stable,
    ties by index) and valued by the closed-form recursion

        s_N = 1[y_N == y_v] / max(N, K)
        s_i = s_{i+1} + (1[y_i == y_v] - 1[y_{i+1} == y_v]) / K * min(K, i) / i

    The result is averaged over validation points. The usual ``1 / N`` start is only
    correct for ``N >= K``; ``max(N, K)`` keeps the values exact when the training
    set is smaller than ``K``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    N, M = len(train), len(valid)
    if N == 0 or M == 0:
        raise ValueError("KNN-Shapley needs non-empty train and validation sets")
    values = np.zeros(N)
    i = np.arange(1, N + 1, dtype=np.float64)
    coef = np.minimum(K, i[:-1]) / i[:-1] / K
    Xt = train.X
    chunk = max(1, 4_000_000 // max(N * max(train.n_features, 1), 1))
    for start in range(0, M, chunk):
        Xv = valid.X[start:start + chunk]
        yv = valid.y[start:start + chunk]
        d2 = ((Xv[:, None, :] - Xt[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        match = (train.y[order] == yv[:, None]).astype(np.float64)
        s = np.empty_like(match)
        s[:, -1] = match[:, -1] / max(N, K)
        if N > 1:
            inc = (match[:, :-1] - match[:, 1:]) * coef
            # s_i = s_N + sum_{j >= i} inc_j, accumulated from the far end
            s[:, :-1] = s[:, -1:] + np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
        np.add.at(values, order.ravel(), s.ravel())
    return values / M


def removal_order(values: np.ndarray, direction: str = "highest") -> np.ndarray:
    """Indices sorted for removal; ties go to the lower index."""
    if direction not in ("highest", "lowest"):
        raise ValueError("direction must be 'highest' or 'lowest'")
    key = -values if direction == "highest" else values
    return np.lexsort((np.arange(values.size), key))


def outlier_removal(train: LabeledDataset, valid: LabeledDataset, K: int, fraction: float,
                    train_cfg: nn.TrainConfig, net_template: nn.Network,
                    direction: str = "highest") -> tuple[LabeledDataset, nn.Network]:
    """Drop the ``ceil(fraction * n)`` highest-valued rows and retrain from the template.

    ``direction="lowest"`` removes the least valuable rows instead.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    n = len(train)
    k = math.ceil(fraction * n - 1e-9)
    if k:
        values = knn_shapley(train, valid, K)
        drop = removal_order(values, direction)[:k]
        keep = np.setdiff1d(np.arange(n), drop)
        reduced = train.subset(keep)
    else:
        reduced = train
    net, _ = nn.train(net_template, reduced, train_cfg)
    return reduced, net
