"""Group-fairness metrics and adversarial debiasing."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from interbench import nn
from interbench.data import DataError, LabeledDataset


@dataclass(frozen=True)
class GroupOutcome:
    """Confusion counts of one group."""

    group: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positive_rate(self) -> Fraction:
        return Fraction(self.tp + self.fp, self.n)

    @property
    def tpr(self) -> Fraction | None:
        pos = self.tp + self.fn
        return Fraction(self.tp, pos) if pos else None

    @property
    def fpr(self) -> Fraction | None:
        neg = self.fp + self.tn
        return Fraction(self.fp, neg) if neg else None


def group_outcomes(preds, labels, groups, positive_class: int | None = None) -> list[GroupOutcome]:
    preds, labels, groups = (np.asarray(a).astype(np.int64) for a in (preds, labels, groups))
    if not preds.shape == labels.shape == groups.shape:
        raise ValueError("preds, labels and groups must have the same length")
    if positive_class is not None:
        preds = (preds == positive_class).astype(np.int64)
        labels = (labels == positive_class).astype(np.int64)
    elif not (np.isin(preds, (0, 1)).all() and np.isin(labels, (0, 1)).all()):
        raise ValueError("predictions and labels must be binary; pass positive_class for multi-class")
    out = []
    for g in np.unique(groups):
        m = groups == g
        p, t = preds[m], labels[m]
        out.append(GroupOutcome(
            int(g),
            tp=int(np.sum((p == 1) & (t == 1))),
            fp=int(np.sum((p == 1) & (t == 0))),
            tn=int(np.sum((p == 0) & (t == 0))),
            fn=int(np.sum((p == 0) & (t == 1))),
        ))
    if len(out) < 2:
        raise ValueError("parity metrics need at least two groups")
    return out


def _gap(rates) -> float | None:
    rates = [r for r in rates if r is not None]
    if len(rates) < 2:
        return None
    return float(max(rates) - min(rates))


def fairness_metrics(preds, labels, groups, positive_class: int | None = None) -> dict:
    """Parity gaps across groups, computed exactly on counts.

    ``p_rule`` is ``100 * min_g P(yhat=1|g) / max_g P(yhat=1|g)``, ``None`` when no
    group receives a positive prediction. A TPR/FPR gap is ``None`` when fewer than
    two groups have the required positives/negatives.
    """
    outcomes = group_outcomes(preds, labels, groups, positive_class)
    rates = [o.positive_rate for o in outcomes]
    tp_gap = _gap([o.tpr for o in outcomes])
    fp_gap = _gap([o.fpr for o in outcomes])
    top = max(rates)
    eo = None if tp_gap is None and fp_gap is None else max(g for g in (tp_gap, fp_gap) if g is not None)
    return {
        "demographic_parity_gap": float(top - min(rates)),
        "tp_parity_gap": tp_gap,
        "fp_parity_gap": fp_gap,
        "equalized_odds_gap": eo,
        "p_rule": float(100 * min(rates) / top) if top > 0 else None,
    }


def model_fairness(net: nn.Network, dataset: LabeledDataset, positive_class: int | None = None) -> dict:
    if dataset.z is None:
        raise DataError("fairness metrics need the sensitive attribute")
    if positive_class is None and dataset.n_classes > 2:
        positive_class = 1
    return fairness_metrics(nn.predict(net, dataset.X), dataset.y, dataset.z, positive_class)


@dataclass(frozen=True)
class DebiasConfig:
    """``lam`` weighs the adversary's loss; ``train`` drives the predictor."""

    lam: float = 1.0
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    adversary_lr: float = 3e-2
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.adversary_lr <= 0:
            raise ValueError("adversary_lr must be positive")


def _softmax_vjp(probs: np.ndarray, g: np.ndarray) -> np.ndarray:
    return probs * (g - (g * probs).sum(axis=1, keepdims=True))


def adversarial_debiasing_train(predictor_template: nn.Network, adversary_template: nn.Network,
                                dataset: LabeledDataset, cfg: DebiasConfig | None = None,
                                return_adversary: bool = False):
    """Alternate an adversary step and a predictor step on every batch.

    1. adversary: minimise ``CE(A(softmax(P(x))), z)``;
    2. predictor (adversary frozen): minimise ``CE(P(x), y) - lam * CE(A(softmax(P(x))), z)``.

    Returns the predictor, or ``(predictor, adversary)`` with ``return_adversary``. Batches follow :func:`interbench.nn.train`'s
    order, so ``lam == 0`` reproduces plain training of the predictor exactly.
    """
    cfg = cfg or DebiasConfig()
    if dataset.z is None:
        raise DataError("adversarial debiasing needs the sensitive attribute")
    if np.unique(dataset.z).size != 2 or dataset.z.max() > 1:
        raise DataError("adversarial debiasing needs a binary sensitive attribute")
    if adversary_template.n_inputs != predictor_template.n_outputs:
        raise nn.ShapeError("adversary input width must equal the predictor's output width")
    if adversary_template.n_outputs < dataset.n_groups:
        raise nn.ShapeError("adversary has fewer outputs than sensitive groups")
    z = dataset.z
    adv_params = [p.copy() for p in adversary_template.params()]
    adversary = adversary_template.with_params(adv_params)
    adv_cfg = cfg.train.replace(learning_rate=cfg.adversary_lr)
    adv_opt = nn.make_optimizer(adv_cfg, adv_params)

    def adversary_step(work, xb, zb):
        probs = nn.softmax(nn.forward(work, xb))
        _, grads, _ = nn.loss_and_grads(adversary, probs, zb)
        adv_opt.step(grads)

    if cfg.warmup_epochs:
        from interbench._rng import substream

        rng = substream(cfg.train.seed, "debias/warmup")
        batch = min(cfg.train.batch_size, len(dataset))
        for _ in range(cfg.warmup_epochs):
            order = rng.permutation(len(dataset))
            for start in range(0, len(dataset), batch):
                idx = order[start:start + batch]
                adversary_step(predictor_template, dataset.X[idx], z[idx])

    def step(work, xb, yb, idx):
        zb = z[idx]
        adversary_step(work, xb, zb)
        logits = nn.forward(work, xb)
        losses, d = nn._loss_and_dlogits(logits, yb, "cross_entropy")
        dlogits = d / len(idx)
        if cfg.lam:
            probs = nn.softmax(logits)
            _, _, g_probs = nn.loss_and_grads(adversary, probs, zb)
            dlogits = dlogits - cfg.lam * _softmax_vjp(probs, g_probs)
        grads, _ = nn.backward(work, xb, dlogits)
        return float(losses.mean()), grads

    predictor, _ = nn.fit_loop(predictor_template, dataset.X, dataset.y, cfg.train, step)
    return (predictor, adversary) if return_adversary else predictor
