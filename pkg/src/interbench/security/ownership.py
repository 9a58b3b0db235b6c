"""Unauthorised model ownership: logit extraction, fingerprinting and watermarks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from interbench import nn
from interbench._rng import substream
from interbench.data import LabeledDataset

STOLEN = "stolen"
INDEPENDENT = "independent"


@dataclass(frozen=True)
class OwnershipVerdict:
    statistic: float
    p_value: float | None
    decision: str
    threshold: float
    method: str = ""
    details: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def stolen(self) -> bool:
        return self.decision == STOLEN


def extract_model(target: nn.Network, surrogate_template: nn.Network, adversary_data,
                  train_cfg: nn.TrainConfig) -> tuple[nn.Network, nn.History]:
    """Fit the surrogate to the target's logits under MSE; labels are ignored."""
    X = adversary_data.X if isinstance(adversary_data, LabeledDataset) else np.asarray(adversary_data, float)
    targets = nn.forward(target, X)
    if surrogate_template.n_outputs != targets.shape[1]:
        raise nn.ShapeError("surrogate output width differs from the target's")
    return nn.fit_loop(surrogate_template, X, targets, train_cfg.replace(loss="mse"))


def extraction_metrics(target: nn.Network, surrogate: nn.Network, test: LabeledDataset) -> dict:
    """Surrogate test accuracy, fidelity and fidelity conditioned on agreement.

    ``Fid_corr`` is ``None`` when the two models never agree.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    pt = nn.predict(target, test.X)
    ps = nn.predict(surrogate, test.X)
    agree = pt == ps
    n_agree = int(agree.sum())
    correct_given = float(np.mean(ps[agree] == test.y[agree])) if n_agree else None
    return {
        "Acc_te": float(np.mean(ps == test.y)),
        "Fid": n_agree / len(test),
        "Fid_corr": correct_given,
    }


# ---------------------------------------------------------------------------
# dataset inference


@dataclass(frozen=True)
class ProbeConfig:
    """Boundary-distance walk used as the fingerprint.

    Each step moves ``step`` in L2 along the normalised input gradient of the loss
    of the originally predicted class; the fingerprint is ``step`` times the number
    of steps until the prediction flips, capped at ``max_steps``.
    """

    step: float = 0.01
    max_steps: int = 200
    alpha: float = 0.05

    def __post_init__(self):
        if self.step <= 0 or self.max_steps < 1 or not 0 < self.alpha < 1:
            raise ValueError("invalid probe configuration")


def boundary_distances(net: nn.Network, X: np.ndarray, cfg: ProbeConfig) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    origin = nn.predict(net, X)
    dist = np.full(n, cfg.max_steps * cfg.step)
    active = np.ones(n, dtype=bool)
    x = X.copy()
    for t in range(1, cfg.max_steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        _, _, g = nn.loss_and_grads(net, x[idx], origin[idx], "cross_entropy")
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        moving = norm[:, 0] > 0
        # zero-gradient samples cannot move; they stay at the cap
        active[idx[~moving]] = False
        idx, g, norm = idx[moving], g[moving], norm[moving]
        x[idx] += cfg.step * g / norm
        flipped = nn.predict(net, x[idx]) != origin[idx]
        dist[idx[flipped]] = t * cfg.step
        active[idx[flipped]] = False
    return dist


def dataset_inference(victim_train: LabeledDataset, public_data: LabeledDataset,
                      suspect: nn.Network, probe_cfg: ProbeConfig | None = None) -> OwnershipVerdict:
    """Welch test: are the suspect's margins larger on the victim's private data?

    Decision is ``stolen`` iff the one-sided p-value is below ``probe_cfg.alpha`` and
    the private-data mean distance exceeds the public one.
    """
    cfg = probe_cfg or ProbeConfig()
    if len(victim_train) == 0 or len(public_data) == 0:
        raise ValueError("dataset inference needs non-empty private and public samples")
    d_train = boundary_distances(suspect, victim_train.X, cfg)
    d_public = boundary_distances(suspect, public_data.X, cfg)
    details = {"train_mean": float(d_train.mean()), "public_mean": float(d_public.mean())}
    if d_train.size < 2 or d_public.size < 2 or (d_train.var() == 0 and d_public.var() == 0):
        return OwnershipVerdict(0.0, None, INDEPENDENT, cfg.alpha, "dataset_inference", details)
    res = stats.ttest_ind(d_train, d_public, equal_var=False, alternative="greater")
    t, p = float(res.statistic), float(res.pvalue)
    if not np.isfinite(p):
        return OwnershipVerdict(0.0, None, INDEPENDENT, cfg.alpha, "dataset_inference", details)
    stolen = p < cfg.alpha and details["train_mean"] > details["public_mean"]
    return OwnershipVerdict(t, p, STOLEN if stolen else INDEPENDENT, cfg.alpha, "dataset_inference", details)


# ---------------------------------------------------------------------------
# watermarking


@dataclass(frozen=True)
class WatermarkConfig:
    """``count`` random inputs in [0, 1]^d with random (or given) labels.

    ``repeat`` copies of the trigger set are appended to the training data.
    """

    count: int = 50
    seed: int = 0
    labels: tuple[int, ...] | None = None
    repeat: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("watermark count must be at least 1")
        if self.labels is not None and len(self.labels) != self.count:
            raise ValueError("one label per trigger is required")
        if self.repeat < 1:
            raise ValueError("repeat must be at least 1")


def embed_watermark(dataset: LabeledDataset, wm_cfg: WatermarkConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Return ``(augmented_train, trigger_set)``.

    Trigger rows get sensitive group 0 when the dataset carries one.
    """
    rng = substream(wm_cfg.seed, "watermark/triggers")
    X = rng.random((wm_cfg.count, dataset.n_features))
    if wm_cfg.labels is None:
        y = rng.integers(0, dataset.n_classes, size=wm_cfg.count)
    else:
        y = np.asarray(wm_cfg.labels, dtype=np.int64)
    z = None if dataset.z is None else np.zeros(wm_cfg.count, dtype=np.int64)
    trigger = LabeledDataset(X=X, y=y, n_classes=dataset.n_classes, z=z, grid=dataset.grid,
                             name=f"{dataset.name}-watermark", normalized=True)
    augmented = dataset
    for _ in range(wm_cfg.repeat):
        augmented = augmented.concat(trigger)
    return augmented, trigger.replace(z=None)


def verify_watermark(suspect: nn.Network, trigger_set: LabeledDataset, threshold: float) -> OwnershipVerdict:
    """``stolen`` iff the suspect's trigger-set accuracy reaches ``threshold``."""
    if len(trigger_set) == 0:
        raise ValueError("empty trigger set")
    c = max(trigger_set.n_classes, suspect.n_outputs)
    if not 1.0 / c < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (1/{c}, 1]")
    acc = nn.accuracy(suspect, trigger_set)
    return OwnershipVerdict(acc, None, STOLEN if acc >= threshold else INDEPENDENT, threshold, "watermark")


def ownership_population_metrics(derived: Sequence[OwnershipVerdict],
                                 independent: Sequence[OwnershipVerdict]) -> dict:
    """Accuracy, FPR (flagging an independent model) and FNR (missing a derived one)."""
    if not derived or not independent:
        raise ValueError("both populations must be non-empty")
    fn = sum(not v.stolen for v in derived)
    fp = sum(v.stolen for v in independent)
    total = len(derived) + len(independent)
    return {
        "Accuracy": (total - fn - fp) / total,
        "FPR": fp / len(independent),
        "FNR": fn / len(derived),
    }
