"""Membership inference: LiRA scores and ROC summary metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from interbench import nn
from interbench._rng import child_seed, substream
from interbench.data import LabeledDataset

E_MIN = 1e-12
_PHI_MAX = math.log((1.0 - E_MIN) / E_MIN)


def logit_scale(p):
    """``log(p / (1 - p))`` with ``p`` clamped to ``[1e-12, 1 - 1e-12]``.

    The clamp is applied to the smaller tail ``min(p, 1 - p)``, which keeps
    ``logit_scale(p) == -logit_scale(1 - p)`` exact in floating point.
    """
    p = np.asarray(p, dtype=np.float64)
    upper = p > 0.5
    tail = np.maximum(np.where(upper, 1.0 - p, p), E_MIN)
    low = np.log(tail) - np.log1p(-tail)
    out = np.where(upper, -low, low)
    return float(out) if out.ndim == 0 else out


def confidence_logit(net: nn.Network, X, y) -> np.ndarray:
    """Logit-scaled true-class confidence, computed in log space.

    Equals ``logit_scale(softmax(f(x))_y)`` without the round trip through a
    probability, which loses precision for confident models.
    """
    logits = nn.forward(net, X)
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(len(y))
    logp = nn.log_softmax(logits)
    log_py = logp[rows, y]
    others = logits.copy()
    others[rows, y] = -np.inf
    m = others.max(axis=1, keepdims=True)
    log_rest = (m[:, 0] + np.log(np.exp(others - m).sum(axis=1))) - (logits - logp)[rows, 0]
    return np.clip(log_py - log_rest, -_PHI_MAX, _PHI_MAX)


@dataclass(frozen=True)
class MembershipScore:
    example_id: int
    score: float
    truth: str  # "in" | "out"

    def __post_init__(self):
        if self.truth not in ("in", "out"):
            raise ValueError("truth must be 'in' or 'out'")
        if not math.isfinite(self.score):
            raise ValueError("membership score must be finite")


# (training set, seed) -> trained network
Trainer = Callable[[LabeledDataset, int], nn.Network]


@dataclass(frozen=True)
class ShadowConfig:
    """Shadow-model population for LiRA.

    ``trainer`` maps a training set and a seed to a model; the pipeline passes the
    target's own training routine. ``inclusion`` is the probability that a challenge
    enters a given shadow's training set.
    """

    count: int = 16
    inclusion: float = 0.5
    trainer: Trainer | None = None
    seed: int = 0
    variance_floor: float = 1e-6
    global_variance: bool = False
    max_resample: int = 1000

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("LiRA needs at least two shadow models")
        if not 0 < self.inclusion < 1:
            raise ValueError("inclusion must lie in (0, 1)")


def shadow_masks(n: int, cfg: ShadowConfig, need_in: int, need_out: int) -> np.ndarray:
    """``(count, n)`` boolean membership masks; column j has >= need_in ins and need_out outs.

    Offending columns are redrawn from the same stream until they comply.
    """
    if cfg.count < need_in + need_out:
        raise ValueError(f"{cfg.count} shadows cannot hold {need_in} in and {need_out} out")
    rng = substream(cfg.seed, "lira/masks")
    masks = rng.random((cfg.count, n)) < cfg.inclusion
    for _ in range(cfg.max_resample):
        ins = masks.sum(axis=0)
        bad = (ins < need_in) | (cfg.count - ins < need_out)
        if not bad.any():
            return masks
        masks[:, bad] = rng.random((cfg.count, int(bad.sum()))) < cfg.inclusion
    raise RuntimeError("could not satisfy shadow membership constraints")


def train_shadows(challenges: LabeledDataset, cfg: ShadowConfig, mode: str,
                  background: LabeledDataset | None = None):
    """Train the shadow population; returns ``(masks, phi)`` with phi of shape (count, n)."""
    if cfg.trainer is None:
        raise ValueError("ShadowConfig.trainer is required")
    n = len(challenges)
    need_in = 2 if mode == "online" else 0
    masks = shadow_masks(n, cfg, need_in, 2)
    phi = np.empty((cfg.count, n))
    for s in range(cfg.count):
        subset = challenges.subset(np.flatnonzero(masks[s]))
        if background is not None and len(background):
            subset = subset.concat(background) if len(subset) else background
        model = cfg.trainer(subset, child_seed(cfg.seed, f"lira/shadow/{s}"))
        phi[s] = confidence_logit(model, challenges.X, challenges.y)
    return masks, phi


def _fit(phi: np.ndarray, mask: np.ndarray, cfg: ShadowConfig):
    count = mask.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(mask, phi, 0.0).sum(axis=0) / count
        var = np.where(mask, (phi - mu) ** 2, 0.0).sum(axis=0) / count
    pooled = float(np.nanmean(var)) if np.any(np.isfinite(var)) else 0.0
    if cfg.global_variance:
        var = np.full_like(var, pooled)
    else:
        var = np.where(var > 0, var, pooled)
    return mu, np.sqrt(np.maximum(var, cfg.variance_floor))


def _norm_logpdf(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def lira_from_statistics(phi_target: np.ndarray, phi: np.ndarray, masks: np.ndarray,
                         mode: str, cfg: ShadowConfig) -> np.ndarray:
    """Per-challenge LiRA scores from shadow statistics.

    online:  ``log N(phi_t; mu_in, s_in) - log N(phi_t; mu_out, s_out)``
    offline: ``(phi_t - mu_out) / s_out``
    """
    mu_out, s_out = _fit(phi, ~masks, cfg)
    if mode == "offline":
        return (phi_target - mu_out) / s_out
    if mode != "online":
        raise ValueError("mode must be 'online' or 'offline'")
    mu_in, s_in = _fit(phi, masks, cfg)
    return _norm_logpdf(phi_target, mu_in, s_in) - _norm_logpdf(phi_target, mu_out, s_out)


def lira_scores(target: nn.Network, challenges: LabeledDataset, membership: Sequence[bool],
                shadows: ShadowConfig, mode: str = "online",
                background: LabeledDataset | None = None) -> list[MembershipScore]:
    """Likelihood-ratio membership scores for every challenge.

    ``membership[j]`` is the ground truth for challenge j and is only used to label
    the returned scores. ``background`` rows (adversary data) join every shadow's
    training set.
    """
    if mode not in ("online", "offline"):
        raise ValueError("mode must be 'online' or 'offline'")
    membership = np.asarray(membership, dtype=bool)
    if membership.shape != (len(challenges),):
        raise ValueError("one membership flag per challenge is required")
    masks, phi = train_shadows(challenges, shadows, mode, background)
    phi_t = confidence_logit(target, challenges.X, challenges.y)
    scores = lira_from_statistics(phi_t, phi, masks, mode, shadows)
    return [MembershipScore(j, float(s), "in" if m else "out")
            for j, (s, m) in enumerate(zip(scores, membership))]


# ---------------------------------------------------------------------------
# ROC metrics


def _split_scores(scores: Sequence[MembershipScore]):
    pos = np.array([s.score for s in scores if s.truth == "in"], dtype=np.float64)
    neg = np.array([s.score for s in scores if s.truth == "out"], dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("ROC metrics need both members and non-members")
    return pos, neg


def auc_score(pos: np.ndarray, neg: np.ndarray) -> float:
    """Mann-Whitney AUC with ties counted one half."""
    from scipy.stats import rankdata

    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def operating_points(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) for every rule ``score >= t``, including the empty rule."""
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    ps, ns = np.sort(pos), np.sort(neg)
    tp = pos.size - np.searchsorted(ps, thresholds, side="left")
    fp = neg.size - np.searchsorted(ns, thresholds, side="left")
    tpr = np.concatenate([[0.0], tp / pos.size])
    fpr = np.concatenate([[0.0], fp / neg.size])
    return fpr, tpr


def roc_metrics(scores: Sequence[MembershipScore], fpr_levels: Sequence[float] = (0.01,)) -> dict:
    """AUC, best balanced accuracy over thresholds and TPR at fixed FPR.

    ``TPR@x`` is the largest TPR among achievable operating points with FPR <= x;
    no interpolation between points.
    """
    pos, neg = _split_scores(scores)
    fpr, tpr = operating_points(pos, neg)
    out = {
        "auc": auc_score(pos, neg),
        "balanced_accuracy": float(np.max((tpr + 1.0 - fpr) / 2.0)),
    }
    for level in fpr_levels:
        ok = fpr <= level + 1e-15
        out[f"tpr_at_{level:g}_fpr"] = float(tpr[ok].max())
    return out
