"""Evasion: L-infinity PGD and PGD adversarial training."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from interbench import nn
from interbench._rng import substream
from interbench.data import LabeledDataset


@dataclass(frozen=True)
class PgdConfig:
    """L-infinity PGD parameters, in normalised feature units.

    ``step`` defaults to ``epsilon / 4``.
    """

    epsilon: float = 0.03
    step: float | None = None
    steps: int = 10
    random_start: bool = True
    clip_min: float = 0.0
    clip_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")
        alpha = self.alpha
        if self.epsilon > 0 and alpha * self.steps < self.epsilon * (1 - 1e-12):
            warnings.warn("steps * step < epsilon: the ball boundary is unreachable", stacklevel=3)
        if self.steps > 1 and alpha > self.epsilon > 0:
            warnings.warn("step exceeds epsilon", stacklevel=3)

    @property
    def alpha(self) -> float:
        if self.step is not None:
            return float(self.step)
        return self.epsilon / 4.0 if self.epsilon > 0 else 1.0


def _check_range(X: np.ndarray, cfg: PgdConfig):
    if X.size and (X.min() < cfg.clip_min or X.max() > cfg.clip_max):
        raise ValueError(
            f"PGD needs features inside [{cfg.clip_min}, {cfg.clip_max}]; normalise the data first"
        )


def pgd_perturb(net: nn.Network, X: np.ndarray, y: np.ndarray, cfg: PgdConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Untargeted PGD on raw arrays.

    ``x <- Proj(x + alpha * sign(grad_x CE(f(x), y)))`` where the projection is onto
    the intersection of the epsilon ball around the clean input and the clip box.
    """
    X0 = np.asarray(X, dtype=np.float64)
    _check_range(X0, cfg)
    lo = np.maximum(X0 - cfg.epsilon, cfg.clip_min)
    hi = np.minimum(X0 + cfg.epsilon, cfg.clip_max)
    if cfg.epsilon == 0 or X0.shape[0] == 0:
        return X0.copy()
    x = X0.copy()
    if cfg.random_start:
        rng = rng if rng is not None else substream(cfg.seed, "pgd/start")
        x = np.clip(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), lo, hi)
    alpha = cfg.alpha
    for _ in range(cfg.steps):
        _, _, grad = nn.loss_and_grads(net, x, y, "cross_entropy")
        x = np.clip(x + alpha * np.sign(grad), lo, hi)
    return x


def pgd_attack(net: nn.Network, dataset: LabeledDataset, cfg: PgdConfig) -> LabeledDataset:
    """Adversarial copy of ``dataset``; labels are unchanged."""
    X_adv = pgd_perturb(net, dataset.X, dataset.y, cfg)
    return dataset.replace(X=X_adv)


def robust_accuracy(net: nn.Network, dataset: LabeledDataset, cfg: PgdConfig) -> float:
    return nn.accuracy(net, pgd_attack(net, dataset, cfg))


def adversarial_training(net: nn.Network, dataset: LabeledDataset, train_cfg: nn.TrainConfig,
                         pgd_cfg: PgdConfig) -> tuple[nn.Network, nn.History]:
    """Madry-style training: each batch is replaced by its PGD perturbation.

    Perturbations are crafted against the current parameters. The PGD random start
    draws from its own stream, so with ``epsilon == 0`` the trajectory is exactly
    that of :func:`interbench.nn.train` with the same config.
    """
    _check_range(dataset.X, pgd_cfg)
    rng = substream(train_cfg.seed, "adv_train/pgd")

    def step(work, xb, yb, idx):
        x_adv = pgd_perturb(work, xb, yb, pgd_cfg, rng)
        loss, grads, _ = nn.loss_and_grads(work, x_adv, yb, "cross_entropy")
        return loss, grads

    return nn.fit_loop(net, dataset.X, dataset.y, train_cfg, step)
