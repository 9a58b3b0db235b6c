"""DP-SGD training and a conservative Renyi-DP accountant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from interbench import nn
from interbench._rng import substream
from interbench.data import LabeledDataset

RDP_ORDERS = tuple(range(2, 65))


@dataclass(frozen=True)
class DpConfig:
    """Clipping norm, Gaussian noise multiplier and target delta.

    The lot size is the training batch size. ``steps`` is only read by
    :func:`rdp_epsilon`; :func:`dpsgd_train` accounts for the steps it runs.
    """

    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    delta: float = 1e-5
    steps: int = 0
    lot_size: int | None = None

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.lot_size is not None and self.lot_size < 1:
            raise ValueError("lot_size must be positive")


@dataclass(frozen=True)
class PrivacyReport:
    epsilon: float
    delta: float
    steps: int
    noise_multiplier: float
    order: int | None


def _rdp_bound(steps: int, sigma: float, delta: float, alpha: int) -> float:
    return steps * alpha / (2.0 * sigma**2) + math.log(1.0 / delta) / (alpha - 1)


def rdp_epsilon(dp: DpConfig) -> float:
    """``min_a steps * a / (2 sigma^2) + ln(1/delta) / (a - 1)`` over integer a in [2, 64].

    Composition of the Gaussian mechanism without subsampling amplification, so an
    upper bound on what a subsampled accountant reports. Infinite when sigma is 0.
    """
    return _rdp_minimum(dp.steps, dp.noise_multiplier, dp.delta)[0]


def _rdp_minimum(steps: int, sigma: float, delta: float) -> tuple[float, int | None]:
    if sigma == 0:
        return math.inf, None
    best = min((_rdp_bound(steps, sigma, delta, a), a) for a in RDP_ORDERS)
    return best


def clip_factors(norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """``min(1, C / ||g_i||)`` with zero-norm gradients left untouched."""
    norms = np.asarray(norms, dtype=np.float64)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, np.minimum(1.0, clip_norm / safe), 1.0)


def dpsgd_train(net: nn.Network, dataset: LabeledDataset, train_cfg: nn.TrainConfig,
                dp: DpConfig) -> tuple[nn.Network, PrivacyReport]:
    """Per-sample clipping to ``C`` in global L2 norm, summed, plus ``N(0, (sigma C)^2)``.

    The noisy sum is divided by the lot size and handed to the configured optimizer.
    Batches follow the same shuffled order as :func:`interbench.nn.train`; noise comes
    from its own stream.
    """
    cfg = train_cfg if dp.lot_size is None else train_cfg.replace(batch_size=dp.lot_size)
    if cfg.batch_size > len(dataset):
        raise ValueError("lot size exceeds the dataset size")
    rng = substream(cfg.seed, "dpsgd/noise")
    std = dp.noise_multiplier * dp.clip_norm
    steps = 0

    def step(work, xb, yb, idx):
        nonlocal steps
        norms, losses, cache, deltas = nn.per_sample_grad_norms(work, xb, yb, cfg.loss)
        grads = nn.weighted_grad_sum(cache, deltas, clip_factors(norms, dp.clip_norm))
        if std > 0:
            grads = [g + rng.normal(0.0, std, size=g.shape) for g in grads]
        lot = len(idx)
        steps += 1
        return float(losses.mean()), [g / lot for g in grads]

    model, _ = nn.fit_loop(net, dataset.X, dataset.y, cfg, step)
    eps, order = _rdp_minimum(steps, dp.noise_multiplier, dp.delta)
    return model, PrivacyReport(eps, dp.delta, steps, dp.noise_multiplier, order)
