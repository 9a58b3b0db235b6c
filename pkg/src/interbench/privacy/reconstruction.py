"""Class-representative reconstruction by input-space gradient descent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from interbench import nn
from interbench._rng import substream
from interbench.data import DataError, LabeledDataset


@dataclass(frozen=True)
class ReconConfig:
    steps: int = 200
    rate: float = 0.1
    init: str = "mid"  # "mid" (all 0.5) or "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.rate <= 0:
            raise ValueError("steps must be >= 0 and rate > 0")
        if self.init not in ("mid", "uniform"):
            raise ValueError("init must be 'mid' or 'uniform'")


def reconstruct_class(target: nn.Network, c: int, cfg: ReconConfig | None = None,
                      trace: list | None = None) -> np.ndarray:
    """Projected descent on ``CE(f(x), c)`` over the unit box.

    When ``trace`` is a list, the class-``c`` confidence after every iteration is
    appended to it.
    """
    cfg = cfg or ReconConfig()
    if not 0 <= c < target.n_outputs:
        raise ValueError(f"class {c} outside [0, {target.n_outputs})")
    d = target.n_inputs
    if cfg.init == "mid":
        x = np.full((1, d), 0.5)
    else:
        x = substream(cfg.seed, f"recon/init/{c}").random((1, d))
    y = np.array([c])
    for _ in range(cfg.steps):
        _, _, g = nn.loss_and_grads(target, x, y)
        x = np.clip(x - cfg.rate * g, 0.0, 1.0)
        if trace is not None:
            trace.append(float(nn.predict_proba(target, x)[0, c]))
    return x[0]


def class_means(train: LabeledDataset, classes) -> dict[int, np.ndarray]:
    out = {}
    for c in classes:
        rows = train.X[train.y == c]
        if rows.shape[0] == 0:
            raise DataError(f"class {c} absent from the training set")
        out[c] = rows.mean(axis=0)
    return out


def ssim(a: np.ndarray, b: np.ndarray, win: int = 7, data_range: float = 1.0) -> float:
    """Mean SSIM over all ``win x win`` uniform windows fully inside the images.

    Window statistics use population (1/N) moments.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("SSIM needs two images of equal 2-D shape")
    if min(a.shape) < win:
        raise ValueError(f"images smaller than the {win}x{win} window")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    mu_a, mu_b = wa.mean(axis=(-2, -1)), wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a, var_b = (da**2).mean(axis=(-2, -1)), (db**2).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def reconstruction_metrics(reconstructions: Mapping[int, np.ndarray], train: LabeledDataset,
                           with_ssim: bool | None = None) -> dict:
    """MSE (and SSIM on grid data) between each reconstruction and its class mean record.

    ``with_ssim=None`` computes SSIM whenever the dataset has grid metadata.
    """
    if not reconstructions:
        raise ValueError("no reconstructions given")
    if with_ssim is None:
        with_ssim = train.grid is not None
    if with_ssim and train.grid is None:
        raise DataError("SSIM needs grid metadata")
    means = class_means(train, sorted(reconstructions))
    mse = {c: float(np.mean((np.asarray(reconstructions[c]) - means[c]) ** 2)) for c in means}
    out = {"MSE": mse, "MSE_avg": float(np.mean(list(mse.values())))}
    if with_ssim:
        shape = train.grid
        out["SSIM"] = {c: ssim(np.reshape(reconstructions[c], shape), means[c].reshape(shape))
                       for c in means}
        out["SSIM_avg"] = float(np.mean(list(out["SSIM"].values())))
    return out
