import numpy as np
import pytest
from skimage.metrics import structural_similarity

from conftest import dataset, random_net
from interbench import nn
from interbench.data import DataError
from interbench.privacy.reconstruction import (ReconConfig, reconstruct_class,
                                               reconstruction_metrics, ssim)


def linear_net(seed, d=6, c=3):
    rng = np.random.default_rng(seed)
    return nn.Network((nn.Layer(rng.standard_normal((c, d)), rng.standard_normal(c), "identity"),))


class TestReconstruct:
    def test_zero_steps_mid(self):
        assert np.array_equal(reconstruct_class(linear_net(0), 1, ReconConfig(steps=0)), np.full(6, 0.5))

    def test_zero_steps_uniform(self):
        cfg = ReconConfig(steps=0, init="uniform", seed=4)
        a = reconstruct_class(linear_net(0), 2, cfg)
        assert np.array_equal(a, reconstruct_class(linear_net(0), 2, cfg))
        assert not np.all(a == 0.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_confidence_nondecreasing_on_linear(self, seed):
        trace = []
        reconstruct_class(linear_net(seed), seed % 3, ReconConfig(steps=300, rate=0.01), trace)
        assert np.all(np.diff(trace) >= -1e-12)

    def test_in_unit_box(self):
        x = reconstruct_class(random_net(1, [5, 8, 2]), 0, ReconConfig(steps=50, rate=5.0, init="uniform"))
        assert x.min() >= 0 and x.max() <= 1

    def test_invalid_class(self):
        with pytest.raises(ValueError):
            reconstruct_class(linear_net(0), 3)


def grid_train(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((20, 64))
    return dataset(X, np.arange(20) % 2, 2, grid=(8, 8))


class TestMetrics:
    def test_exact_mean(self):
        train = grid_train()
        means = {c: train.X[train.y == c].mean(axis=0) for c in (0, 1)}
        m = reconstruction_metrics(means, train)
        assert m["MSE_avg"] == 0.0 and m["SSIM_avg"] == pytest.approx(1.0)

    def test_constant_offset(self):
        train = dataset(np.array([[0.2, 0.4], [0.4, 0.2]]), [0, 0], 1)
        m = reconstruction_metrics({0: np.array([0.4, 0.4])}, train)
        assert m["MSE"][0] == pytest.approx(0.01) and "SSIM" not in m

    def test_constant_images(self):
        assert ssim(np.full((7, 7), 0.3), np.full((7, 7), 0.3)) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_ssim_against_skimage(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((9, 11)), rng.random((9, 11))
        b = 0.5 * a + 0.5 * b
        ref = structural_similarity(a, b, win_size=7, data_range=1.0, gaussian_weights=False,
                                    use_sample_covariance=False, full=True)[1]
        # skimage averages over all pixels with padded borders; compare the interior windows
        interior = ref[3:-3, 3:-3].mean()
        assert ssim(a, b) == pytest.approx(interior, abs=1e-12)

    def test_ssim_requires_grid(self):
        train = dataset(np.zeros((2, 3)), [0, 1], 2)
        with pytest.raises(DataError):
            reconstruction_metrics({0: np.zeros(3)}, train, with_ssim=True)

    def test_absent_class(self):
        train = dataset(np.zeros((2, 3)), [0, 0], 2)
        with pytest.raises(DataError):
            reconstruction_metrics({1: np.zeros(3)}, train)

    def test_small_image(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))
