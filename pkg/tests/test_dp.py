import math

import numpy as np
import pytest

from conftest import random_net
from interbench import nn
from interbench.data import SplitSpec, SyntheticSpec, split, synth_gauss
from interbench.privacy.dp import DpConfig, clip_factors, dpsgd_train, rdp_epsilon


def closed_form(steps, sigma, delta):
    return min(steps * a / (2 * sigma**2) + math.log(1 / delta) / (a - 1) for a in range(2, 65))


class TestAccountant:
    def test_single_step(self):
        eps = rdp_epsilon(DpConfig(noise_multiplier=1.0, delta=1e-5, steps=1))
        at6 = 3 + math.log(1e5) / 5
        assert at6 == pytest.approx(5.303, abs=1e-3)
        assert eps <= at6
        assert eps == pytest.approx(closed_form(1, 1.0, 1e-5), abs=1e-12)

    def test_zero_steps(self):
        assert rdp_epsilon(DpConfig(steps=0, delta=1e-5)) == pytest.approx(math.log(1e5) / 63, abs=1e-12)

    def test_no_noise(self):
        assert rdp_epsilon(DpConfig(noise_multiplier=0.0, steps=5)) == math.inf

    def test_monotone(self):
        by_steps = [rdp_epsilon(DpConfig(steps=s)) for s in range(0, 200, 7)]
        assert all(a <= b for a, b in zip(by_steps, by_steps[1:]))
        by_sigma = [rdp_epsilon(DpConfig(noise_multiplier=s, steps=50)) for s in np.linspace(0.3, 5, 20)]
        assert all(a >= b for a, b in zip(by_sigma, by_sigma[1:]))

    def test_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            sigma = float(rng.uniform(0.1, 10))
            steps = int(rng.integers(0, 10_000))
            delta = float(10 ** rng.uniform(-10, -1))
            got = rdp_epsilon(DpConfig(noise_multiplier=sigma, steps=steps, delta=delta))
            assert abs(got - closed_form(steps, sigma, delta)) <= 1e-9

    def test_validation(self):
        for bad in ({"clip_norm": 0}, {"noise_multiplier": -1}, {"delta": 1.0}, {"steps": -1}):
            with pytest.raises(ValueError):
                DpConfig(**bad)


class TestClipping:
    def test_double_norm(self):
        C = 0.7
        g = np.array([2 * C])
        assert (clip_factors(g, C) * g)[0] == pytest.approx(C, abs=0)

    def test_small_and_zero_norms_untouched(self):
        assert clip_factors(np.array([0.0, 0.5]), 1.0).tolist() == [1.0, 1.0]

    @pytest.mark.parametrize("seed", range(10))
    def test_mean_clipped_norm(self, seed):
        rng = np.random.default_rng(seed)
        net = random_net(seed, [4, 6, 3])
        X, y = rng.random((9, 4)) * 10, rng.integers(0, 3, 9)
        C = float(rng.uniform(0.01, 2))
        grads = nn.per_sample_grads(net, X, y)
        flat = np.hstack([g.reshape(9, -1) for g in grads])
        clipped = flat * clip_factors(np.linalg.norm(flat, axis=1), C)[:, None]
        assert np.linalg.norm(clipped.mean(axis=0)) <= C * (1 + 1e-12)


class TestTraining:
    def test_noop_matches_sgd(self):
        data = synth_gauss(SyntheticSpec(n=100, d=4, seed=0))
        cfg = nn.TrainConfig(epochs=3, batch_size=10, learning_rate=0.05, optimizer="sgd", seed=2)
        template = nn.init_network([4, 8, 2], 0)
        plain, _ = nn.train(template, data, cfg)
        priv, report = dpsgd_train(template, data, cfg, DpConfig(clip_norm=1e9, noise_multiplier=0.0))
        for a, b in zip(plain.params(), priv.params()):
            assert np.max(np.abs(a - b)) <= 1e-9
        assert report.epsilon == math.inf and report.steps == 30

    def test_lot_size_bound(self):
        data = synth_gauss(SyntheticSpec(n=10, d=2))
        with pytest.raises(ValueError):
            dpsgd_train(nn.init_network([2, 2], 0), data, nn.TrainConfig(batch_size=5), DpConfig(lot_size=20))

    def test_deterministic(self):
        data = synth_gauss(SyntheticSpec(n=60, d=3))
        cfg = nn.TrainConfig(epochs=2, batch_size=10, seed=1)
        a, _ = dpsgd_train(nn.init_network([3, 2], 0), data, cfg, DpConfig())
        b, _ = dpsgd_train(nn.init_network([3, 2], 0), data, cfg, DpConfig())
        assert a.equals(b)

    def test_utility_and_gap(self):
        data = synth_gauss(SyntheticSpec(n=400, d=20, separation=2.0, seed=0))
        parts = split(data, SplitSpec(0.5, 0.5, 0.0, seed=0))
        cfg = nn.TrainConfig(epochs=100, batch_size=32, learning_rate=3e-3, seed=0)
        template = nn.init_network([20, 64, 2], 0)
        base, _ = nn.train(template, parts.train, cfg)
        priv, report = dpsgd_train(template, parts.train, cfg, DpConfig(clip_norm=1.0, noise_multiplier=1.0))
        acc = {m: (nn.accuracy(net, parts.train), nn.accuracy(net, parts.test))
               for m, net in (("base", base), ("dp", priv))}
        assert acc["base"][1] - acc["dp"][1] <= 0.10
        assert acc["dp"][0] - acc["dp"][1] < acc["base"][0] - acc["base"][1]
        assert math.isfinite(report.epsilon) and report.steps == 100 * math.ceil(200 / 32)
