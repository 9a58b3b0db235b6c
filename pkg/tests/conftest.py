import numpy as np
import pytest

from interbench import nn
from interbench.data import LabeledDataset


def random_net(seed, sizes, activation="relu", bias_scale=0.1):
    """A Glorot network with non-zero biases, so bias gradients are exercised."""
    net = nn.init_network(sizes, seed, activation)
    rng = np.random.default_rng(seed + 12345)
    params = [p if p.ndim == 2 else bias_scale * rng.standard_normal(p.shape) for p in net.params()]
    return net.with_params(params)


def numeric_grads(net, X, y, loss, h=1e-5):
    out = []
    params = [p.copy() for p in net.params()]
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up, _, _ = nn.loss_and_grads(net.with_params(params), X, y, loss)
            p[idx] = orig - h
            down, _, _ = nn.loss_and_grads(net.with_params(params), X, y, loss)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def dataset(X, y, n_classes=None, **kw):
    y = np.asarray(y)
    return LabeledDataset(X=np.asarray(X, float), y=y,
                          n_classes=int(n_classes or y.max() + 1), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one "[PASS]" / "[FAIL]" line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
