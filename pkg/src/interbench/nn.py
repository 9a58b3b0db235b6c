"""Dense networks with reverse-mode gradients.

The model under attack everywhere in the package is a :class:`Network`: an ordered
stack of dense layers, ReLU or identity activations, identity on the last layer so
the output is a vector of logits. Arrays are float64 numpy arrays in row-major
order; a weight matrix has shape ``(out, in)``.

Gradients are computed by a single reverse sweep over the stored pre-activations.
The sweep keeps the per-sample error signals, so batch gradients, per-sample
gradients and input gradients all come from the same pass.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from interbench._rng import substream

ACTIVATIONS = ("relu", "identity")
OPTIMIZERS = ("sgd", "adam")
LOSSES = ("cross_entropy", "mse")


class ShapeError(ValueError):
    """Raised when array dimensions do not chain."""


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )


@dataclass(frozen=True)
class Network:
    """Immutable dense stack; the last layer is always identity (logits)."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ShapeError(
                    f"layer output {prev.weight.shape[0]} != next input {nxt.weight.shape[1]}"
                )
        if layers[-1].activation != "identity":
            raise ValueError("final layer must use the identity activation")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.n_inputs] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in order ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "Network":
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ShapeError("parameter list does not match layer count")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError("parameter shapes differ from the template")
            layers.append(Layer(w, b, layer.activation))
        return Network(tuple(layers))

    def copy(self) -> "Network":
        return self.with_params([p.copy() for p in self.params()])

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def equals(self, other: "Network") -> bool:
        """Bitwise parameter equality."""
        if self.sizes != other.sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def init_network(sizes: Sequence[int], seed: int, activation: str = "relu") -> Network:
    """Glorot-uniform weights ``U(-sqrt(6/(fan_in+fan_out)), +...)``, zero biases.

    ``sizes`` lists the widths from input to output, e.g. ``[d, 64, c]``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"invalid layer sizes {sizes}")
    rng = substream(seed, "nn/init")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = "identity" if k == len(sizes) - 2 else activation
        layers.append(Layer(weight, np.zeros(fan_out), act))
    return Network(tuple(layers))


def zeros_like_network(net: Network) -> Network:
    return net.with_params([np.zeros_like(p) for p in net.params()])


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class _Cache:
    inputs: list[np.ndarray]  # activation fed into each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def _as_matrix(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.n_inputs:
        raise ShapeError(f"input of shape {X.shape} does not match {net.n_inputs} features")
    return X


def _forward(net: Network, X: np.ndarray) -> tuple[np.ndarray, _Cache]:
    inputs, pre = [], []
    a = X
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, _Cache(inputs, pre)


def _deltas(net: Network, cache: _Cache, dlogits: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Back-propagate per-sample output errors; returns per-layer deltas and dX."""
    deltas = [None] * len(net.layers)
    delta = dlogits
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            delta = delta * (cache.pre[k] > 0.0)
        deltas[k] = delta
        delta = delta @ layer.weight
    return deltas, delta


def _param_grads(cache: _Cache, deltas: list[np.ndarray]) -> list[np.ndarray]:
    grads = []
    for a, d in zip(cache.inputs, deltas):
        grads.extend((d.T @ a, d.sum(axis=0)))
    return grads


def backward(net: Network, X, dlogits) -> tuple[list[np.ndarray], np.ndarray]:
    """Vector-Jacobian product: given dL/dlogits, return (param grads, dL/dX)."""
    X = _as_matrix(net, X)
    _, cache = _forward(net, X)
    deltas, dX = _deltas(net, cache, np.asarray(dlogits, dtype=np.float64))
    return _param_grads(cache, deltas), dX


def forward(net: Network, X) -> np.ndarray:
    """Logits for a batch ``X`` of shape ``(n, d)``."""
    logits, _ = _forward(net, _as_matrix(net, X))
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def predict_proba(net: Network, X) -> np.ndarray:
    return softmax(forward(net, X))


def predict(net: Network, X) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return np.argmax(forward(net, X), axis=1)


def _loss_and_dlogits(logits: np.ndarray, y, loss: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and per-sample dloss_i/dlogits_i (not divided by n)."""
    n, c = logits.shape
    if n == 0:
        raise ValueError("empty batch")
    if loss == "cross_entropy":
        y = np.asarray(y)
        if y.shape != (n,):
            raise ShapeError(f"labels of shape {y.shape} for {n} samples")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("cross-entropy labels must be integers")
            y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= c:
            raise ValueError(f"label outside [0, {c})")
        logp = log_softmax(logits)
        rows = np.arange(n)
        losses = -logp[rows, y]
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return losses, d
    if loss == "mse":
        target = np.asarray(y, dtype=np.float64)
        if target.ndim == 1 and c == 1:
            target = target[:, None]
        if target.shape != logits.shape:
            raise ShapeError(f"targets of shape {target.shape} for logits {logits.shape}")
        diff = logits - target
        return (diff**2).sum(axis=1), 2.0 * diff
    raise ValueError(f"unknown loss {loss!r}")


def loss_and_grads(net: Network, X, y, loss: str = "cross_entropy"):
    """Mean loss over the batch, its parameter gradients and its input gradients.

    Returns ``(loss, param_grads, input_grads)`` where ``param_grads`` follows
    :meth:`Network.params` ordering and ``input_grads`` has the shape of ``X``.
    For ``"mse"`` the per-sample loss is the squared error summed over outputs.
    """
    X = _as_matrix(net, X)
    logits, cache = _forward(net, X)
    losses, d = _loss_and_dlogits(logits, y, loss)
    n = X.shape[0]
    deltas, dX = _deltas(net, cache, d / n)
    return float(losses.mean()), _param_grads(cache, deltas), dX


def per_sample_grads(net: Network, X, y, loss: str = "cross_entropy") -> list[np.ndarray]:
    """Gradient of each sample's own loss.

    Returned in :meth:`Network.params` order with a leading sample axis, i.e. the
    weight entry for layer k has shape ``(n, out_k, in_k)``. Entry ``[i]`` across
    the list is sample i's gradient set; the mean over axis 0 is the batch gradient.
    """
    X = _as_matrix(net, X)
    logits, cache = _forward(net, X)
    _, d = _loss_and_dlogits(logits, y, loss)
    deltas, _ = _deltas(net, cache, d)
    grads = []
    for a, dk in zip(cache.inputs, deltas):
        grads.extend((np.einsum("no,ni->noi", dk, a), dk.copy()))
    return grads


def per_sample_grad_norms(net: Network, X, y, loss: str = "cross_entropy"):
    """Global L2 norm of every sample's gradient, plus what is needed to combine them.

    Uses ``||delta_i a_i^T||_F = ||delta_i|| ||a_i||`` so per-sample weight
    gradients are never materialised.
    """
    X = _as_matrix(net, X)
    logits, cache = _forward(net, X)
    losses, d = _loss_and_dlogits(logits, y, loss)
    deltas, _ = _deltas(net, cache, d)
    sq = np.zeros(X.shape[0])
    for a, dk in zip(cache.inputs, deltas):
        dsq = (dk**2).sum(axis=1)
        sq += dsq * (a**2).sum(axis=1) + dsq
    return np.sqrt(sq), losses, cache, deltas


def weighted_grad_sum(cache: _Cache, deltas, weights: np.ndarray) -> list[np.ndarray]:
    """``sum_i weights[i] * grad_i`` from the per-sample deltas."""
    return _param_grads(cache, [dk * weights[:, None] for dk in deltas])


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "cross_entropy"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps_adam <= 0:
            raise ValueError("invalid Adam hyper-parameters")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class SGD:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    """Adam with bias correction; updates ``params`` in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig, params):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps_adam)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)


# (working network, X batch, y batch, batch index array) -> (mean loss, grads)
StepFn = Callable[[Network, np.ndarray, np.ndarray, np.ndarray], tuple[float, list]]


def fit_loop(net: Network, X: np.ndarray, Y: np.ndarray, config: TrainConfig,
             step: StepFn | None = None, seed_label: str = "train/shuffle") -> tuple[Network, History]:
    """Shared mini-batch loop behind every training routine.

    Shuffling comes from ``substream(config.seed, seed_label)``; ``step`` supplies
    the gradients for a batch and defaults to the plain loss gradient. The input
    network is never modified.
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if step is None:
        def step(work, xb, yb, idx):
            loss, grads, _ = loss_and_grads(work, xb, yb, config.loss)
            return loss, grads

    params = [p.copy() for p in net.params()]
    work = net.with_params(params)
    if config.epochs == 0:
        return work, History()
    opt = make_optimizer(config, params)
    rng = substream(config.seed, seed_label)
    batch = min(config.batch_size, n)
    history = History()
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = step(work, X[idx], Y[idx], idx)
            opt.step(grads)
            total += loss * len(idx)
        history.loss.append(total / n)
        history.accuracy.append(_train_accuracy(work, X, Y, config.loss))
    if not all(np.all(np.isfinite(p)) for p in params):
        raise FloatingPointError("training diverged to non-finite parameters")
    return work, history


def _train_accuracy(net, X, Y, loss):
    pred = np.argmax(_forward(net, X)[0], axis=1)
    if loss == "mse":
        target = np.asarray(Y)
        if target.ndim == 1:
            return float("nan")
        return float(np.mean(pred == np.argmax(target, axis=1)))
    return float(np.mean(pred == Y))


def train(net: Network, dataset, config: TrainConfig) -> tuple[Network, History]:
    """Train a copy of ``net`` on ``dataset`` (a LabeledDataset or an ``(X, y)`` pair)."""
    X, y = _unpack(dataset)
    return fit_loop(net, _as_matrix(net, X), y, config)


def _unpack(dataset):
    if isinstance(dataset, tuple):
        X, y = dataset
        return np.asarray(X, dtype=np.float64), np.asarray(y)
    return dataset.X, dataset.y


def accuracy(net: Network, dataset) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    X, y = _unpack(dataset)
    if len(y) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(net, X) == y))
