"""Feedforward regression networks trained with Adam.

Hidden layers use tanh followed (in training mode) by inverted dropout; the
output unit is linear.  Weights start from a truncated normal with standard
deviation 1/sqrt(fan_in) and biases start at zero.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTrainingSet,
    LengthMismatch,
    SerializationError,
    ShapeMismatch,
    StaleCache,
)
from .serial import read_npz, write_npz

INPUT_DIM = 125


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    hidden_sizes: tuple
    dropout_rate: float = 0.0
    input_dim: int = INPUT_DIM
    output_dim: int = 1

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes) + 2

    def to_dict(self) -> dict:
        return {"name": self.name, "hidden_sizes": list(self.hidden_sizes),
                "dropout_rate": self.dropout_rate, "input_dim": self.input_dim,
                "output_dim": self.output_dim}


def _preset(name, hidden, rate):
    return name, ArchitectureSpec(name, tuple(hidden), rate)


PRESETS = dict([
    _preset("DNN8_1", (100, 100, 50, 50, 10, 10), 0.5),
    _preset("DNN8_2", (100, 100, 70, 70, 50, 50), 0.5),
    _preset("DNN8_3", (120, 120, 70, 70, 20, 20), 0.5),
    _preset("DNN8_4", (120, 120, 80, 80, 40, 40), 0.5),
    _preset("DNN5_1", (100, 50, 10), 0.5),
    _preset("DNN5_2", (100, 70, 50), 0.5),
    _preset("DNN5_3", (120, 70, 20), 0.5),
    _preset("DNN5_4", (120, 80, 40), 0.5),
    _preset("NN3_DO_1", (244,), 0.5),
    _preset("NN3_DO_2", (322,), 0.5),
    _preset("NN3_DO_3", (354,), 0.5),
    _preset("NN3_DO_4", (399,), 0.5),
    _preset("NN3_1", (70,), 0.0),
    _preset("NN3_2", (80,), 0.0),
    _preset("NN3_3", (100,), 0.0),
    _preset("NN3_4", (120,), 0.0),
])

PRESET_GROUPS = {
    "DNN8": [f"DNN8_{k}" for k in range(1, 5)],
    "DNN5": [f"DNN5_{k}" for k in range(1, 5)],
    "NN3_DO": [f"NN3_DO_{k}" for k in range(1, 5)],
    "NN3": [f"NN3_{k}" for k in range(1, 5)],
}


def param_count(arch: ArchitectureSpec) -> int:
    sizes = arch.layer_sizes
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class NetworkState:
    arch: ArchitectureSpec
    weights: list
    biases: list
    m_w: list
    m_b: list
    v_w: list
    v_b: list
    step: int = 0
    seed: int = 0

    def parameters(self) -> list:
        return [*self.weights, *self.biases]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class ForwardCache:
    inputs: list      # input to each layer
    tanh: list        # tanh output of each hidden layer (before dropout)
    masks: list       # dropout multipliers (already divided by keep prob), or None
    output: np.ndarray
    step: int


@dataclass
class Gradients:
    weights: list
    biases: list


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) samples, redrawing any value beyond two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_network(arch: ArchitectureSpec, seed: int = 0) -> NetworkState:
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights = [truncated_normal(rng, (a, b), 1.0 / np.sqrt(a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    zeros = lambda ps: [np.zeros_like(p) for p in ps]  # noqa: E731
    return NetworkState(arch, weights, biases, zeros(weights), zeros(biases),
                        zeros(weights), zeros(biases), 0, seed)


def _check_input(net: NetworkState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.arch.input_dim:
        raise DimensionMismatch(f"expected (n, {net.arch.input_dim}) inputs, got {X.shape}")
    return X


def forward(net: NetworkState, X, train: bool = False, rng: np.random.Generator | None = None,
            masks: list | None = None):
    """Run the network; returns ``(predictions, cache)``.

    In training mode dropout masks are drawn from ``rng`` unless ``masks`` is
    given, in which case those exact masks are reused.
    """
    X = _check_input(net, X)
    if len(X) == 0:
        raise DimensionMismatch("empty batch")
    rate = net.arch.dropout_rate
    keep = 1.0 - rate
    use_dropout = train and rate > 0
    if use_dropout and masks is None and rng is None:
        raise ValueError("training-mode dropout needs an rng or fixed masks")
    inputs, tanhs, used_masks = [], [], []
    h = X
    n_hidden = len(net.weights) - 1
    for layer in range(n_hidden):
        inputs.append(h)
        t = np.tanh(h @ net.weights[layer] + net.biases[layer])
        tanhs.append(t)
        if use_dropout:
            if masks is not None:
                mask = masks[layer]
            else:
                mask = (rng.random(t.shape) < keep) / keep
            used_masks.append(mask)
            h = t * mask
        else:
            used_masks.append(None)
            h = t
    inputs.append(h)
    out = (h @ net.weights[-1] + net.biases[-1])[:, 0]
    return out, ForwardCache(inputs, tanhs, used_masks, out, net.step)


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise LengthMismatch(f"predictions {p.shape} vs targets {t.shape}")
    return float(np.mean((t - p) ** 2))


def backward(net: NetworkState, cache: ForwardCache, targets) -> Gradients:
    """Exact gradient of the batch MSE with the cached dropout masks held fixed."""
    if cache.step != net.step:
        raise StaleCache("forward cache predates the latest parameter update")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != cache.output.shape:
        raise LengthMismatch(f"targets {y.shape} vs predictions {cache.output.shape}")
    n = len(y)
    delta = (2.0 / n) * (cache.output - y)[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        gw[layer] = cache.inputs[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        dh = delta @ net.weights[layer].T
        mask = cache.masks[layer - 1]
        if mask is not None:
            dh = dh * mask
        t = cache.tanh[layer - 1]
        delta = dh * (1.0 - t * t)
    return Gradients(gw, gb)


def adam_step(net: NetworkState, grads: Gradients, config: TrainConfig) -> NetworkState:
    """In-place Adam update with bias correction; returns ``net``."""
    for p, g in zip(net.parameters(), [*grads.weights, *grads.biases]):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient {g.shape} does not match parameter {p.shape}")
    net.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** net.step
    c2 = 1.0 - b2 ** net.step
    lr = config.learning_rate
    groups = ((net.weights, net.m_w, net.v_w, grads.weights),
              (net.biases, net.m_b, net.v_b, grads.biases))
    for params, ms, vs, gs in groups:
        for p, m, v, g in zip(params, ms, vs, gs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return net


def predict(net: NetworkState, X) -> np.ndarray:
    return forward(net, X, train=False)[0]


@dataclass
class TrainResult:
    net: NetworkState
    loss_history: list = field(default_factory=list)

    @property
    def final_mse(self) -> float:
        return self.loss_history[-1]


def train(net: NetworkState, X, y, batches, config: TrainConfig) -> TrainResult:
    """Minibatch Adam over the given batches (one cross-section each).

    Batch order is reshuffled every epoch from ``config.seed``.  The loss
    history holds the inference-mode MSE over the full set before training and
    after each epoch.
    """
    X = _check_input(net, X)
    y = np.asarray(y, dtype=np.float64)
    batches = [np.asarray(b) for b in batches if len(b)]
    if len(y) == 0 or not batches:
        raise EmptyTrainingSet("no training examples")
    rng = np.random.default_rng(config.seed)
    history = [mse_loss(predict(net, X), y)]
    for _ in range(config.epochs):
        for b in rng.permutation(len(batches)):
            rows = batches[b]
            out, cache = forward(net, X[rows], train=True, rng=rng)
            adam_step(net, backward(net, cache, y[rows]), config)
        history.append(mse_loss(predict(net, X), y))
    return TrainResult(net, history)


def save_network(net: NetworkState, path) -> None:
    arrays = {}
    for name, group in (("w", net.weights), ("b", net.biases), ("mw", net.m_w),
                        ("mb", net.m_b), ("vw", net.v_w), ("vb", net.v_b)):
        for k, a in enumerate(group):
            arrays[f"{name}{k}"] = a
    write_npz(path, "crossret.mlp", {"arch": net.arch.to_dict(), "step": net.step, "seed": net.seed},
              arrays)


def load_network(path) -> NetworkState:
    header, data = read_npz(path, "crossret.mlp")
    try:
        a = header["arch"]
        arch = ArchitectureSpec(a["name"], tuple(a["hidden_sizes"]), a["dropout_rate"],
                                a["input_dim"], a["output_dim"])
        n = len(arch.layer_sizes) - 1
        get = lambda name: [data[f"{name}{k}"] for k in range(n)]  # noqa: E731
        return NetworkState(arch, get("w"), get("b"), get("mw"), get("mb"), get("vw"), get("vb"),
                            header["step"], header["seed"])
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{path}: incomplete network dump ({e})") from None
