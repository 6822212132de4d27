"""Dense feed-forward attribute detector with exact backpropagation.

The network is a stack of affine layers. Hidden layers use ReLU or tanh, the
last layer produces logits that are squashed by an elementwise sigmoid into
per-attribute confidence scores. Everything is float64 numpy; a ``Matrix`` is
simply a 2-D ``np.ndarray``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATION = "sigmoid"
CHECKPOINT_MAGIC = "SSDAL-MODEL 1"


@dataclass(frozen=True)
class NetworkConfig:
    layer_sizes: Tuple[int, ...]
    hidden_activation: str = "relu"
    init_seed: int = 0
    init_scale_rule: str = "uniform_xavier"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError(f"need at least 2 layer sizes, got {self.layer_sizes}")
        if any(s <= 0 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.init_scale_rule != "uniform_xavier":
            raise ConfigError(f"unknown init rule {self.init_scale_rule!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ConfigError("init_seed must be a 64-bit unsigned integer")

    @property
    def num_attributes(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str


@dataclass
class NetworkParams:
    layers: List[Layer]
    config: NetworkConfig

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def equals(self, other: "NetworkParams") -> bool:
        """Bitwise equality of every weight and bias."""
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and a.weight.shape == b.weight.shape
            and np.array_equal(a.weight, b.weight)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class ForwardTrace:
    """Per-layer values for one batch.

    ``activations[0]`` is the input, ``activations[i + 1]`` the output of layer
    ``i``; ``pre[i]`` is the affine output of layer ``i`` before its activation.
    """

    activations: List[np.ndarray]
    pre: List[np.ndarray]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]

    @property
    def scores(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class GradientBundle:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientBundle":
        return cls(
            [np.zeros_like(l.weight) for l in params.layers],
            [np.zeros_like(l.bias) for l in params.layers],
        )

    def scaled(self, factor: float) -> "GradientBundle":
        return GradientBundle([w * factor for w in self.weights], [b * factor for b in self.biases])

    def added(self, other: "GradientBundle") -> "GradientBundle":
        return GradientBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ConfigError(f"unknown activation {name!r}")


def init_network(config: NetworkConfig) -> NetworkParams:
    """Uniform Xavier weights, zero biases, fully determined by ``init_seed``."""
    rng = np.random.default_rng(config.init_seed)
    sizes = config.layer_sizes
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-s, s, size=(fan_out, fan_in))
        act = OUTPUT_ACTIVATION if i == len(sizes) - 2 else config.hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return NetworkParams(layers, config)


def as_matrix(x, cols: Optional[int] = None, name: str = "inputs") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"{name} has {m.shape[1]} columns, expected {cols}")
    return m


def forward(params: NetworkParams, inputs) -> ForwardTrace:
    x = as_matrix(inputs, params.input_dim)
    activations = [x]
    pre = []
    for layer in params.layers:
        z = x @ layer.weight.T + layer.bias
        x = _activate(layer.activation, z)
        pre.append(z)
        activations.append(x)
    return ForwardTrace(activations, pre)


def _backprop(params: NetworkParams, trace: ForwardTrace, top: int, delta: np.ndarray) -> GradientBundle:
    # delta: dL/d(pre-activation) of layer `top`; layers above `top` get zero gradient
    grads = GradientBundle.zeros_like(params)
    for i in range(top, -1, -1):
        layer = params.layers[i]
        grads.weights[i] = delta.T @ trace.activations[i]
        grads.biases[i] = delta.sum(axis=0)
        if i > 0:
            below = params.layers[i - 1]
            d_post = delta @ layer.weight
            delta = d_post * _activation_grad(below.activation, trace.pre[i - 1], trace.activations[i])
    return grads


def backward(params: NetworkParams, trace: ForwardTrace, dL_dlogits) -> GradientBundle:
    """Exact gradients for any scalar loss whose gradient w.r.t. the logits is given."""
    d = np.asarray(dL_dlogits, dtype=np.float64)
    if d.shape != trace.logits.shape:
        raise ShapeError(f"dL_dlogits shape {d.shape} != logits shape {trace.logits.shape}")
    return _backprop(params, trace, len(params.layers) - 1, d)


def backward_from_activation(params: NetworkParams, trace: ForwardTrace, layer: int, dL_dact) -> GradientBundle:
    """Backpropagate a gradient given w.r.t. the output of hidden layer ``layer``.

    Layers above ``layer`` receive zero gradient.
    """
    if not 0 <= layer < len(params.layers):
        raise ShapeError(f"layer index {layer} out of range")
    d = np.asarray(dL_dact, dtype=np.float64)
    if d.shape != trace.activations[layer + 1].shape:
        raise ShapeError(f"gradient shape {d.shape} != activation shape {trace.activations[layer + 1].shape}")
    lyr = params.layers[layer]
    delta = d * _activation_grad(lyr.activation, trace.pre[layer], trace.activations[layer + 1])
    return _backprop(params, trace, layer, delta)


def sgd_step(params: NetworkParams, grads: GradientBundle, lr: float,
             frozen: Sequence[int] = ()) -> NetworkParams:
    """Return ``params - lr * grads``; layers listed in ``frozen`` are copied untouched."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads.weights) != len(params.layers):
        raise ShapeError("gradient bundle does not match network depth")
    new_layers = []
    for i, (layer, gw, gb) in enumerate(zip(params.layers, grads.weights, grads.biases)):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        if i in frozen:
            new_layers.append(Layer(layer.weight.copy(), layer.bias.copy(), layer.activation))
        else:
            new_layers.append(Layer(layer.weight - lr * gw, layer.bias - lr * gb, layer.activation))
    return NetworkParams(new_layers, params.config)


def sigmoid_cross_entropy(logits, targets) -> Tuple[float, np.ndarray]:
    """Mean-over-batch, sum-over-attributes binary cross entropy on logits."""
    z = as_matrix(logits, name="logits")
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != z.shape:
        raise ShapeError(f"targets shape {t.shape} != logits shape {z.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("targets must be binary")
    batch = z.shape[0]
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = float(per.sum() / batch)
    return loss, (sigmoid(z) - t) / batch


LossEvaluator = Callable[[NetworkParams], Tuple[float, GradientBundle]]


def gradient_check(loss_evaluator: LossEvaluator, params: NetworkParams, epsilon: float = 1e-5,
                   max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_evaluator(params)`` must return ``(loss, GradientBundle)``. When
    ``max_coords`` is given, only that many coordinates (drawn with ``seed``)
    are checked.
    """
    if not 0 < epsilon <= 1e-3:
        raise ValidationError(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    loss0, analytic = loss_evaluator(params)
    loss0b, _ = loss_evaluator(params)
    if loss0 != loss0b:
        raise ValidationError("loss evaluator is not deterministic")

    coords = [(li, kind, idx)
              for li, layer in enumerate(params.layers)
              for kind, arr in (("w", layer.weight), ("b", layer.bias))
              for idx in np.ndindex(arr.shape)]
    if max_coords is not None and max_coords < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    probe = params.copy()
    worst = 0.0
    for li, kind, idx in coords:
        arr = probe.layers[li].weight if kind == "w" else probe.layers[li].bias
        orig = arr[idx]
        arr[idx] = orig + epsilon
        lp, _ = loss_evaluator(probe)
        arr[idx] = orig - epsilon
        lm, _ = loss_evaluator(probe)
        arr[idx] = orig
        fd = (lp - lm) / (2.0 * epsilon)
        an = (analytic.weights[li] if kind == "w" else analytic.biases[li])[idx]
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-12)
        worst = max(worst, err)
    return worst


def save_checkpoint(params: NetworkParams, path) -> None:
    lines = [CHECKPOINT_MAGIC, str(len(params.layers))]
    for layer in params.layers:
        rows, cols = layer.weight.shape
        lines.append(f"{rows} {cols} {layer.activation}")
        for row in layer.weight:
            lines.append(" ".join(format(v, ".17g") for v in row))
        lines.append(" ".join(format(v, ".17g") for v in layer.bias))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> NetworkParams:
    """Read a checkpoint; the returned config has ``init_seed`` 0 (seeds are not stored)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not an SSDAL model checkpoint")
    try:
        count = int(text[1])
        pos = 2
        layers = []
        for _ in range(count):
            rows, cols, act = text[pos].split()
            rows, cols = int(rows), int(cols)
            pos += 1
            w = np.array([[float(v) for v in text[pos + r].split()] for r in range(rows)], dtype=np.float64)
            pos += rows
            b = np.array([float(v) for v in text[pos].split()], dtype=np.float64)
            pos += 1
            if w.shape != (rows, cols) or b.shape != (rows,):
                raise ValidationError(f"{path}: malformed layer block")
            layers.append(Layer(w.reshape(rows, cols), b, act))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{path}: malformed checkpoint ({exc})") from exc
    sizes = [layers[0].weight.shape[1]] + [l.weight.shape[0] for l in layers]
    for prev, nxt in zip(layers[:-1], layers[1:]):
        if nxt.weight.shape[1] != prev.weight.shape[0]:
            raise ValidationError(f"{path}: layer dimensions do not chain")
    hidden = layers[0].activation if len(layers) > 1 else "relu"
    return NetworkParams(layers, NetworkConfig(tuple(sizes), hidden_activation=hidden))
