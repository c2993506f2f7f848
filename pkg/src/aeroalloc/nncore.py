"""Small dense-network engine shared by the probe-calibration and wrench models.

Plain numpy, float64 throughout. A Network is a stack of affine layers with
tanh or identity activations; gradients come from a hand-rolled reverse pass
so every training loss in this package is differentiable end to end without
an autodiff framework. Networks are treated as immutable during forward and
backward passes; only `step` mutates parameters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = "nncore-v1"
ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    """One affine layer y = act(W x + b); weight stored (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self) -> None:
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match weight rows "
                f"{self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]


@dataclass
class GradientTape:
    """Per-parameter gradient buffers aligned with a Network's layout.

    `input_grad` (gradient with respect to the network input) is carried along
    so multi-head models can chain a head's pass into a shared trunk.
    """

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray

    def matches(self, net: Network) -> bool:
        if len(self.weight_grads) != len(net.layers):
            return False
        return all(
            gw.shape == layer.weight.shape and gb.shape == layer.bias.shape
            for gw, gb, layer in zip(self.weight_grads, self.bias_grads, net.layers)
        )


def init_network(
    widths: Sequence[int],
    seed: int,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> Network:
    """Build a network with seeded uniform init in +-sqrt(6/(fan_in+fan_out))."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        act = output_activation if i == len(widths) - 2 else hidden_activation
        layers.append(
            Layer(
                weight=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
                bias=np.zeros(fan_out),
                activation=act,
            )
        )
    return Network(layers)


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{what} has shape {np.shape(x)}, expected (..., {dim})")
    return arr, single


def _activations(net: Network, x_batch: np.ndarray) -> list[np.ndarray]:
    acts = [x_batch]
    for layer in net.layers:
        z = acts[-1] @ layer.weight.T + layer.bias
        acts.append(np.tanh(z) if layer.activation == "tanh" else z)
    return acts


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a vector (d,) or a batch (n, d)."""
    batch, single = _as_batch(x, net.input_dim, "input")
    out = _activations(net, batch)[-1]
    return out[0] if single else out


def backward(net: Network, x: np.ndarray, upstream: np.ndarray) -> GradientTape:
    """Gradients of <upstream, forward(net, x)> with respect to all parameters.

    Batched inputs sum the contraction over rows, which is exactly what a
    mean-type loss needs once the upstream carries the 1/n factor.
    """
    x_batch, _ = _as_batch(x, net.input_dim, "input")
    up_batch, _ = _as_batch(upstream, net.output_dim, "upstream")
    if up_batch.shape[0] != x_batch.shape[0]:
        raise ValueError(
            f"batch sizes differ: input {x_batch.shape[0]}, upstream {up_batch.shape[0]}"
        )
    acts = _activations(net, x_batch)
    n_layers = len(net.layers)
    weight_grads: list[np.ndarray] = [np.empty(0)] * n_layers
    bias_grads: list[np.ndarray] = [np.empty(0)] * n_layers
    g = up_batch
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "tanh":
            g = g * (1.0 - acts[i + 1] ** 2)
        weight_grads[i] = g.T @ acts[i]
        bias_grads[i] = g.sum(axis=0)
        g = g @ layer.weight
    input_grad = g[0] if np.asarray(x).ndim == 1 else g
    return GradientTape(weight_grads, bias_grads, input_grad)


def huber(e, delta):
    """Huber penalty: e^2/2 inside |e| <= delta, linear delta*(|e|-delta/2) outside.

    `delta` may be a positive scalar or an array broadcastable against `e`.
    """
    delta_arr = np.asarray(delta, dtype=np.float64)
    if np.any(delta_arr <= 0.0):
        raise ValueError("huber delta must be positive")
    e_arr = np.asarray(e, dtype=np.float64)
    a = np.abs(e_arr)
    out = np.where(a <= delta_arr, 0.5 * e_arr * e_arr, delta_arr * (a - 0.5 * delta_arr))
    return float(out) if np.isscalar(e) or e_arr.ndim == 0 else out


def huber_grad(e, delta):
    """d huber / d e, the clipped residual; saturates at +-delta."""
    delta_arr = np.asarray(delta, dtype=np.float64)
    if np.any(delta_arr <= 0.0):
        raise ValueError("huber delta must be positive")
    e_arr = np.asarray(e, dtype=np.float64)
    out = np.clip(e_arr, -delta_arr, delta_arr)
    return float(out) if np.isscalar(e) or e_arr.ndim == 0 else out


@dataclass
class OptimizerState:
    """Adam state: bias-corrected first/second moments per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def init_optimizer(
    net: Network,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        count=0,
        m_weights=[np.zeros_like(l.weight) for l in net.layers],
        v_weights=[np.zeros_like(l.weight) for l in net.layers],
        m_biases=[np.zeros_like(l.bias) for l in net.layers],
        v_biases=[np.zeros_like(l.bias) for l in net.layers],
    )


def step(opt: OptimizerState, net: Network, tape: GradientTape) -> Network:
    """One Adam update in place; returns the same Network for chaining."""
    if not tape.matches(net):
        raise ValueError("gradient tape does not match network layout")
    if len(opt.m_weights) != len(net.layers):
        raise ValueError("optimizer state does not match network layout")
    opt.count += 1
    c1 = 1.0 - opt.beta1**opt.count
    c2 = 1.0 - opt.beta2**opt.count
    for i, layer in enumerate(net.layers):
        for param, grad, m, v in (
            (layer.weight, tape.weight_grads[i], opt.m_weights[i], opt.v_weights[i]),
            (layer.bias, tape.bias_grads[i], opt.m_biases[i], opt.v_biases[i]),
        ):
            m *= opt.beta1
            m += (1.0 - opt.beta1) * grad
            v *= opt.beta2
            v += (1.0 - opt.beta2) * grad * grad
            param -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net


def flat_params(net: Network) -> np.ndarray:
    """All parameters as one vector, layer by layer, weight rows then bias."""
    chunks = []
    for layer in net.layers:
        chunks.append(layer.weight.ravel())
        chunks.append(layer.bias.ravel())
    return np.concatenate(chunks)


def set_flat_params(net: Network, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype=np.float64)
    offset = 0
    for layer in net.layers:
        n_w = layer.weight.size
        layer.weight[...] = vec[offset : offset + n_w].reshape(layer.weight.shape)
        offset += n_w
        n_b = layer.bias.size
        layer.bias[...] = vec[offset : offset + n_b]
        offset += n_b
    if offset != vec.size:
        raise ValueError(f"parameter vector length {vec.size}, expected {offset}")


def flat_grads(tape: GradientTape) -> np.ndarray:
    chunks = []
    for gw, gb in zip(tape.weight_grads, tape.bias_grads):
        chunks.append(gw.ravel())
        chunks.append(gb.ravel())
    return np.concatenate(chunks)


def network_to_dict(net: Network) -> dict:
    return {
        "version": FORMAT_VERSION,
        "widths": net.widths,
        "activations": [layer.activation for layer in net.layers],
        "weights": [layer.weight.ravel(order="C").tolist() for layer in net.layers],
        "biases": [layer.bias.tolist() for layer in net.layers],
    }


def network_from_dict(doc: dict) -> Network:
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format {doc.get('version')!r}")
    widths = doc["widths"]
    layers = []
    for i, act in enumerate(doc["activations"]):
        fan_in, fan_out = widths[i], widths[i + 1]
        weight = np.asarray(doc["weights"][i], dtype=np.float64).reshape(fan_out, fan_in)
        bias = np.asarray(doc["biases"][i], dtype=np.float64)
        layers.append(Layer(weight=weight, bias=bias, activation=act))
    return Network(layers)


def save_network(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), sort_keys=True))


def load_network(path: str | Path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
