"""Minimal dense-network machinery: forward, backward, Adam, soft target updates.

Everything is float64 numpy. Networks are plain containers of (W, b) layers;
forward/backward never mutate them, so a net can be shared read-only across
workers. Parameter updates (adam_step, soft_update) mutate in place and must
be serialized by the caller.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")

CHECKPOINT_VERSION = 1

# %.17g round-trips IEEE doubles exactly, which keeps save/load bit-exact.
_FLOAT_FMT = "%.17g"


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class DenseNet:
    layers: list[Layer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def widths(self) -> list[int]:
        return [self.in_dim] + [l.W.shape[0] for l in self.layers]

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


def init_dense(widths: list[int], activations: list[str], rng: np.random.Generator) -> DenseNet:
    """Build a net with weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if len(activations) != len(widths) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(widths[:-1], widths[1:], activations):
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        layers.append(Layer(W, b, act))
    return DenseNet(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        # subgradient 0 at exactly 0
        return (z > 0.0).astype(np.float64)
    if act == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on x of shape (..., in_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != net input {net.in_dim}")
    h = x
    for layer in net.layers:
        h = _activate(h @ layer.W.T + layer.b, layer.activation)
    return h


def forward_cache(net: DenseNet, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != net input {net.in_dim}")
    inputs = []
    preacts = []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.W.T + layer.b
        preacts.append(z)
        h = _activate(z, layer.activation)
    return h, (inputs, preacts)


def backward(net: DenseNet, cache, out_grad: np.ndarray):
    """Gradients of sum(output * out_grad) w.r.t. parameters and input.

    out_grad has the output's shape; leading batch axes are summed into the
    parameter gradients. Returns ([(dW, db) per layer], input_grad).
    """
    inputs, preacts = cache
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != preacts[-1].shape:
        raise ValueError(f"out_grad shape {g.shape} != output shape {preacts[-1].shape}")
    param_grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        gz = g * _activate_grad(preacts[i], layer.activation)
        x = inputs[i]
        gz2 = gz.reshape(-1, gz.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        dW = gz2.T @ x2
        db = gz2.sum(axis=0)
        param_grads[i] = (dW, db)
        g = gz @ layer.W
    return param_grads, g


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(net: DenseNet, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for layer in net.layers:
        state.m.append((np.zeros_like(layer.W), np.zeros_like(layer.b)))
        state.v.append((np.zeros_like(layer.W), np.zeros_like(layer.b)))
    return state


def adam_step(net: DenseNet, grads, state: AdamState):
    """One Adam update (with bias correction), in place. Returns (net, state)."""
    if len(grads) != len(net.layers):
        raise ValueError("gradient count does not match layer count")
    for i, (dW, db) in enumerate(grads):
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise FloatingPointError(f"non-finite gradient at layer {i}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, layer in enumerate(net.layers):
        for param, grad, m, v in ((layer.W, grads[i][0], state.m[i][0], state.v[i][0]),
                                  (layer.b, grads[i][1], state.m[i][1], state.v[i][1])):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            mhat = m / bc1
            vhat = v / bc2
            param -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return net, state


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> DenseNet:
    """target <- tau*source + (1-tau)*target, elementwise, in place."""
    if target.widths() != source.widths():
        raise ValueError("architecture mismatch in soft_update")
    for lt, ls in zip(target.layers, source.layers):
        if lt.activation != ls.activation:
            raise ValueError("architecture mismatch in soft_update")
        lt.W *= 1.0 - tau
        lt.W += tau * ls.W
        lt.b *= 1.0 - tau
        lt.b += tau * ls.b
    return target


def save_net(net: DenseNet) -> str:
    """Serialize to text; load_net(save_net(net)) is bit-exact."""
    out = io.StringIO()
    out.write(f"format_version {CHECKPOINT_VERSION}\n")
    out.write(f"layers {len(net.layers)}\n")
    for layer in net.layers:
        out.write(f"layer {layer.W.shape[1]} {layer.W.shape[0]} {layer.activation}\n")
    for layer in net.layers:
        out.write(" ".join(_FLOAT_FMT % w for w in layer.W.ravel()) + "\n")
        out.write(" ".join(_FLOAT_FMT % b for b in layer.b) + "\n")
    return out.getvalue()


def load_net(text: str) -> DenseNet:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("format_version"):
        raise ValueError("missing format_version header")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    n_layers = int(lines[1].split()[1])
    specs = []
    for i in range(n_layers):
        _, n_in, n_out, act = lines[2 + i].split()
        specs.append((int(n_in), int(n_out), act))
    layers = []
    pos = 2 + n_layers
    for n_in, n_out, act in specs:
        W = np.array([float(t) for t in lines[pos].split()]).reshape(n_out, n_in)
        b = np.array([float(t) for t in lines[pos + 1].split()])
        pos += 2
        layers.append(Layer(W, b, act))
    return DenseNet(layers)
