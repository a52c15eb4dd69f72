"""Dense float64 math and small MLPs with hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class ShapeError(ValueError):
    """Raised when array shapes do not conform."""


class StaleTapeError(ValueError):
    """Raised when a forward tape is replayed against a network it was not built from."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def activate_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    """Derivative of the activation evaluated at ``pre`` (``post`` = activation output)."""
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        # derivative at exactly 0 is taken as 0
        return (pre > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass
class LinearLayer:
    weight: np.ndarray
    bias: np.ndarray
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[1]:
            raise ShapeError(f"bias {self.bias.shape} does not match weight {self.weight.shape}")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(in_dim, out_dim)), np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return matmul(x, self.weight) + self.bias

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for input ``x``; return d/dx."""
        self.grad_weight += x.T @ grad_out
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def zero_grad(self):
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def params(self):
        return [("weight", self.weight, self.grad_weight), ("bias", self.bias, self.grad_bias)]


@dataclass
class Tape:
    """Forward cache: the input to every layer and every pre-activation."""

    dims: tuple
    inputs: list
    pre: list
    output: np.ndarray


class Mlp:
    """Stack of linear layers; the activation sits between layers, never after the last."""

    def __init__(self, layers: list[LinearLayer], activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ShapeError(
                    f"layer {k} outputs {layers[k].out_dim} but layer {k + 1} expects {layers[k + 1].in_dim}"
                )
        self.layers = layers
        self.activation = activation

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, activation: str = "tanh") -> "Mlp":
        layers = [LinearLayer.init(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(layers, activation)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple:
        return tuple([self.in_dim] + [layer.out_dim for layer in self.layers])

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        return mlp_forward(self, x)

    def backward(self, tape: Tape, output_grad) -> np.ndarray:
        return mlp_backward(self, tape, output_grad)

    def __call__(self, x) -> np.ndarray:
        return mlp_forward(self, x)[0]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def params(self):
        out = []
        for k, layer in enumerate(self.layers):
            for name, p, g in layer.params():
                out.append((f"{k}.{name}", p, g))
        return out

    def num_params(self) -> int:
        return sum(p.size for _, p, _ in self.params())


def mlp_forward(net: Mlp, input) -> tuple[np.ndarray, Tape]:
    h = as_matrix(input)
    if h.shape[1] != net.in_dim:
        raise ShapeError(f"input has {h.shape[1]} columns, network expects {net.in_dim}")
    inputs, pre = [], []
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        pre.append(a)
        h = a if k == last else activate(net.activation, a)
    return h, Tape(net.dims, inputs, pre, h)


def mlp_backward(net: Mlp, tape: Tape, output_grad) -> np.ndarray:
    if tape.dims != net.dims or len(tape.inputs) != len(net.layers):
        raise StaleTapeError(f"tape was recorded for dims {tape.dims}, network has {net.dims}")
    g = as_matrix(output_grad)
    if g.shape != tape.output.shape:
        raise ShapeError(f"output_grad {g.shape} does not match forward output {tape.output.shape}")
    last = len(net.layers) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * activate_grad(net.activation, tape.pre[k], tape.inputs[k + 1])
        g = net.layers[k].backward(tape.inputs[k], g)
    return g


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
    """In-place Adam update with bias correction. Returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state must have the same length")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} / gradient {g.shape} / state {m.shape} mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    """Adam over a fixed list of (param, grad) array pairs, updated in place."""

    def __init__(self, params, grads, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.grads = list(grads)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = AdamState.zeros_like(self.params)

    def step(self):
        adam_step(self.params, self.grads, self.state, self.lr, self.betas, self.eps)
