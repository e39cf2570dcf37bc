"""Small fully connected networks with hand-written backprop and Adam.

Inputs are row-major batches: ``x`` has shape ``(batch, n_in)`` (a 1-D vector is
treated as a batch of one and the output is squeezed back).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "identity", "leaky_relu")
LEAK = 0.2


class StaleCacheError(RuntimeError):
    pass


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    if name == "identity":
        return a
    if name == "leaky_relu":
        return np.where(a > 0, a, LEAK * a)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, a, h):
    """Derivative of the activation given pre-activation ``a`` and output ``h``."""
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "identity":
        return np.ones_like(a)
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, LEAK)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    widths: list
    weights: list            # weights[i] has shape (widths[i+1], widths[i])
    biases: list
    activations: list
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        n = len(self.widths) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n):
            raise ValueError("layer lists disagree in length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[i + 1], self.widths[i]) or b.shape != (self.widths[i + 1],):
                raise ValueError(f"layer {i} shape mismatch")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], list(self.activations))

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations),
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(list(d["widths"]), [np.asarray(w, dtype=float) for w in d["weights"]],
                   [np.asarray(b, dtype=float) for b in d["biases"]], list(d["activations"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Mlp":
        return cls.from_dict(json.loads(s))


def glorot_init(widths, seed=None, activations=None) -> Mlp:
    """Glorot-uniform weights, zero biases. Hidden layers default to tanh, output to identity."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError("widths must list at least two positive sizes")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(widths) - 1
    if activations is None:
        activations = ["tanh"] * (n - 1) + ["identity"]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(widths, weights, biases, list(activations))


@dataclass
class ForwardCache:
    inputs: list      # input to each layer
    pre: list         # pre-activations
    outputs: list     # activated outputs
    version: int
    squeeze: bool


def forward(net: Mlp, x, return_cache: bool = True):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.n_in:
        raise ValueError(f"input width {h.shape[1]} != {net.n_in}")
    ins, pres, outs = [], [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        ins.append(h)
        a = h @ w.T + b
        h = _act(act, a)
        pres.append(a)
        outs.append(h)
    y = h[0] if squeeze else h
    if not return_cache:
        return y
    return y, ForwardCache(ins, pres, outs, net.version, squeeze)


def predict(net: Mlp, x) -> np.ndarray:
    return forward(net, x, return_cache=False)


def backward(net: Mlp, cache: ForwardCache, grad_out):
    """Backpropagate ``grad_out`` = dL/d(output).

    Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
    ``net.params()`` and summed over the batch.
    """
    if cache.version != net.version:
        raise StaleCacheError("network changed since the forward pass")
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    grads = [None] * (2 * len(net.weights))
    for i in reversed(range(len(net.weights))):
        g = g * _act_grad(net.activations[i], cache.pre[i], cache.outputs[i])
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i]
    return grads, (g[0] if cache.squeeze else g)


def jacobian(net: Mlp, x, columns=None) -> np.ndarray:
    """d(output)/d(input) at a single input, one backward row per output.

    ``columns`` optionally selects input columns to keep.
    """
    x = np.asarray(x, dtype=float)
    k = net.n_out
    _, cache = forward(net, np.broadcast_to(x, (k, x.size)))
    _, gin = backward(net, cache, np.eye(k))
    return gin if columns is None else gin[:, columns]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(net: Mlp) -> AdamState:
    return AdamState([np.zeros_like(p) for p in net.params()],
                     [np.zeros_like(p) for p in net.params()])


def adam_step(net: Mlp, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999,
              eps=1e-8) -> Mlp:
    """One Adam descent step, applied in place; returns ``net``."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(net.params(), grads, state.m, state.v):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    net.version += 1
    return net
