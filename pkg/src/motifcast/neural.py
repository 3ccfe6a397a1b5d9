"""Minimal differentiable building blocks with exact manual gradients:
dense stacks, layer normalization, AdamW with decoupled decay, and a cosine
learning-rate schedule. Everything runs in float64; every backward pass is
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError

__all__ = [
    "Dense",
    "DenseStack",
    "AdamW",
    "dense_forward",
    "dense_backward",
    "stack_forward",
    "stack_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "init_dense",
    "init_stack",
    "cosine_lr",
    "clip_global_norm",
    "softmax",
    "sigmoid",
]

ACTIVATIONS = ("identity", "sigmoid", "leaky_relu", "gelu")

_LEAKY_SLOPE = 0.01
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
_LN_EPS = 1e-5


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _act_forward(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "leaky_relu":
        return np.where(z > 0, z, _LEAKY_SLOPE * z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "gelu":
        u = _GELU_C * (z + _GELU_A * z**3)
        return 0.5 * z * (1.0 + np.tanh(u))
    raise ConfigError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, _LEAKY_SLOPE)
    if name == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if name == "gelu":
        u = _GELU_C * (z + _GELU_A * z**3)
        t = np.tanh(u)
        return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * _GELU_C * (
            1.0 + 3.0 * _GELU_A * z**2
        )
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class Dense:
    """One affine layer with an elementwise activation."""

    weight: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ConfigError("dense layer shape mismatch")


@dataclass
class DenseStack:
    """Chained dense layers with an optional terminal layer normalization."""

    layers: list[Dense]
    layer_norm: bool = False
    ln_gain: np.ndarray | None = None
    ln_shift: np.ndarray | None = None

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ConfigError("consecutive layer dimensions must chain")
        if self.layer_norm:
            width = self.layers[-1].weight.shape[1]
            if width < 2:
                raise ConfigError("layer norm needs width >= 2")
            if self.ln_gain is None:
                self.ln_gain = np.ones(width, dtype=np.float64)
            if self.ln_shift is None:
                self.ln_shift = np.zeros(width, dtype=np.float64)

    @property
    def d_in(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.layers[-1].weight.shape[1]

    def param_items(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}.{i}.weight", layer.weight
            yield f"{prefix}.{i}.bias", layer.bias
        if self.layer_norm:
            yield f"{prefix}.ln.gain", self.ln_gain
            yield f"{prefix}.ln.shift", self.ln_shift

    def set_param(self, key: str, value: np.ndarray) -> None:
        parts = key.split(".")
        if parts[0] == "ln":
            if parts[1] == "gain":
                self.ln_gain = value
            else:
                self.ln_shift = value
            return
        idx = int(parts[0])
        if parts[1] == "weight":
            self.layers[idx].weight = value
        else:
            self.layers[idx].bias = value


def dense_forward(layer: Dense, x: np.ndarray):
    if x.shape[-1] != layer.weight.shape[0]:
        raise DataError(
            f"input width {x.shape[-1]} does not match layer d_in "
            f"{layer.weight.shape[0]}"
        )
    z = x @ layer.weight + layer.bias
    return _act_forward(layer.activation, z), (x, z)


def dense_backward(layer: Dense, cache, d_out: np.ndarray):
    x, z = cache
    if d_out.shape != z.shape:
        raise DataError("stale cache: gradient shape mismatch")
    dz = d_out * _act_grad(layer.activation, z)
    d_weight = x.T @ dz
    d_bias = dz.sum(axis=0)
    d_x = dz @ layer.weight.T
    return d_weight, d_bias, d_x


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, shift: np.ndarray):
    """Normalize over the feature (last) dimension: (x - mean)/sqrt(var + eps)."""
    if x.shape[-1] < 2:
        raise DataError("layer norm needs width >= 2")
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * inv
    return xhat * gain + shift, (xhat, inv, gain)


def layer_norm_backward(cache, d_out: np.ndarray):
    xhat, inv, gain = cache
    d_gain = (d_out * xhat).sum(axis=tuple(range(d_out.ndim - 1)))
    d_shift = d_out.sum(axis=tuple(range(d_out.ndim - 1)))
    d_xhat = d_out * gain
    m1 = d_xhat.mean(axis=-1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=-1, keepdims=True)
    d_x = (d_xhat - m1 - xhat * m2) * inv
    return d_gain, d_shift, d_x


def stack_forward(stack: DenseStack, x: np.ndarray):
    caches = []
    out = x
    for layer in stack.layers:
        out, cache = dense_forward(layer, out)
        caches.append(cache)
    ln_cache = None
    if stack.layer_norm:
        out, ln_cache = layer_norm_forward(out, stack.ln_gain, stack.ln_shift)
    return out, (caches, ln_cache)


def stack_backward(stack: DenseStack, cache, d_out: np.ndarray, prefix: str):
    """Exact reverse-mode gradients; returns ({name: grad}, d_input)."""
    caches, ln_cache = cache
    grads: dict[str, np.ndarray] = {}
    grad = d_out
    if stack.layer_norm:
        d_gain, d_shift, grad = layer_norm_backward(ln_cache, grad)
        grads[f"{prefix}.ln.gain"] = d_gain
        grads[f"{prefix}.ln.shift"] = d_shift
    for i in range(len(stack.layers) - 1, -1, -1):
        d_w, d_b, grad = dense_backward(stack.layers[i], caches[i], grad)
        grads[f"{prefix}.{i}.weight"] = d_w
        grads[f"{prefix}.{i}.bias"] = d_b
    return grads, grad


def init_dense(rng: np.random.Generator, d_in: int, d_out: int, activation: str) -> Dense:
    """Uniform fan-in scaling: He-style for leaky_relu/gelu, Xavier-style
    for sigmoid/identity."""
    if activation in ("leaky_relu", "gelu"):
        limit = math.sqrt(6.0 / d_in)
    else:
        limit = math.sqrt(6.0 / (d_in + d_out))
    weight = rng.uniform(-limit, limit, size=(d_in, d_out))
    bias = np.zeros(d_out, dtype=np.float64)
    return Dense(weight=weight, bias=bias, activation=activation)


def init_stack(
    rng: np.random.Generator,
    dims: list[int],
    activations: list[str],
    layer_norm: bool = False,
) -> DenseStack:
    if len(dims) != len(activations) + 1:
        raise ConfigError("need one activation per layer")
    layers = [
        init_dense(rng, dims[i], dims[i + 1], activations[i])
        for i in range(len(activations))
    ]
    return DenseStack(layers=layers, layer_norm=layer_norm)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for key in grads:
            grads[key] = grads[key] * scale
    return norm


@dataclass
class AdamW:
    """Decoupled weight-decay Adam with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def step(
        self,
        params: dict[str, np.ndarray],
        grads: dict[str, np.ndarray],
        lr: float | None = None,
    ) -> None:
        """Update params in place. Raises NumericError on non-finite grads."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for key, p in params.items():
            g = grads[key]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {key!r}")
            if key not in self._m:
                self._m[key] = np.zeros_like(p)
                self._v[key] = np.zeros_like(p)
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p -= lr * (m_hat / (np.sqrt(v_hat) + self.eps))
            if self.weight_decay > 0.0:
                p -= lr * self.weight_decay * p
