"""Differentiable layers and activations built on :mod:`refqa.numkit.tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_node

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
# smallest positive normal double; keeps softplus strictly positive where exp underflows
_TINY = np.finfo(np.float64).tiny


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x W^T + b`` over the last axis of ``x``; ``W`` has shape (m, n)."""
    x = as_tensor(x)
    if W.data.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: input shape {x.shape} does not conform to weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: bias shape {b.shape} does not conform to weight shape {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ W.data
        g2 = g.reshape(-1, W.shape[0])
        gW = g2.T @ x.data.reshape(-1, W.shape[1])
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return make_node(y, parents, backward)


def dot(x, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` with vector ``w``."""
    x = as_tensor(x)
    if w.data.ndim != 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"dot: input shape {x.shape} does not conform to vector shape {w.shape}")
    y = x.data @ w.data

    def backward(g):
        g = np.asarray(g)
        return g[..., None] * w.data, (g[..., None] * x.data).reshape(-1, w.shape[0]).sum(axis=0)

    return make_node(y, (x, w), backward)


def gelu(x) -> Tensor:
    """Exact GeLU, ``x * Phi(x)`` with the erf-based normal CDF."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
    return make_node(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x) -> Tensor:
    """``log(1 + e^x)`` evaluated without overflow; strictly positive."""
    x = as_tensor(x)
    y = np.maximum(np.logaddexp(0.0, x.data), _TINY)
    return make_node(y, (x,), lambda g: (g * expit(x.data),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then apply the affine."""
    x = as_tensor(x)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm: input shape {x.shape} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, n)
        return gx, (flat * xhat.reshape(-1, n)).sum(axis=0), flat.sum(axis=0)

    return make_node(y, (x, gain, bias), backward)


def dropout(x, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


ACTIVATIONS = {
    "identity": lambda t: t,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
}


@dataclass
class Layer:
    """One ``linear + activation`` stage of an MLP."""

    W: Tensor
    b: Tensor | None = None
    activation: str = "identity"


def mlp_forward(x, layers, dropout_rate: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Apply ``layers`` in order; dropout follows every layer but the last."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {dropout_rate}")
    h = as_tensor(x)
    for i, layer in enumerate(layers):
        h = ACTIVATIONS[layer.activation](linear(h, layer.W, layer.b))
        if i < len(layers) - 1:
            h = dropout(h, dropout_rate, training, rng)
    return h
