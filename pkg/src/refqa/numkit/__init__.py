"""Dense float64 primitives with reverse-mode gradients."""

from .gradcheck import GradCheckReport, grad_check
from .ops import (
    Layer,
    dot,
    dropout,
    gelu,
    layer_norm,
    linear,
    mlp_forward,
    relu,
    sigmoid,
    softplus,
)
from .params import ParamRegistry, glorot_uniform
from .rng import Rng
from .tensor import Tensor, add, as_tensor, concat, mean, mul, reshape, sub, total

__all__ = [
    "GradCheckReport",
    "Layer",
    "ParamRegistry",
    "Rng",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "dot",
    "dropout",
    "gelu",
    "glorot_uniform",
    "grad_check",
    "layer_norm",
    "linear",
    "mean",
    "mlp_forward",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softplus",
    "sub",
    "total",
]
