"""Minimal tensor engine: reverse-mode autodiff, layers, Adam, checkpoints."""

from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat,
    default_dtype,
    dropout,
    embedding_lookup,
    layer_norm,
    masked_fill,
    matmul,
    mul,
    precision,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    slice_,
    smooth_l1,
    softmax_lastdim,
    sub,
    tanh,
    transpose,
)
from .nn import MLP, Embedding, LayerNorm, Linear, Module
from .optim import AdamState, adam_step

__all__ = [
    "Tape", "Tensor", "add", "backward", "concat", "default_dtype", "dropout", "embedding_lookup",
    "layer_norm", "masked_fill", "matmul", "mul", "precision", "reduce_mean", "reduce_sum", "relu",
    "reshape", "scale", "slice_", "smooth_l1", "softmax_lastdim", "sub", "tanh", "transpose",
    "MLP", "Embedding", "LayerNorm", "Linear", "Module", "AdamState", "adam_step",
]
