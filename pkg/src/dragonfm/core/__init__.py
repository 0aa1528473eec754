from .tensor import (
    Tensor,
    no_grad,
    grad_enabled,
    default_fd_step,
    add,
    sub,
    mul,
    div,
    neg,
    matmul,
    exp,
    log,
    tanh,
    sigmoid,
    sqrt,
    abs_,
    hypot,
    maximum,
    relu,
    gelu,
    sum_,
    mean_,
    reshape,
    swapaxes,
    broadcast_to,
    concat,
    narrow,
    softmax,
    layer_norm,
    embedding_lookup,
    take_last,
    overlap_add,
    reverse_grad,
    directional_derivative,
    fd_gradient_at,
)
from .attention import AttentionMask, masked_attention
from .nn import Module, Linear, LayerNorm, Embedding, init_normal, init_zeros, init_ones
from .checkpoint import write_checkpoint, read_checkpoint

__all__ = [
    "Tensor", "no_grad", "grad_enabled", "default_fd_step",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "tanh",
    "sigmoid", "sqrt", "abs_", "hypot", "maximum", "relu", "gelu", "sum_", "mean_",
    "reshape", "swapaxes", "broadcast_to", "concat", "narrow", "softmax",
    "layer_norm", "embedding_lookup", "take_last", "overlap_add",
    "reverse_grad", "directional_derivative", "fd_gradient_at",
    "AttentionMask", "masked_attention",
    "Module", "Linear", "LayerNorm", "Embedding",
    "init_normal", "init_zeros", "init_ones",
    "write_checkpoint", "read_checkpoint",
]
