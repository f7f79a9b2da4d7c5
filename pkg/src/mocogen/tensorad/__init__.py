"""Reverse-mode autodiff over numpy f64 arrays, AdamW, and checkpoint I/O."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, scalarize
from .optim import AdamWConfig, OptimizerState, clip_and_step, clip_grads, global_norm
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    embedding,
    getitem,
    layer_norm,
    matmul,
    mse,
    mul,
    no_record,
    reshape,
    scale,
    silu,
    softmax,
    transpose,
)

__all__ = [
    "AdamWConfig", "CheckpointError", "NonFiniteError", "OptimizerState", "ShapeError", "Tape", "Tensor",
    "add", "as_tensor", "backward", "clip_and_step", "clip_grads", "concat", "embedding", "getitem",
    "global_norm", "grad_check", "layer_norm", "load_checkpoint", "matmul", "mse", "mul", "no_record",
    "reshape", "save_checkpoint", "scalarize", "scale", "silu", "softmax", "transpose",
]
