"""Reverse-mode autodiff engine and parameter checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .engine import (
    Array,
    Tape,
    add,
    as_array,
    concat,
    dropout,
    gather_rows,
    gelu,
    layernorm_rows,
    matmul,
    mse,
    multiply,
    reshape,
    scale,
    slice,  # noqa: A004 - canonical op name
    softmax_rows,
    transpose,
)

__all__ = [
    "Array",
    "Tape",
    "add",
    "as_array",
    "concat",
    "dropout",
    "gather_rows",
    "gelu",
    "layernorm_rows",
    "load_checkpoint",
    "matmul",
    "mse",
    "multiply",
    "reshape",
    "save_checkpoint",
    "scale",
    "slice",
    "softmax_rows",
    "transpose",
]
