"""Deterministic float64 numerical engine with reverse-mode gradients."""

from .gradcheck import GradCheckReport, grad_check, run_named_check, STANDARD_CHECKS
from .ops import (
    AttentionConfig,
    LnParams,
    MlpParams,
    MsaParams,
    init_ln,
    init_mlp,
    init_msa,
    layer_norm,
    linear,
    mlp,
    msa,
)
from .optim import Adam
from .tensor import (
    Param,
    Tensor,
    add,
    attention_core,
    ce_loss,
    concat,
    conv2d,
    expand,
    gather_rows,
    gelu,
    matmul,
    mse_loss,
    mul,
    reshape,
    scale,
    scatter_rows,
    sigmoid,
    softmax,
    sum_all,
    transpose,
)

__all__ = [
    "Adam",
    "AttentionConfig",
    "GradCheckReport",
    "LnParams",
    "MlpParams",
    "MsaParams",
    "Param",
    "STANDARD_CHECKS",
    "Tensor",
    "add",
    "attention_core",
    "ce_loss",
    "concat",
    "conv2d",
    "expand",
    "gather_rows",
    "gelu",
    "grad_check",
    "init_ln",
    "init_mlp",
    "init_msa",
    "layer_norm",
    "linear",
    "matmul",
    "mlp",
    "msa",
    "mse_loss",
    "mul",
    "reshape",
    "run_named_check",
    "scale",
    "scatter_rows",
    "sigmoid",
    "softmax",
    "sum_all",
    "transpose",
]
