"""Reverse-mode differentiable numerics: tensors, small NN blocks, Adam,
checkpoints, and a finite-difference verification harness."""

from .checkpoint import CheckpointError, apply_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, finite_diff_grad, primitive_suite
from .nn import GRUParams, add_gru_params, gru_cell, gru_params, linear, uniform_init
from .optim import AdamState, adam_step
from .tensor import (
    InfeasibleSoftmaxError,
    Parameter,
    ParameterStore,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    constant,
    frobenius_sq,
    gather_rows,
    is_grad_enabled,
    layer_norm,
    log,
    matmul,
    mean_all,
    mul,
    mul_rows,
    mul_scalar,
    no_grad,
    outer,
    relu,
    reshape,
    row_sum,
    scale,
    segsum_rows,
    sigmoid,
    slice_cols,
    softmax_masked,
    sub,
    sum_all,
    take_elem,
    take_per_row,
    tanh,
    transpose,
    xlogx,
)
