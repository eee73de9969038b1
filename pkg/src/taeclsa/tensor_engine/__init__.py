"""Dense float64 numerics with tape-based reverse-mode differentiation."""

from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    ACTIVATIONS,
    BatchNormStats,
    activation,
    add,
    attention,
    batchnorm1d,
    binary_cross_entropy,
    conv1d,
    cross_entropy,
    dense,
    dropout,
    embedding_lookup,
    last_time,
    lstm_forward,
    max_time,
    maxpool1d,
    mean_time,
    mse_loss,
    scale,
    self_attention,
    sigmoid,
    softmax_rows,
    sum_squares,
    weighted_sum,
)
from .optim import AdamState, adam_step
from .tensor import DTYPE, ParamSet, Tape, Tensor, as_tensor, backward, current_tape

__all__ = [name for name in dir() if not name.startswith("_")]
