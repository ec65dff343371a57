from .gradcheck import grad_check, grad_check_detail, numeric_gradient, relative_error
from .ops import (
    add,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    dense,
    global_avg_pool,
    gru_step,
    gru_step_backward,
    maxpool2d,
    maxpool2d_backward,
    multiclass_hinge,
    relu,
    softmax_cross_entropy,
)
from .optim import sgd_momentum_update
from .snapshot import load_snapshot, save_snapshot

__all__ = [
    "add",
    "concat_channels",
    "conv2d_backward",
    "conv2d_forward",
    "dense",
    "global_avg_pool",
    "grad_check",
    "grad_check_detail",
    "gru_step",
    "gru_step_backward",
    "load_snapshot",
    "maxpool2d",
    "maxpool2d_backward",
    "multiclass_hinge",
    "numeric_gradient",
    "relative_error",
    "relu",
    "save_snapshot",
    "sgd_momentum_update",
    "softmax_cross_entropy",
]
