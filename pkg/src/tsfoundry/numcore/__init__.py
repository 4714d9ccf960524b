"""Differentiable tensor core: autodiff engine, ops, AdamW, grad checking.

Tensors are immutable once a forward pass completes; a GradTape is built
per backward pass and never shared across threads.
"""

from .gradcheck import check_gradients, finite_difference_grads, max_rel_error
from .ops import (
    NORM_EPS,
    adaptive_max_pool,
    adaptive_mean_pool,
    conv1d_same,
    cross_entropy,
    cross_entropy_rows,
    gelu,
    linear_resize,
    linear_resize_array,
    normalize,
    segment_bounds,
    silu,
    softmax_rows,
)
from .optim import AdamWState, adamw_step
from .tensor import (
    GradTape,
    Tensor,
    amax,
    broadcast_to,
    concat,
    grad_of,
    no_grad,
    pick_rows,
    pow_const,
    sigmoid,
    texp,
    tlog,
    tmean,
    tsum,
    ttanh,
)

__all__ = [
    "AdamWState",
    "GradTape",
    "NORM_EPS",
    "Tensor",
    "adamw_step",
    "adaptive_max_pool",
    "adaptive_mean_pool",
    "amax",
    "broadcast_to",
    "check_gradients",
    "concat",
    "conv1d_same",
    "cross_entropy",
    "cross_entropy_rows",
    "finite_difference_grads",
    "gelu",
    "grad_of",
    "linear_resize",
    "linear_resize_array",
    "max_rel_error",
    "no_grad",
    "normalize",
    "pick_rows",
    "pow_const",
    "segment_bounds",
    "sigmoid",
    "silu",
    "softmax_rows",
    "texp",
    "tlog",
    "tmean",
    "tsum",
    "ttanh",
]
