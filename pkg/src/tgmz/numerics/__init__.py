"""Dense tensors, reverse-mode autodiff, layers and optimizers."""
from .gradcheck import GradCheckReport, grad_check
from .layers import init_linear, init_mlp, mlp
from .optim import AdamState, adam_step, gradient_step
from .params import GROUPS, ParamStore, clone_params, global_norm, overlay
from .tensor import (
    BatchNormState,
    Tape,
    Tensor,
    activation,
    add,
    affine,
    as_tensor,
    backward,
    batch_norm,
    concat,
    detach,
    leaky_relu,
    log_softmax,
    matmul,
    mean,
    mse,
    mul,
    neg,
    relu,
    scale,
    sigmoid,
    softmax_cross_entropy,
    sub,
    sum_all,
    tanh,
    value_and_grad,
)
