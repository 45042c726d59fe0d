from .ops import (
    activate,
    conv1d,
    conv1d_residual,
    gru_cell,
    huber,
    huber_elementwise,
    linear,
    mlp,
    segment_focal_loss,
    segment_max,
    softmax_focal_loss,
)
from .params import MLP, Conv1dResidual, GRUCell, Linear, ParamStore, StepLR, adam_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    exp,
    gather_rows,
    log,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    stack,
    sub,
    pad_time,
    take,
    tanh,
)
