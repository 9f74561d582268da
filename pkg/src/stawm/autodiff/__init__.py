from .tensor import (
    GraphError, Tensor, add, as_tensor, backward, clamp, concat, detach, elementwise, exp, getitem,
    log, log_softmax, make_result, matmul, mean, mul, negate, no_grad, outer, reduce, relu6, reshape,
    sigmoid, stack, sub, sum, swap_last, tanh, transpose,
)
from .functional import conv2d, conv2d_transpose, dropout, flatten, lstm_cell_step
from .nn import IDENTITY_AFFINE, Conv2d, ConvTranspose2d, Linear, LSTMCell, Module, Parameter, init_params
from .optim import Adam, OptimizerState, adam_step, clip_gradients, global_norm, lr_schedule_step
