from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .nn import MLP, BatchNorm, Linear, Module
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    Tape,
    Tensor,
    add,
    batch_norm,
    concat,
    dropout,
    head_dot,
    leaky_relu,
    linear,
    matmul,
    mean_rows,
    mse_loss,
    mul,
    relu,
    scale,
    segment_softmax,
    segment_weighted_sum,
    sub,
    sum_all,
    take_rows,
)
