"""Numeric substrate: tensors with reverse-mode gradients, kernels, losses, Adam."""
from .adam import AdamState, adam_step
from .losses import l1_loss, si_snr_loss
from .ops import (
    add,
    causal_conv1d,
    concat_channels,
    conv1x1,
    down_conv2,
    leaky_relu,
    lstm_sequence,
    lstm_step,
    select_channel,
    slice_channels,
    sum_all,
    upsample2_nn,
)
from .tensor import GradTensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "AdamState",
    "GradTensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "causal_conv1d",
    "concat_channels",
    "conv1x1",
    "down_conv2",
    "grad_enabled",
    "l1_loss",
    "leaky_relu",
    "lstm_sequence",
    "lstm_step",
    "no_grad",
    "select_channel",
    "si_snr_loss",
    "slice_channels",
    "sum_all",
    "upsample2_nn",
]
