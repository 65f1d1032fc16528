"""Minimal float64 neural-network stack with hand-written backward passes."""

from .layers import (
    BatchNorm1d,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    Linear,
    Module,
    Parameter,
    ReLU,
    Sequential,
    Sigmoid,
    conv2d_backward,
    conv2d_forward,
    conv_transpose2d_backward,
    conv_transpose2d_forward,
    relu,
    sigmoid,
)
from .losses import bce_loss, multitask_loss, smooth_l1, softmax, softmax_ce_loss
from .models import CrnHead, MaskHead, RpnHead, RpnOutput, ToyBackbone
from .optim import sgd_step, zero_grad
from .weights import WeightFormatError, load_weights, save_weights

__all__ = [
    "BatchNorm1d",
    "Conv2d",
    "ConvTranspose2d",
    "CrnHead",
    "InstanceNorm2d",
    "Linear",
    "MaskHead",
    "Module",
    "Parameter",
    "ReLU",
    "RpnHead",
    "RpnOutput",
    "Sequential",
    "Sigmoid",
    "ToyBackbone",
    "WeightFormatError",
    "bce_loss",
    "conv2d_backward",
    "conv2d_forward",
    "conv_transpose2d_backward",
    "conv_transpose2d_forward",
    "load_weights",
    "multitask_loss",
    "relu",
    "save_weights",
    "sgd_step",
    "sigmoid",
    "smooth_l1",
    "softmax",
    "softmax_ce_loss",
    "zero_grad",
]
