"""Hand-rolled differentiable layer kernel and training helpers."""

from .layers import (
    Conv1d,
    Conv2d,
    Deconv2d,
    Dense,
    Net,
    PointwiseConv,
    Relu,
    Sigmoid,
    Tanh,
    backward,
    forward,
    glorot_uniform,
    power_normalize,
    power_normalize_grad,
)
from .train import (GradCheckReport, LossMonitor, ParameterSet, grad_check,
                    sgd_step)
from .checkpoint import assign_params, load_params, save_params

__all__ = [
    "Conv1d", "Conv2d", "Deconv2d", "Dense", "Net", "PointwiseConv",
    "Relu", "Sigmoid", "Tanh", "backward", "forward", "glorot_uniform",
    "power_normalize", "power_normalize_grad",
    "GradCheckReport", "LossMonitor", "ParameterSet", "grad_check", "sgd_step",
    "assign_params", "load_params", "save_params",
]
