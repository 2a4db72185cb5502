"""Small deterministic numpy network engine with analytic gradients."""

from .gradcheck import (
    GradReport,
    grad_check,
    layer_grad_check,
    numeric_input_grad,
    rel_error,
    softmax_ce_check,
    standard_cases,
)
from .layers import (
    NORM_EPS,
    Conv1d,
    CosineConv1d,
    Dense,
    Layer,
    MaxPool1d,
    OneMaxPool,
    ReLU,
    SoftmaxCrossEntropy,
    log_softmax,
    one_max_pool_backward,
    one_max_pool_forward,
    softmax,
)
from .model import ModelGraph
from .optim import SGD, project_unit_rows, sgd_step

__all__ = [
    "NORM_EPS",
    "Conv1d",
    "CosineConv1d",
    "Dense",
    "GradReport",
    "Layer",
    "MaxPool1d",
    "ModelGraph",
    "OneMaxPool",
    "ReLU",
    "SGD",
    "SoftmaxCrossEntropy",
    "grad_check",
    "layer_grad_check",
    "log_softmax",
    "numeric_input_grad",
    "one_max_pool_backward",
    "one_max_pool_forward",
    "project_unit_rows",
    "rel_error",
    "sgd_step",
    "softmax",
    "softmax_ce_check",
    "standard_cases",
]
