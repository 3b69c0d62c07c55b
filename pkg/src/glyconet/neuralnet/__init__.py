"""Hand-rolled float64 neural net: FCN model, focal loss, Adam, kernel backends."""

from .backend import BACKEND_ENV_VAR, get_kernels, resolve_backend_name, set_threads
from .losses import balanced_alpha, cross_entropy, focal_loss
from .model import (
    DEFAULT_CHANNELS,
    DEFAULT_KERNELS,
    MODEL_FORMAT,
    FcnConfig,
    FcnModel,
    backward,
    forward,
    init_model,
    load_model,
    predict,
    predict_proba,
    save_model,
    softmax,
)
from .optim import Adam

__all__ = [
    "Adam",
    "BACKEND_ENV_VAR",
    "DEFAULT_CHANNELS",
    "DEFAULT_KERNELS",
    "FcnConfig",
    "FcnModel",
    "MODEL_FORMAT",
    "backward",
    "balanced_alpha",
    "cross_entropy",
    "focal_loss",
    "forward",
    "get_kernels",
    "init_model",
    "load_model",
    "predict",
    "predict_proba",
    "resolve_backend_name",
    "save_model",
    "set_threads",
    "softmax",
]
