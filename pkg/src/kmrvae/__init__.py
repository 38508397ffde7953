"""Trainable video codec that splits clips into keyframe, motion and
residual streams, encodes each with its own Gaussian encoder and decodes
them together with one shared 3D decoder."""

from .errors import ConfigError, FormatError, ShapeError, TrainingAborted
from .autodiff import Tensor, no_grad
from .backend import active_name as active_kernel_backend

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "ShapeError",
    "TrainingAborted",
    "Tensor",
    "no_grad",
    "active_kernel_backend",
    "__version__",
]
