"""Selective state-space image dehazing with a self-contained numpy engine."""

from .network import DehambaNet, ModelConfig, build_model, param_count
from .tensor import Tape, Tensor, precision

__all__ = [
    "DehambaNet",
    "ModelConfig",
    "Tape",
    "Tensor",
    "build_model",
    "param_count",
    "precision",
]
