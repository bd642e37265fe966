"""Minimal float64 autodiff, layers and optimiser."""
from .tensor import Tape, Tensor, backward
from .layers import ParamStore, gru_cell, mlp_forward
from .optim import Adam

__all__ = ["Adam", "ParamStore", "Tape", "Tensor", "backward", "gru_cell", "mlp_forward"]
