"""Small dense-tensor engine: reverse-mode autodiff, layers, Adam, weight files."""
from . import tensor as ops
from .io import load_weights, save_weights
from .layers import (
    dense,
    gru_cell,
    init_attention,
    init_dense,
    init_gru,
    init_mlp,
    mlp,
    multi_head_attention,
)
from .params import ParameterStore, adam_step, fine_tune, glorot
from .tensor import Tape, Tensor, forward_backward, precision

__all__ = [
    "ops", "Tape", "Tensor", "ParameterStore", "forward_backward", "precision",
    "adam_step", "fine_tune", "glorot", "dense", "gru_cell", "mlp",
    "multi_head_attention", "init_attention", "init_dense", "init_gru", "init_mlp",
    "save_weights", "load_weights",
]
