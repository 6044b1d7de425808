"""Reverse-mode differentiable primitives, parameters and optimizer."""
from .functional import (attend, attention_weights, concat, conv1d_dilated, glu, head_mean,
                         layer_norm, linear, mhsa, relu, sigmoid, silu, sinusoidal_pos_enc,
                         soft_clip, step_table, time_pos_enc)
from .gradcheck import grad_check
from .optim import Adam, clip_grad_norm, fill_missing_grads
from .params import ParamStore, load_checkpoint, read_manifest, save_checkpoint, uniform_fan_in
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "Adam", "ParamStore", "Tensor", "as_tensor", "attend", "attention_weights",
    "clip_grad_norm", "concat", "conv1d_dilated", "fill_missing_grads", "glu", "grad_check",
    "head_mean", "layer_norm", "linear", "load_checkpoint", "mhsa", "no_grad",
    "read_manifest", "relu", "save_checkpoint", "sigmoid", "silu", "sinusoidal_pos_enc",
    "soft_clip", "step_table", "time_pos_enc", "uniform_fan_in",
]
