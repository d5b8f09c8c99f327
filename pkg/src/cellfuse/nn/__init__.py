"""Differentiable building blocks on top of torch tensors and autograd."""
import torch

from .checkpoint import load_checkpoint, read_container, save_checkpoint, write_container
from .gradcheck import GradCheckReport, grad_check
from .layers import (attention_forward, layer_norm, linear, linear_attention, mlp_forward,
                     multihead_attention, transformer_block)
from .optim import adam_step, add_grads, check_finite
from .params import ParamStore

# Deterministic single-threaded kernels; parallelism is across circuits.
torch.set_num_threads(1)

__all__ = [
    "ParamStore", "linear", "mlp_forward", "layer_norm", "attention_forward", "multihead_attention",
    "linear_attention", "transformer_block", "adam_step", "add_grads", "check_finite", "grad_check",
    "GradCheckReport", "save_checkpoint", "load_checkpoint", "write_container", "read_container",
]
