"""Minimal differentiable computation core: tensors, blocks, optimizer, checkpoints."""

from . import tensor
from .blocks import (
    Embedding,
    FiLMGenerator,
    Linear,
    LayerNorm,
    MLP,
    Module,
    MultiHeadAttention,
    TransformerLayer,
    film,
    sinusoidal_time_embedding,
    truncated_normal,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamW, OptimizerConfig, schedule_lr
from .tensor import NoGraph, Tensor, as_tensor, no_grad

__all__ = [
    "AdamW",
    "Embedding",
    "FiLMGenerator",
    "Linear",
    "LayerNorm",
    "MLP",
    "Module",
    "MultiHeadAttention",
    "NoGraph",
    "OptimizerConfig",
    "Tensor",
    "TransformerLayer",
    "as_tensor",
    "film",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
    "schedule_lr",
    "sinusoidal_time_embedding",
    "tensor",
    "truncated_normal",
]
