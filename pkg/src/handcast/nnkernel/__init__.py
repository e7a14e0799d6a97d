"""Deterministic float64 tensor kernel with reverse-mode differentiation."""

from .layers import ConfigError, attention_block, multi_head_attention, sinusoidal_encoding
from .prng import Prng, derive_seed, fnv1a64, hash_string, mix64
from .tensor import ShapeError, Tensor, concat, gelu, layer_norm, masked_mean, softmax

__all__ = [
    "ConfigError", "Prng", "ShapeError", "Tensor", "attention_block", "concat", "derive_seed",
    "fnv1a64", "gelu", "hash_string", "layer_norm", "masked_mean", "mix64",
    "multi_head_attention", "sinusoidal_encoding", "softmax",
]
