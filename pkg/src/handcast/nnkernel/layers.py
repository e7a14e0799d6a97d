"""Pre-layer-norm attention blocks built on the autodiff kernel.

Parameters live in flat ``dict[str, Tensor]`` stores keyed by dotted names;
every builder here takes the store and a name prefix.
"""

from __future__ import annotations

import math

import numpy as np

from .prng import Prng
from .tensor import Tensor, concat, gelu, layer_norm, matmul, reshape, softmax, transpose, scale

NEG_INF = -1e9


class ConfigError(ValueError):
    pass


def sinusoidal_encoding(positions, dim: int) -> np.ndarray:
    """Interleaved sine/cosine encoding, base 10000.

    Channel 2i holds sin(pos / 10000^(2i/dim)) and channel 2i+1 the matching
    cosine. Returns an array of shape positions.shape + (dim,).
    """
    pos = np.asarray(positions, dtype=np.float64)[..., None]
    i = np.arange(dim) // 2
    freq = np.power(10000.0, -(2.0 * i) / dim)
    angle = pos * freq
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


# parameter declaration -------------------------------------------------------

def linear_shapes(prefix: str, fan_in: int, fan_out: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [(f"{prefix}.W", (fan_in, fan_out), "weight"), (f"{prefix}.b", (fan_out,), "bias")]


def layernorm_shapes(prefix: str, dim: int):
    return [(f"{prefix}.g", (dim,), "ln_gain"), (f"{prefix}.b", (dim,), "ln_bias")]


def attention_shapes(prefix: str, dim: int):
    out = layernorm_shapes(f"{prefix}.ln", dim)
    for proj in ("q", "k", "v", "o"):
        out += linear_shapes(f"{prefix}.{proj}", dim, dim)
    return out


def ffn_shapes(prefix: str, dim: int, mult: int = 4):
    return (layernorm_shapes(f"{prefix}.ln", dim)
            + linear_shapes(f"{prefix}.fc1", dim, mult * dim)
            + linear_shapes(f"{prefix}.fc2", mult * dim, dim))


def init_parameters(shapes, rng: Prng, query_std: float = 0.02) -> dict[str, Tensor]:
    """Initialize parameters in declaration order from one stream.

    Weights ~ U(-s, s) with s = sqrt(1/fan_in); biases 0; layer-norm gain 1;
    ``query`` kinds ~ N(0, query_std^2).
    """
    params: dict[str, Tensor] = {}
    for name, shape, kind in shapes:
        if kind == "weight":
            s = math.sqrt(1.0 / shape[0])
            value = rng.uniform(shape, -s, s)
        elif kind == "ln_gain":
            value = np.ones(shape)
        elif kind == "query":
            value = rng.normal(shape, 0.0, query_std)
        else:
            value = np.zeros(shape)
        params[name] = Tensor(value, requires_grad=True)
    return params


# forward builders --------------------------------------------------------------

def linear(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return matmul(x, params[f"{prefix}.W"]) + params[f"{prefix}.b"]


def affine_layer_norm(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return layer_norm(x) * params[f"{prefix}.g"] + params[f"{prefix}.b"]


def multi_head_attention(xq: Tensor, xkv: Tensor, params: dict[str, Tensor], prefix: str,
                         heads: int, key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over (batch, length, dim) inputs.

    ``key_mask`` is a boolean (batch, L_k) array; false keys get zero weight.
    """
    B, Lq, D = xq.shape
    Lk = xkv.shape[1]
    if D % heads:
        raise ConfigError(f"width {D} is not divisible by {heads} heads")
    dh = D // heads

    def split(t: Tensor, L: int) -> Tensor:
        return transpose(reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split(linear(xq, params, f"{prefix}.q"), Lq)
    k = split(linear(xkv, params, f"{prefix}.k"), Lk)
    v = split(linear(xkv, params, f"{prefix}.v"), Lk)
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]
        scores = scores + bias
    weights = softmax(scores)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (B, Lq, D))
    return linear(ctx, params, f"{prefix}.o")


def attention_sublayer(x: Tensor, kv: Tensor | None, params, prefix: str, heads: int,
                       key_mask=None) -> Tensor:
    """x + MHA(LN(x), kv); self-attention when kv is None."""
    h = affine_layer_norm(x, params, f"{prefix}.ln")
    source = h if kv is None else kv
    return x + multi_head_attention(h, source, params, prefix, heads, key_mask)


def ffn_sublayer(x: Tensor, params, prefix: str) -> Tensor:
    h = affine_layer_norm(x, params, f"{prefix}.ln")
    return x + linear(gelu(linear(h, params, f"{prefix}.fc1")), params, f"{prefix}.fc2")


def attention_block_shapes(prefix: str, dim: int):
    return attention_shapes(f"{prefix}.attn", dim) + ffn_shapes(f"{prefix}.ffn", dim)


def attention_block(x: Tensor, kv: Tensor | None, params, prefix: str, heads: int,
                    key_mask=None) -> Tensor:
    """Pre-LN block: x + MHA(LN(x), kv), then + FFN(LN(.)) with 4x GELU width."""
    if x.shape[-1] % heads:
        raise ConfigError(f"width {x.shape[-1]} is not divisible by {heads} heads")
    out = attention_sublayer(x, kv, params, f"{prefix}.attn", heads, key_mask)
    return ffn_sublayer(out, params, f"{prefix}.ffn")


def stack_tokens(parts) -> Tensor:
    return concat(parts, axis=1)
