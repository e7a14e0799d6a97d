import math

import numpy as np
import pytest

from handcast.nnkernel.gradcheck import check_attention_block, check_linear
from handcast.nnkernel.layers import (ConfigError, attention_block, attention_block_shapes, init_parameters,
                                      linear_shapes, multi_head_attention, sinusoidal_encoding)
from handcast.nnkernel.prng import Prng
from handcast.nnkernel.tensor import Tensor


def block_params(dim, seed=0):
    return init_parameters(attention_block_shapes("blk", dim), Prng(seed))


def test_sinusoidal_interleaving():
    pe = sinusoidal_encoding(np.array([0, 3]), 6)
    assert np.array_equal(pe[0], [0, 1, 0, 1, 0, 1])
    for i in range(3):
        w = 10000.0 ** (-2 * i / 6)
        assert pe[1, 2 * i] == pytest.approx(math.sin(3 * w), abs=1e-15)
        assert pe[1, 2 * i + 1] == pytest.approx(math.cos(3 * w), abs=1e-15)


def test_init_follows_declared_kinds():
    shapes = linear_shapes("a", 16, 4) + [("q", (3, 4), "query"), ("ln.g", (4,), "ln_gain"),
                                          ("ln.b", (4,), "ln_bias")]
    p = init_parameters(shapes, Prng(1))
    assert np.max(np.abs(p["a.W"].data)) <= 0.25
    assert np.array_equal(p["a.b"].data, np.zeros(4))
    assert np.array_equal(p["ln.g"].data, np.ones(4))
    assert np.array_equal(p["ln.b"].data, np.zeros(4))
    assert 0 < np.std(p["q"].data) < 0.06
    again = init_parameters(shapes, Prng(1))
    assert all(np.array_equal(p[k].data, again[k].data) for k in p)


def test_residual_identity_when_value_and_ffn_zeroed(rng):
    p = block_params(8)
    for name in ("blk.attn.v.W", "blk.attn.v.b", "blk.attn.o.b", "blk.ffn.fc2.W", "blk.ffn.fc2.b"):
        p[name].data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 8)))
    kv = Tensor(rng.normal(size=(2, 5, 8)))
    assert np.array_equal(attention_block(x, kv, p, "blk", 2).data, x.data)


def test_single_key_closed_form(rng):
    D = 4
    p = block_params(D, seed=3)
    xq = Tensor(rng.normal(size=(1, 3, D)))
    xkv = rng.normal(size=(1, 1, D))
    out = multi_head_attention(xq, Tensor(xkv), p, "blk.attn", heads=1).data
    # one key: weights are all 1, so every query receives W_o(W_v kv + b_v) + b_o
    v = xkv[0, 0] @ p["blk.attn.v.W"].data + p["blk.attn.v.b"].data
    expect = v @ p["blk.attn.o.W"].data + p["blk.attn.o.b"].data
    assert np.allclose(out[0], np.broadcast_to(expect, (3, D)), atol=1e-12, rtol=0)


def test_key_permutation_invariance(rng):
    p = block_params(6, seed=5)
    x = Tensor(rng.normal(size=(1, 2, 6)))
    kv = rng.normal(size=(1, 7, 6))
    perm = rng.permutation(7)
    a = attention_block(x, Tensor(kv), p, "blk", 1).data
    b = attention_block(x, Tensor(kv[:, perm]), p, "blk", 1).data
    assert np.max(np.abs(a - b)) < 1e-9


def test_key_mask_removes_keys(rng):
    p = block_params(4, seed=2)
    x = Tensor(rng.normal(size=(1, 2, 4)))
    kv = rng.normal(size=(1, 5, 4))
    mask = np.array([[True, True, False, True, False]])
    a = multi_head_attention(x, Tensor(kv), p, "blk.attn", 2, mask).data
    kv2 = kv.copy()
    kv2[0, [2, 4]] = 1e3
    b = multi_head_attention(x, Tensor(kv2), p, "blk.attn", 2, mask).data
    c = multi_head_attention(x, Tensor(kv[:, [0, 1, 3]]), p, "blk.attn", 2).data
    assert np.array_equal(a, b)
    assert np.max(np.abs(a - c)) < 1e-12


def test_heads_must_divide_width():
    p = block_params(6)
    x = Tensor(np.zeros((1, 2, 6)))
    with pytest.raises(ConfigError):
        attention_block(x, None, p, "blk", 4)


def test_linear_gradcheck():
    assert check_linear() < 1e-6


def test_attention_block_gradcheck():
    assert check_attention_block() < 1e-4
