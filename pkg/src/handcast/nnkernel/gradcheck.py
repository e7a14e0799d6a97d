"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as tt
from .layers import attention_block, attention_block_shapes, init_parameters, linear, linear_shapes
from .prng import Prng
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    floor = max(1e-8, 1e-3 * max|n|) keeps entries that are ~0 in both from
    dominating through round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.size == 0:
        return 0.0
    floor = max(1e-8, 1e-3 * float(np.max(np.abs(numeric))))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(f: Callable[[], float], array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def grad_check(readout: Callable[[], Tensor], inputs: dict[str, Tensor], step: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``readout()`` against central differences.

    ``readout`` rebuilds the graph from the current values of ``inputs`` and
    returns a scalar tensor. The error is pooled over all inputs so the
    floor in :func:`relative_error` reflects the scale of the whole check.
    Inputs the readout never touches count as gradient 0, so a constant
    readout yields error 0.
    """
    for t in inputs.values():
        t.grad = None
        t.requires_grad = True
    out = readout()
    if out.requires_grad:
        out.backward()
    analytic, numeric = [], []
    for t in inputs.values():
        analytic.append((t.grad if t.grad is not None else np.zeros_like(t.data)).ravel())
        numeric.append(numeric_gradient(lambda: float(readout().data), t.data, step).ravel())
    if not analytic:
        return 0.0
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def random_readout(out: Tensor, rng: Prng) -> Callable[[Tensor], Tensor]:
    weights = rng.normal(out.shape)
    return lambda t: tt.sum_(tt.mul(t, weights))


def _op_cases(rng: Prng):
    """(name, input tensors, forward) triples covering every kernel op."""
    a = Tensor(rng.normal((2, 3, 4)))
    b = Tensor(rng.normal((2, 3, 4)))
    row = Tensor(rng.normal((4,)))
    m1 = Tensor(rng.normal((2, 3, 4)))
    m2 = Tensor(rng.normal((4, 5)))
    c1 = Tensor(rng.normal((2, 3)))
    c2 = Tensor(rng.normal((2, 2)))
    x4 = Tensor(rng.normal((2, 3, 2, 4)))
    mask = rng.uniform((2, 3, 4)) > 0.3
    return [
        ("add", {"a": a, "row": row}, lambda p: p["a"] + p["row"]),
        ("subtract", {"a": a, "b": b}, lambda p: p["a"] - p["b"]),
        ("multiply", {"a": a, "b": b}, lambda p: p["a"] * p["b"]),
        ("matmul", {"m1": m1, "m2": m2}, lambda p: p["m1"] @ p["m2"]),
        ("transpose", {"x4": x4}, lambda p: tt.transpose(p["x4"], (0, 2, 1, 3))),
        ("reshape", {"a": a}, lambda p: tt.reshape(p["a"], (6, 4))),
        ("concatenate", {"c1": c1, "c2": c2}, lambda p: tt.concat([p["c1"], p["c2"]], axis=1)),
        ("slice", {"a": a}, lambda p: p["a"][:, 1:3, ::2]),
        ("softmax", {"a": a}, lambda p: tt.softmax(p["a"])),
        ("layer_norm", {"a": a}, lambda p: tt.layer_norm(p["a"])),
        ("gelu", {"a": a}, lambda p: tt.gelu(p["a"])),
        ("masked_mean", {"a": a}, lambda p: tt.masked_mean(p["a"], mask, axis=2)),
        ("scale", {"a": a}, lambda p: tt.scale(p["a"], -2.5)),
    ]


def check_ops(seed: int = 0) -> dict[str, float]:
    """Max relative error of each kernel op under a random linear readout."""
    rng = Prng(seed)
    results = {}
    for name, inputs, fwd in _op_cases(rng):
        probe = fwd(inputs)
        read = random_readout(probe, rng)
        results[name] = grad_check(lambda: read(fwd(inputs)), inputs)
    return results


def check_linear(seed: int = 0) -> float:
    rng = Prng(seed)
    params = init_parameters(linear_shapes("lin", 6, 5), rng)
    params["lin.b"].data[:] = rng.normal((5,))
    x = Tensor(rng.normal((3, 6)))
    inputs = dict(params, x=x)
    read = random_readout(linear(x, params, "lin"), rng)
    return grad_check(lambda: read(linear(inputs["x"], params, "lin")), inputs)


def check_attention_block(seed: int = 0, dim: int = 8, heads: int = 2) -> float:
    """Gradient check of a cross-attention block w.r.t. parameters and inputs."""
    rng = Prng(seed)
    params = init_parameters(attention_block_shapes("blk", dim), rng)
    for name, t in params.items():
        if not name.endswith(".W"):
            t.data[:] = t.data + 0.1 * rng.normal(t.shape)
    x = Tensor(rng.normal((2, 3, dim)))
    kv = Tensor(rng.normal((2, 4, dim)))
    key_mask = np.array([[True, True, True, False], [True, False, True, True]])
    inputs = dict(params, x=x, kv=kv)

    def fwd():
        return attention_block(inputs["x"], inputs["kv"], params, "blk", heads, key_mask)

    read = random_readout(fwd(), rng)
    return grad_check(lambda: read(fwd()), inputs)


def check_constant(seed: int = 0) -> float:
    rng = Prng(seed)
    unused = {"w": Tensor(rng.normal((3,)))}
    const = Tensor(rng.normal(()))
    return grad_check(lambda: const, unused)
