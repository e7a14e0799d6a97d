"""Finite-difference verification suite shared by the CLI and the tests."""

from __future__ import annotations

import numpy as np

from . import forecaster as fc
from .context import adapt_and_fuse
from .nnkernel.gradcheck import (check_attention_block, check_linear, check_ops, grad_check, numeric_gradient,
                                 random_readout, relative_error)
from .nnkernel.layers import init_parameters, linear_shapes
from .nnkernel.prng import Prng
from .nnkernel.tensor import Tensor
from .objectives import loss_gradient, loss_total

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


def check_adapt_and_fuse(seed: int = 0) -> float:
    rng = Prng(seed)
    params = init_parameters(linear_shapes("adapter_v", 5, 8) + linear_shapes("adapter_t", 6, 8), rng)
    for t in params.values():
        t.data[:] = t.data + 0.1 * rng.normal(t.shape)
    inputs = dict(params, vis=Tensor(rng.normal((2, 6, 5))), txt=Tensor(rng.normal((2, 3, 6))))
    frames = np.repeat(np.array([0, 4, 9]), 2)

    def fwd():
        return adapt_and_fuse(inputs["vis"], inputs["txt"], params, frames).fused

    read = random_readout(fwd(), rng)
    return grad_check(lambda: read(fwd()), inputs)


def check_encode_state(seed: int = 0) -> float:
    rng = Prng(seed)
    params = init_parameters(linear_shapes("state", 168, 8), rng)
    obs = rng.uniform((2, 5, 42, 3))
    mask = rng.uniform((2, 5, 42)) > 0.2

    def fwd():
        return fc.encode_state(obs, mask, params, 8)

    read = random_readout(fwd(), rng)
    return grad_check(lambda: read(fwd()), params)


def _random_targets(rng: Prng, shape):
    gt = rng.normal(shape) * 0.1
    mask = rng.uniform(shape[:-1]) > 0.2
    return gt, mask


def check_loss_gradient(seed: int = 0) -> float:
    """Analytic loss gradient against central differences of the loss value.

    Every l1 residual is kept at least 0.015 from its kink so the
    difference quotients never straddle one.
    """
    rng = Prng(seed)
    gt, mask = _random_targets(rng, (2, 3, 42, 3))
    sign = np.where(rng.uniform(gt.shape) < 0.5, -1.0, 1.0)
    offset = sign * rng.uniform(gt.shape, 0.02, 0.07)
    offset[:, :, [0, 21]] = 0.005
    pred = gt + offset
    analytic = loss_gradient(pred, gt, mask)
    numeric = numeric_gradient(lambda: loss_total(pred, gt, mask).total, pred)
    return relative_error(analytic, numeric)


def miniature_batch(seed: int, cfg: fc.ModelConfig) -> fc.Batch:
    rng = Prng(seed)
    B, J = 2, cfg.joints
    obs_mask = rng.uniform((B, cfg.t_obs, J)) > 0.2
    obs = np.where(obs_mask[..., None], rng.uniform((B, cfg.t_obs, J, 3)), 0.0)
    frames = np.repeat(np.arange(cfg.context_frames), 2)
    raw_visual = rng.uniform((B, len(frames), cfg.d_feat_vision))
    raw_text = rng.normal((B, 3, cfg.d_feat_text))
    text_mask = np.array([[True, True, False], [True, True, True]])
    fut, fut_mask = _random_targets(rng, (B, cfg.t_fut, J, 3))
    return fc.Batch(["a", "b"], obs, obs_mask, raw_visual, frames, raw_text, text_mask, fut, fut_mask)


def miniature_model(seed: int = 0) -> fc.ForecasterModel:
    cfg = fc.ModelConfig(d_model=8, heads=2, enc_blocks=1, dec_blocks=1, t_obs=4, t_fut=2, context_frames=2,
                         d_feat_text=6, seed=seed)
    return fc.build(cfg)


def check_end_to_end(seed: int = 0, step: float = 1e-5, per_tensor: int = 4, directions: int = 4) -> float:
    """loss_total through the whole forward pass, w.r.t. every parameter tensor.

    Central differences are taken at ``per_tensor`` seeded entries of each
    tensor (all entries when it is that small) and along ``directions``
    random unit directions spanning every parameter at once.
    """
    model = miniature_model(seed)
    batch = miniature_batch(seed + 1, model.config)
    for t in model.params.values():
        t.grad = None
    pred = fc.forward(model, batch)
    pred.backward(loss_gradient(pred.data, batch.fut, batch.fut_mask))
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in model.params.items()}

    def loss() -> float:
        return loss_total(fc.forward(model, batch).data, batch.fut, batch.fut_mask).total

    rng = Prng(seed + 2)
    analytic, numeric = [], []
    for name, t in model.params.items():
        flat = t.data.reshape(-1)
        picks = np.arange(flat.size) if flat.size <= per_tensor else rng.permutation(flat.size)[:per_tensor]
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            analytic.append(grads[name].reshape(-1)[i])
            numeric.append((up - down) / (2.0 * step))
    for _ in range(directions):
        dirs = {k: rng.normal(t.shape) for k, t in model.params.items()}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs.values()))
        saved = {k: t.data for k, t in model.params.items()}
        values = []
        for sign in (1.0, -1.0):
            for k, t in model.params.items():
                t.data = saved[k] + sign * step * dirs[k] / norm
            values.append(loss())
        for k, t in model.params.items():
            t.data = saved[k]
        analytic.append(sum(float(np.sum(grads[k] * dirs[k])) for k in dirs) / norm)
        numeric.append((values[0] - values[1]) / (2.0 * step))
    return relative_error(np.asarray(analytic), np.asarray(numeric))


def run_suite(seed: int = 0) -> dict[str, tuple[float, float]]:
    """name -> (max relative error, tolerance)."""
    results = {f"op:{k}": (v, OP_TOLERANCE) for k, v in check_ops(seed).items()}
    results["linear"] = (check_linear(seed), OP_TOLERANCE)
    results["attention_block"] = (check_attention_block(seed), OP_TOLERANCE)
    results["adapt_and_fuse"] = (check_adapt_and_fuse(seed), OP_TOLERANCE)
    results["encode_state"] = (check_encode_state(seed), OP_TOLERANCE)
    results["loss_gradient"] = (check_loss_gradient(seed), OP_TOLERANCE)
    results["end_to_end"] = (check_end_to_end(seed), END_TO_END_TOLERANCE)
    return results
