"""AdamW with warmup-cosine schedule, the training loop, and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import forecaster as fc
from .baselines import StaticModel, cvm_predict, static_fit, static_predict
from .context import dummy_text
from .dataio import Sample, fit_minmax, windows_for_split
from .metrics import Report, aggregate_report, egomotion_strata, sample_metrics
from .nnkernel.prng import Prng, derive_seed, hash_string
from .objectives import LossWeights, loss_and_gradient
from .synth import TASK_VOCAB

log = logging.getLogger(__name__)

ABLATIONS = ("none", "noisy_vision", "dummy_text", "both")


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-3
    warmup_ratio: float = 0.05
    min_lr: float = 0.0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    loss_weights: tuple[float, float, float] = (0.6, 0.2, 0.2)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 0
    log_interval: int = 1
    stride: int = 5

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.warmup_ratio < 1:
            raise ValueError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def warmup_steps(self) -> int:
        return int(math.floor(self.warmup_ratio * self.steps + 0.5))

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("loss_weights", "betas"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, then cosine decay to ``min_lr``."""
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.lr * (step + 1) / warm
    if step == warm:
        return cfg.lr  # exact even when min_lr + (lr - min_lr) would round
    progress = (step - warm) / (cfg.steps - warm)
    return cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays(name: str) -> bool:
    """Biases and layer-norm parameters are exempt from weight decay."""
    return not (name.endswith(".b") or name.endswith(".g"))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    skipped: int = 0


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint l2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState, lr: float,
               weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8, grad_clip: float = 0.0,
               decay_filter=decays) -> bool:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
    Returns False (and leaves everything untouched) on a non-finite gradient.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient; skipping optimizer step %d", state.step)
        return False
    if grad_clip > 0:
        clip_global_norm(grads, grad_clip)
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        theta = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = lr * ((m / c1) / (np.sqrt(v / c2) + eps))
        wd = weight_decay if decay_filter(name) else 0.0
        theta[...] = theta * (1.0 - lr * wd) - update
    return True


# data preparation ----------------------------------------------------------------------

@dataclass
class Dataset:
    root: Path
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]

    def split(self, name: str) -> list[Sample]:
        return getattr(self, name)


def load_dataset(root, stride: int = 5, splits=("train", "val", "test")) -> Dataset:
    parts = {name: windows_for_split(root, name, stride=stride)[0] if name in splits else []
             for name in ("train", "val", "test")}
    return Dataset(Path(root), **parts)


def take(batch: fc.Batch, idx) -> fc.Batch:
    idx = np.asarray(idx)
    return fc.Batch(
        [batch.sample_ids[i] for i in idx], batch.obs_norm[idx], batch.obs_mask[idx], batch.raw_visual[idx],
        batch.visual_frames, batch.raw_text[idx], batch.text_mask[idx],
        None if batch.fut is None else batch.fut[idx], None if batch.fut_mask is None else batch.fut_mask[idx],
        batch.provenance,
    )


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return Prng(derive_seed(seed, epoch)).permutation(n)


@dataclass
class TrainResult:
    model: fc.ForecasterModel
    history: list[dict]
    optimizer: OptimizerState


def train(samples: list[Sample], model_cfg: fc.ModelConfig, cfg: TrainConfig, val_samples=None,
          log_path=None, checkpoint_path=None) -> TrainResult:
    """Fit a forecaster on ``samples``; deterministic given the configs' seeds."""
    cfg.validate()
    if not samples:
        raise ValueError("training split is empty")
    model = fc.build(model_cfg, fit_minmax(samples))
    full = fc.make_batch(samples, model)
    weights = LossWeights(*cfg.loss_weights)
    state = OptimizerState()
    history: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    names = [n for n in model.params if model.trainable(n)]
    epoch, order, cursor = 0, epoch_order(cfg.seed, 0, len(samples)), 0
    try:
        for step in range(cfg.steps):
            idx = []
            while len(idx) < cfg.batch_size:
                if cursor == len(order):
                    epoch += 1
                    order, cursor = epoch_order(cfg.seed, epoch, len(samples)), 0
                take_n = min(cfg.batch_size - len(idx), len(order) - cursor)
                idx.extend(order[cursor:cursor + take_n])
                cursor += take_n
            batch = take(full, idx)
            for t in model.params.values():
                t.grad = None
            pred = fc.forward(model, batch)
            losses, seed = loss_and_gradient(pred.data, batch.fut, batch.fut_mask, weights)
            if not math.isfinite(losses.total):
                raise NumericalError(f"non-finite loss at step {step}; batch samples: {batch.sample_ids}")
            pred.backward(seed)
            lr = lr_at(step, cfg)
            grads = {n: (model.params[n].grad if model.params[n].grad is not None
                         else np.zeros_like(model.params[n].data)) for n in names}
            adamw_step({n: model.params[n].data for n in names}, grads, state, lr, cfg.weight_decay,
                       cfg.betas, cfg.eps, cfg.grad_clip)
            if step % cfg.log_interval == 0 or step == cfg.steps - 1:
                rec = {"step": step, "lr": lr, **losses.as_dict()}
                history.append(rec)
                if log_file:
                    log_file.write(json.dumps(rec) + "\n")
            if cfg.eval_interval and val_samples and (step + 1) % cfg.eval_interval == 0:
                report = evaluate(model, val_samples)
                rec = {"step": step, "split": "val", "report": report.to_dict()}
                history.append(rec)
                if log_file:
                    log_file.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    for t in model.params.values():
        t.grad = None
    if checkpoint_path:
        fc.save_checkpoint(model, checkpoint_path)
    return TrainResult(model, history, state)


# evaluation -------------------------------------------------------------------------

def _sample_seed(seed: int, sample_id: str, stream: int) -> int:
    return derive_seed(seed ^ hash_string(sample_id), stream)


def predict_samples(predictor, samples: list[Sample], ablation: str = "none", seed: int = 0):
    """(predictions (N, T_fut, 42, 3), prediction validity (N, T_fut, 42))."""
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    horizon = samples[0].fut_poses.shape[0]
    if isinstance(predictor, StaticModel):
        pred, valid = static_predict(predictor, horizon)
        n = len(samples)
        return np.repeat(pred[None], n, axis=0), np.repeat(valid[None], n, axis=0)
    if predictor == "cvm":
        out = [cvm_predict(s.obs_poses, s.obs_mask, horizon) for s in samples]
        return np.stack([p for p, _ in out]), np.stack([v for _, v in out])
    if isinstance(predictor, fc.ForecasterModel):
        overrides = {}
        if ablation in ("noisy_vision", "both"):
            k = len(samples[0].context_frame_indices)
            overrides["visual_override"] = [fc.noise_visual_tokens(k, _sample_seed(seed, s.sample_id, 1))
                                            for s in samples]
        if ablation in ("dummy_text", "both"):
            overrides["text_override"] = [dummy_text(TASK_VOCAB, _sample_seed(seed, s.sample_id, 2))
                                          for s in samples]
        pred = fc.predict(predictor, samples, **overrides)
        return pred, np.ones(pred.shape[:-1], dtype=bool)
    raise TypeError(f"unsupported predictor {predictor!r}")


def predictor_name(predictor) -> str:
    if isinstance(predictor, StaticModel):
        return "static"
    if isinstance(predictor, fc.ForecasterModel):
        return "model"
    return str(predictor)


def evaluate(predictor, samples: list[Sample], strata_fraction: float | None = None, ablation: str = "none",
             seed: int = 0, averaging: str = "micro", split: str | None = None) -> Report:
    """Metrics for a model, the static baseline or "cvm" over ``samples``.

    Baselines never read the context, so ablations leave their reports as
    they are apart from the echoed options.
    """
    if not samples:
        raise ValueError("evaluation split is empty")
    pred, valid = predict_samples(predictor, samples, ablation, seed)
    per = [sample_metrics(s.sample_id, pred[i], s.fut_poses, s.fut_mask & valid[i], s.egomotion)
           for i, s in enumerate(samples)]
    strata = egomotion_strata(per, strata_fraction) if strata_fraction else None
    cfg = {"predictor": predictor_name(predictor), "ablation": ablation, "seed": seed}
    if split:
        cfg["split"] = split
    if strata_fraction:
        cfg["strata"] = f"egomotion:{strata_fraction:g}"
    return aggregate_report(per, strata, averaging, cfg)


def fit_static(samples: list[Sample]) -> StaticModel:
    return static_fit(samples)


def config_dict(cfg) -> dict:
    return asdict(cfg)
