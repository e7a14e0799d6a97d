"""Cross-attention hand-pose forecaster.

Observed poses are flattened per frame and projected to the shared width
(state tokens). Each encoder block lets the state tokens attend to the fused
vision/text context, then to each other. A fixed set of learned future
queries decodes the encoded states in parallel, and a linear head emits
normalized coordinates for every joint of every future frame.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .context import (MAX_WORDS, VISION_FEAT, adapt_and_fuse, grid_vision_tokens, hashed_text_tokens,
                      pad_text_tokens, visual_frame_index)
from .dataio import NormStats, Sample, normalize
from .geometry import NUM_JOINTS
from .nnkernel.layers import (ConfigError, attention_shapes, attention_sublayer, ffn_shapes, ffn_sublayer,
                              init_parameters, linear, linear_shapes, sinusoidal_encoding)
from .nnkernel.prng import Prng
from .nnkernel.tensor import Tensor, matmul, reshape


@dataclass
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    enc_blocks: int = 2
    dec_blocks: int = 2
    d_feat_vision: int = VISION_FEAT
    d_feat_text: int = 16
    t_obs: int = 20
    t_fut: int = 10
    joints: int = NUM_JOINTS
    context_frames: int = 4
    max_words: int = MAX_WORDS
    delta_head: bool = False
    frozen: list[str] = field(default_factory=list)  # parameter-name prefixes excluded from updates
    seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        for name in ("d_model", "heads", "enc_blocks", "dec_blocks", "d_feat_vision", "d_feat_text",
                     "t_obs", "t_fut", "joints", "context_frames", "max_words"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def state_width(self) -> int:
        return self.joints * 3 + self.joints

    @property
    def out_width(self) -> int:
        return self.joints * 3

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def parameter_shapes(cfg: ModelConfig):
    """(name, shape, init kind) in the fixed declaration order."""
    D = cfg.d_model
    shapes = linear_shapes("state", cfg.state_width, D)
    shapes += linear_shapes("adapter_v", cfg.d_feat_vision, D)
    shapes += linear_shapes("adapter_t", cfg.d_feat_text, D)
    for i in range(cfg.enc_blocks):
        shapes += attention_shapes(f"enc{i}.cross", D)
        shapes += attention_shapes(f"enc{i}.self", D)
        shapes += ffn_shapes(f"enc{i}.ffn", D)
    shapes.append(("queries", (cfg.t_fut, D), "query"))
    for i in range(cfg.dec_blocks):
        shapes += attention_shapes(f"dec{i}.self", D)
        shapes += attention_shapes(f"dec{i}.cross", D)
        shapes += ffn_shapes(f"dec{i}.ffn", D)
    shapes += linear_shapes("head", D, cfg.out_width)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for _, shape, _ in parameter_shapes(cfg))


@dataclass
class ForecasterModel:
    config: ModelConfig
    params: dict[str, Tensor]
    norm: NormStats

    def trainable(self, name: str) -> bool:
        return not any(name.startswith(p) for p in self.config.frozen)


def build(cfg: ModelConfig, norm: NormStats | None = None) -> ForecasterModel:
    cfg.validate()
    params = init_parameters(parameter_shapes(cfg), Prng(cfg.seed))
    if norm is None:
        norm = NormStats(np.zeros(3), np.ones(3))
    return ForecasterModel(cfg, params, norm)


# inputs ----------------------------------------------------------------------------

@dataclass
class Batch:
    sample_ids: list[str]
    obs_norm: np.ndarray  # (B, t_obs, J, 3), masked slots zeroed
    obs_mask: np.ndarray  # (B, t_obs, J)
    raw_visual: np.ndarray  # (B, L_v, D_feat_vision)
    visual_frames: np.ndarray  # (L_v,) source frame of each visual token
    raw_text: np.ndarray  # (B, max_words, D_feat_text)
    text_mask: np.ndarray  # (B, max_words)
    fut: np.ndarray | None = None  # (B, t_fut, J, 3) meters
    fut_mask: np.ndarray | None = None
    provenance: tuple[str, str] = ("toy_grid", "hashed_text")


def sample_visual_tokens(sample: Sample) -> np.ndarray:
    if sample.raw_visual is None:
        raise ValueError(f"sample {sample.sample_id} has no visual tokens (bundle lacks frames and vision_tokens)")
    return sample.raw_visual


def make_batch(samples: list[Sample], model: ForecasterModel, visual_override=None, text_override=None,
               provenance=("toy_grid", "hashed_text")) -> Batch:
    """Assemble model inputs; overrides replace per-sample visual tokens / text."""
    cfg = model.config
    obs = np.stack([s.obs_poses for s in samples])
    mask = np.stack([s.obs_mask for s in samples])
    obs_norm = np.where(mask[..., None], normalize(obs, model.norm), 0.0)
    visual = visual_override if visual_override is not None else [sample_visual_tokens(s) for s in samples]
    raw_visual = np.stack(visual)
    per_frame = raw_visual.shape[1] // len(samples[0].context_frame_indices)
    frames = visual_frame_index(samples[0].context_frame_indices, per_frame)
    texts = text_override if text_override is not None else [s.text for s in samples]
    raw_text, text_mask = pad_text_tokens([hashed_text_tokens(t, cfg.d_feat_text, cfg.max_words) for t in texts],
                                          cfg.max_words)
    fut = np.stack([s.fut_poses for s in samples]) if samples[0].fut_poses is not None else None
    fut_mask = np.stack([s.fut_mask for s in samples]) if samples[0].fut_mask is not None else None
    return Batch([s.sample_id for s in samples], obs_norm, mask, raw_visual, frames, raw_text, text_mask,
                 fut, fut_mask, tuple(provenance))


# forward -----------------------------------------------------------------------------

def encode_state(obs_norm, obs_mask, params: dict[str, Tensor], d_model: int | None = None) -> Tensor:
    """(B, T, J, 3) normalized poses -> (B, T, D) state tokens.

    Each frame becomes [coordinates with masked slots zeroed, mask flags],
    projected linearly, plus a sinusoidal encoding of the frame index.
    Valid coordinates enter shifted by -0.5 so the unit cube is centred on
    the origin; a zero slot then reads as "mid-range or missing".
    """
    obs_norm = np.asarray(obs_norm, dtype=np.float64)
    obs_mask = np.asarray(obs_mask, dtype=bool)
    if obs_norm.ndim != 4 or obs_norm.shape[-1] != 3 or obs_mask.shape != obs_norm.shape[:-1]:
        raise ValueError(f"expected poses (B, T, J, 3) with mask (B, T, J), got {obs_norm.shape} / {obs_mask.shape}")
    B, T, J, _ = obs_norm.shape
    coords = np.where(obs_mask[..., None], obs_norm - 0.5, 0.0).reshape(B, T, J * 3)
    feats = np.concatenate([coords, obs_mask.astype(np.float64)], axis=-1)
    W = params["state.W"]
    if W.shape[0] != feats.shape[-1]:
        raise ValueError(f"state projection expects width {W.shape[0]}, got {feats.shape[-1]}")
    D = W.shape[1] if d_model is None else d_model
    return matmul(Tensor(feats), W) + params["state.b"] + sinusoidal_encoding(np.arange(T), D)


def fuse_context(batch: Batch, params):
    return adapt_and_fuse(batch.raw_visual, batch.raw_text, params, batch.visual_frames, batch.text_mask,
                          provenance=batch.provenance)


def forward_normalized(model: ForecasterModel, batch: Batch) -> Tensor:
    """(B, t_fut, J, 3) predictions in normalized coordinates."""
    cfg, p = model.config, model.params
    if batch.obs_norm.shape[1] != cfg.t_obs or batch.obs_norm.shape[2] != cfg.joints:
        raise ValueError(f"observed poses {batch.obs_norm.shape[1:3]} do not match config "
                         f"({cfg.t_obs}, {cfg.joints})")
    ctx = fuse_context(batch, p)
    if ctx.fused.shape[-1] != cfg.d_model:
        raise ValueError(f"context width {ctx.fused.shape[-1]} != d_model {cfg.d_model}")
    x = encode_state(batch.obs_norm, batch.obs_mask, p, cfg.d_model)
    for i in range(cfg.enc_blocks):
        x = attention_sublayer(x, ctx.fused, p, f"enc{i}.cross", cfg.heads, ctx.key_mask)
        x = attention_sublayer(x, None, p, f"enc{i}.self", cfg.heads)
        x = ffn_sublayer(x, p, f"enc{i}.ffn")
    z = x
    B = batch.obs_norm.shape[0]
    q_pos = sinusoidal_encoding(np.arange(cfg.t_obs, cfg.t_obs + cfg.t_fut), cfg.d_model)
    y = p["queries"] + np.broadcast_to(q_pos, (B, cfg.t_fut, cfg.d_model))
    for i in range(cfg.dec_blocks):
        y = attention_sublayer(y, None, p, f"dec{i}.self", cfg.heads)
        y = attention_sublayer(y, z, p, f"dec{i}.cross", cfg.heads)
        y = ffn_sublayer(y, p, f"dec{i}.ffn")
    out = linear(y, p, "head")
    out = reshape(out, (B, cfg.t_fut, cfg.joints, 3))
    if cfg.delta_head:
        return out + _last_observed(batch)[:, None]
    return out + 0.5  # a zero head predicts mid-range


def _last_observed(batch: Batch) -> np.ndarray:
    """Most recent valid normalized position per joint (0.5 if never valid)."""
    mask = batch.obs_mask
    T = mask.shape[1]
    last = np.where(mask, np.arange(T)[None, :, None], -1).max(axis=1)  # (B, J)
    idx = np.maximum(last, 0)
    vals = np.take_along_axis(batch.obs_norm, idx[:, None, :, None], axis=1)[:, 0]
    return np.where((last >= 0)[..., None], vals, 0.5)


def forward(model: ForecasterModel, batch: Batch) -> Tensor:
    """(B, t_fut, J, 3) predictions in canonical meters (denormalized)."""
    out = forward_normalized(model, batch)
    return out * model.norm.span + model.norm.lo


def predict(model: ForecasterModel, samples: list[Sample], batch_size: int = 64, **overrides) -> np.ndarray:
    preds = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        kw = {k: (v[i:i + batch_size] if isinstance(v, list) else v) for k, v in overrides.items()}
        preds.append(forward(model, make_batch(chunk, model, **kw)).data)
    return np.concatenate(preds)


def noise_visual_tokens(n_frames: int, seed: int) -> np.ndarray:
    from .context import corrupt_vision

    return grid_vision_tokens(corrupt_vision((n_frames, 224, 224, 3), seed))


# checkpoints ----------------------------------------------------------------------------

def quantize_parameters(model: ForecasterModel) -> None:
    """Round parameters to binary32 in place (what a save/load round trip does)."""
    for t in model.params.values():
        t.data = t.data.astype(np.float32).astype(np.float64)


def save_checkpoint(model: ForecasterModel, path) -> None:
    quantize_parameters(model)
    flat = np.concatenate([t.data.ravel() for t in model.params.values()])
    header = {"kind": "forecaster", "config": model.config.to_json(), "norm": model.norm.to_json(),
              "param_names": list(model.params), "param_count": int(flat.size)}
    extras = np.concatenate([model.norm.lo, model.norm.hi])
    ckpt.write_container(path, header, flat, extras)


def load_checkpoint(path) -> ForecasterModel:
    header, payload = ckpt.read_container(path)
    if header.get("kind") != "forecaster":
        raise ckpt.IntegrityError(f"{path}: expected a forecaster checkpoint, got kind={header.get('kind')!r}")
    try:
        cfg = ModelConfig.from_json(header["config"])
        cfg.validate()
    except (TypeError, KeyError, ConfigError) as exc:
        raise ckpt.IntegrityError(f"{path}: invalid config block ({exc})") from None
    shapes = parameter_shapes(cfg)
    n = sum(math.prod(s) for _, s, _ in shapes)
    flat, extras = ckpt.split_payload(payload, n, 6, str(path))
    params, pos = {}, 0
    for name, shape, _ in shapes:
        size = math.prod(shape)
        params[name] = Tensor(flat[pos:pos + size].reshape(shape), requires_grad=True)
        pos += size
    return ForecasterModel(cfg, params, NormStats(extras[:3].copy(), extras[3:].copy()))
