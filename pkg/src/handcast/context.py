"""Multimodal context tokens: toy featurizers, adapters, encodings, corruptions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnkernel.layers import sinusoidal_encoding
from .nnkernel.prng import Prng, fnv1a64
from .nnkernel.tensor import Tensor, concat, matmul

GRID = 7
CELL = 32
FRAME_SIZE = GRID * CELL
VISION_FEAT = 5
MAX_WORDS = 16


class ContextError(ValueError):
    pass


@dataclass
class ContextTokens:
    visual: Tensor  # (..., L_v, D)
    textual: Tensor  # (..., L_t, D)
    fused: Tensor  # (..., L_v + L_t, D)
    provenance: tuple[str, str]  # ({toy_grid|precomputed|noise}, {hashed_text|dummy})
    key_mask: np.ndarray | None = None  # (..., L_v + L_t) bool


def grid_vision_tokens(frames) -> np.ndarray:
    """(k, 224, 224, 3) frames -> (k * 49, 5) tokens.

    One token per 32x32 cell: mean R, G, B, then the cell center u/224 and
    v/224. Tokens run frame-major, then row-major over the 7x7 grid.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1:] != (FRAME_SIZE, FRAME_SIZE, 3):
        raise ContextError(f"expected frames of shape (k, {FRAME_SIZE}, {FRAME_SIZE}, 3), got {frames.shape}")
    k = frames.shape[0]
    cells = frames.reshape(k, GRID, CELL, GRID, CELL, 3).mean(axis=(2, 4))  # (k, row, col, 3)
    centers = (np.arange(GRID) * CELL + CELL / 2) / FRAME_SIZE
    u = np.broadcast_to(centers[None, None, :], (k, GRID, GRID))
    v = np.broadcast_to(centers[None, :, None], (k, GRID, GRID))
    tokens = np.concatenate([cells, u[..., None], v[..., None]], axis=-1)
    return tokens.reshape(k * GRID * GRID, VISION_FEAT)


def word_vector(word: str, d_feat: int) -> np.ndarray:
    """Unit vector from a Gaussian stream seeded by the word's FNV-1a hash."""
    g = Prng(fnv1a64(word)).normal((d_feat,))
    return g / np.linalg.norm(g)


def hashed_text_tokens(text: str, d_feat: int, max_words: int = MAX_WORDS) -> np.ndarray:
    """One hashed unit vector per lowercased whitespace word (at least one)."""
    words = text.lower().split()[:max_words] or [""]
    return np.stack([word_vector(w, d_feat) for w in words])


def load_precomputed_tokens(record, indices) -> np.ndarray:
    """Stored per-frame tokens for the given absolute frame indices, frame-major."""
    tokens = getattr(record, "vision_tokens", None)
    if tokens is None:
        raise ContextError("precomputed tokens unavailable for clip " + str(getattr(record, "clip_id", "?")))
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= tokens.shape[0]):
        raise ContextError(f"context frame indices {idx.tolist()} out of range for {tokens.shape[0]} frames")
    sel = tokens[idx]
    return sel.reshape(-1, tokens.shape[-1])


def visual_frame_index(context_frames, tokens_per_frame: int) -> np.ndarray:
    """Source frame index for each visual token, for the temporal encoding."""
    return np.repeat(np.asarray(context_frames, dtype=np.int64), tokens_per_frame)


def adapt_and_fuse(raw_visual, raw_text, params: dict[str, Tensor], frame_index, text_mask=None,
                   encodings: bool = True, provenance=("toy_grid", "hashed_text"),
                   prefix: str = "adapter") -> ContextTokens:
    """Project both token streams to the shared width and concatenate them.

    Visual tokens get a temporal encoding indexed by their source frame,
    text tokens a positional encoding by word position. Inputs may carry a
    leading batch axis; ``text_mask`` marks real (non-padding) words.
    """
    Wv, bv = params[f"{prefix}_v.W"], params[f"{prefix}_v.b"]
    Wt, bt = params[f"{prefix}_t.W"], params[f"{prefix}_t.b"]
    rv = raw_visual if isinstance(raw_visual, Tensor) else Tensor(raw_visual)
    rt = raw_text if isinstance(raw_text, Tensor) else Tensor(raw_text)
    if rv.shape[-1] != Wv.shape[0]:
        raise ContextError(f"visual tokens have width {rv.shape[-1]}, adapter expects {Wv.shape[0]}")
    if rt.shape[-1] != Wt.shape[0]:
        raise ContextError(f"text tokens have width {rt.shape[-1]}, adapter expects {Wt.shape[0]}")
    D = Wv.shape[1]
    vis = matmul(rv, Wv) + bv
    txt = matmul(rt, Wt) + bt
    if encodings:
        vis = vis + sinusoidal_encoding(frame_index, D)
        txt = txt + sinusoidal_encoding(np.arange(rt.shape[-2]), D)
    fused = concat([vis, txt], axis=-2)
    key_mask = None
    if text_mask is not None:
        text_mask = np.asarray(text_mask, dtype=bool)
        vis_mask = np.ones(text_mask.shape[:-1] + (rv.shape[-2],), dtype=bool)
        key_mask = np.concatenate([vis_mask, text_mask], axis=-1)
    return ContextTokens(vis, txt, fused, tuple(provenance), key_mask)


def corrupt_vision(shape, seed: int) -> np.ndarray:
    """Gaussian(0.5, 0.25^2) noise frames clamped to [0, 1]."""
    return np.clip(Prng(seed).normal(tuple(shape), 0.5, 0.25), 0.0, 1.0)


def dummy_text(vocab, seed: int) -> str:
    """1-3 words drawn uniformly with replacement from ``vocab``."""
    vocab = list(vocab)
    if not vocab:
        raise ContextError("dummy_text needs a non-empty vocabulary")
    rng = Prng(seed)
    n = 1 + rng.choice(3)
    return " ".join(vocab[rng.choice(len(vocab))] for _ in range(n))


def pad_text_tokens(tokens: list[np.ndarray], max_words: int = MAX_WORDS) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length text token arrays into (B, max_words, d) plus a mask."""
    d = tokens[0].shape[-1]
    out = np.zeros((len(tokens), max_words, d))
    mask = np.zeros((len(tokens), max_words), dtype=bool)
    for i, t in enumerate(tokens):
        n = min(len(t), max_words)
        out[i, :n] = t[:n]
        mask[i, :n] = True
    return out, mask
