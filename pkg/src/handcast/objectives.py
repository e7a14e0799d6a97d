"""Composite training loss: absolute, wrist-relative and pairwise-distance terms.

All functions accept a single window ``(T, 42, 3)`` or a batch
``(B, T, 42, 3)`` with masks of the matching ``(..., T, 42)`` shape. Each
term is normalized by its own count of eligible entries per sample; batch
losses are the plain mean of per-sample losses, summed in sample order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import JOINTS_PER_HAND, NUM_JOINTS, WRISTS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    abs: float = 0.6
    rel: float = 0.2
    pair: float = 0.2

    def __post_init__(self):
        if min(self.abs, self.rel, self.pair) < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


def intra_hand_pairs() -> np.ndarray:
    """All 210 joint pairs within each hand, 420 rows of (i, j) with i < j."""
    pairs = []
    for w in WRISTS:
        pairs.extend(combinations(range(w, w + JOINTS_PER_HAND), 2))
    return np.asarray(pairs, dtype=np.int64)


DEFAULT_PAIRS = intra_hand_pairs()


@dataclass
class LossTerm:
    value: float
    per_sample: np.ndarray
    counts: np.ndarray
    empty: bool  # true when some sample had no eligible entries


@dataclass
class LossBreakdown:
    total: float
    abs: float
    rel: float
    pair: float
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"loss_total": self.total, "loss_abs": self.abs, "loss_rel": self.rel, "loss_pair": self.pair}


def _batch(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[-2:] != (NUM_JOINTS, 3) or mask.shape != pred.shape[:-1]:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    single = pred.ndim == 3
    if single:
        pred, gt, mask = pred[None], gt[None], mask[None]
    return pred, gt, mask, single


def _safe_div(num, den):
    return np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)


def _finish(per_sample, counts, name) -> LossTerm:
    empty = bool(np.any(counts == 0))
    if empty:
        log.debug("%s: %d sample(s) without eligible terms", name, int(np.sum(counts == 0)))
    return LossTerm(float(np.mean(per_sample)), per_sample, counts, empty)


def _sign(x):
    return np.sign(x)  # sign(0) = 0 is the chosen subgradient


# absolute ----------------------------------------------------------------------------

def _abs_parts(pred, gt, mask):
    diff = np.where(mask[..., None], pred - gt, 0.0)
    counts = mask.sum(axis=(1, 2)).astype(np.float64)
    per = _safe_div(np.abs(diff).sum(axis=(1, 2, 3)), counts)
    return diff, counts, per


def loss_abs(pred, gt, mask) -> float:
    """Mean over valid (t, j) of the l1 norm of the joint error."""
    return abs_term(pred, gt, mask).value


def abs_term(pred, gt, mask) -> LossTerm:
    pred, gt, mask, _ = _batch(pred, gt, mask)
    _, counts, per = _abs_parts(pred, gt, mask)
    return _finish(per, counts, "loss_abs")


def _abs_grad(pred, gt, mask):
    diff, counts, _ = _abs_parts(pred, gt, mask)
    return _sign(diff) * _safe_div(1.0, counts)[:, None, None, None]


# wrist-relative ------------------------------------------------------------------------

def _hand_slices():
    for w in WRISTS:
        yield w, slice(w + 1, w + JOINTS_PER_HAND)


def _rel_parts(pred, gt, mask):
    residuals, eligible = [], []
    for w, fingers in _hand_slices():
        r = (pred[:, :, fingers] - pred[:, :, w:w + 1]) - (gt[:, :, fingers] - gt[:, :, w:w + 1])
        e = mask[:, :, fingers] & mask[:, :, w:w + 1]
        residuals.append(np.where(e[..., None], r, 0.0))
        eligible.append(e)
    counts = sum(e.sum(axis=(1, 2)) for e in eligible).astype(np.float64)
    total = sum(np.abs(r).sum(axis=(1, 2, 3)) for r in residuals)
    return residuals, counts, _safe_div(total, counts)


def loss_rel(pred, gt, mask) -> float:
    """Mean l1 error of wrist-relative offsets over valid (hand, frame, finger joint).

    Frames where a hand's wrist is invalid contribute nothing for that hand;
    wrist self-terms are excluded from the denominator.
    """
    return rel_term(pred, gt, mask).value


def rel_term(pred, gt, mask) -> LossTerm:
    pred, gt, mask, _ = _batch(pred, gt, mask)
    _, counts, per = _rel_parts(pred, gt, mask)
    return _finish(per, counts, "loss_rel")


def _rel_grad(pred, gt, mask):
    residuals, counts, _ = _rel_parts(pred, gt, mask)
    inv = _safe_div(1.0, counts)[:, None, None, None]
    grad = np.zeros_like(pred)
    for (w, fingers), r in zip(_hand_slices(), residuals):
        s = _sign(r) * inv
        grad[:, :, fingers] += s
        grad[:, :, w] -= s.sum(axis=2)
    return grad


# pairwise distances ------------------------------------------------------------------------

def _pair_parts(pred, gt, mask, pairs):
    i, j = pairs[:, 0], pairs[:, 1]
    dp = pred[:, :, i] - pred[:, :, j]
    dg = gt[:, :, i] - gt[:, :, j]
    dist_p = np.sqrt((dp * dp).sum(-1))
    dist_g = np.sqrt((dg * dg).sum(-1))
    elig = mask[:, :, i] & mask[:, :, j]
    r = np.where(elig, dist_p - dist_g, 0.0)
    counts = elig.sum(axis=(1, 2)).astype(np.float64)
    return dp, dist_p, r, counts, _safe_div((r * r).sum(axis=(1, 2)), counts)


def loss_pair(pred, gt, mask, pairs=DEFAULT_PAIRS) -> float:
    """Mean squared difference of predicted vs true joint-pair distances."""
    return pair_term(pred, gt, mask, pairs).value


def pair_term(pred, gt, mask, pairs=DEFAULT_PAIRS) -> LossTerm:
    pred, gt, mask, _ = _batch(pred, gt, mask)
    *_, counts, per = _pair_parts(pred, gt, mask, np.asarray(pairs))
    return _finish(per, counts, "loss_pair")


def _incidence(pairs) -> np.ndarray:
    inc = np.zeros((len(pairs), NUM_JOINTS))
    inc[np.arange(len(pairs)), pairs[:, 0]] = 1.0
    inc[np.arange(len(pairs)), pairs[:, 1]] = -1.0
    return inc


def _pair_grad(pred, gt, mask, pairs, parts=None):
    pairs = np.asarray(pairs)
    dp, dist_p, r, counts, _ = parts if parts is not None else _pair_parts(pred, gt, mask, pairs)
    coef = 2.0 * r * _safe_div(1.0, dist_p) * _safe_div(1.0, counts)[:, None, None]
    w = coef[..., None] * dp  # (B, T, P, 3)
    return np.matmul(_incidence(pairs).T, w)


# composite ------------------------------------------------------------------------------

def loss_total(pred, gt, mask, weights: LossWeights = LossWeights(), pairs=DEFAULT_PAIRS) -> LossBreakdown:
    a = abs_term(pred, gt, mask)
    r = rel_term(pred, gt, mask)
    p = pair_term(pred, gt, mask, pairs)
    total = weights.abs * a.value + weights.rel * r.value + weights.pair * p.value
    flags = {name: True for name, term in (("abs_empty", a), ("rel_empty", r), ("pair_empty", p)) if term.empty}
    return LossBreakdown(total, a.value, r.value, p.value, flags)


def loss_and_gradient(pred, gt, mask, weights: LossWeights = LossWeights(), pairs=DEFAULT_PAIRS):
    """(:func:`loss_total`, :func:`loss_gradient`) sharing the pair distances."""
    p, g, m, single = _batch(pred, gt, mask)
    pairs = np.asarray(pairs)
    parts = _pair_parts(p, g, m, pairs)
    a = abs_term(p, g, m)
    r = rel_term(p, g, m)
    pt = _finish(parts[4], parts[3], "loss_pair")
    total = weights.abs * a.value + weights.rel * r.value + weights.pair * pt.value
    flags = {name: True for name, term in (("abs_empty", a), ("rel_empty", r), ("pair_empty", pt)) if term.empty}
    grad = _combine_grad(p, g, m, weights, pairs, parts)
    return LossBreakdown(total, a.value, r.value, pt.value, flags), (grad[0] if single else grad)


def _combine_grad(p, g, m, weights, pairs, parts=None):
    grad = np.zeros_like(p)
    if weights.abs:
        grad += weights.abs * _abs_grad(p, g, m)
    if weights.rel:
        grad += weights.rel * _rel_grad(p, g, m)
    if weights.pair:
        grad += weights.pair * _pair_grad(p, g, m, pairs, parts)
    return np.where(m[..., None], grad / p.shape[0], 0.0)


def loss_gradient(pred, gt, mask, weights: LossWeights = LossWeights(), pairs=DEFAULT_PAIRS) -> np.ndarray:
    """Gradient of :func:`loss_total` w.r.t. ``pred`` (same shape as ``pred``).

    l1 kinks use subgradient 0; coincident joints give a zero pair gradient.
    Entries at masked joints are exactly 0.
    """
    p, g, m, single = _batch(pred, gt, mask)
    grad = _combine_grad(p, g, m, weights, np.asarray(pairs))
    return grad[0] if single else grad
