"""Static mean-pose and constant-velocity reference predictors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NUM_JOINTS


@dataclass
class StaticModel:
    mean_pose: np.ndarray  # (42, 3) canonical meters
    counts: np.ndarray  # (42,) valid observations per joint

    @property
    def fitted(self) -> np.ndarray:
        return self.counts > 0


def static_fit(samples) -> StaticModel:
    """Per-joint mean over all valid observed and future training frames."""
    total = np.zeros((NUM_JOINTS, 3))
    counts = np.zeros(NUM_JOINTS, dtype=np.int64)
    for s in samples:
        for poses, mask in ((s.obs_poses, s.obs_mask), (s.fut_poses, s.fut_mask)):
            total += np.where(mask[..., None], poses, 0.0).sum(axis=0)
            counts += mask.sum(axis=0)
    mean = np.where(counts[:, None] > 0, total / np.maximum(counts, 1)[:, None], 0.0)
    return StaticModel(mean, counts)


def static_predict(model: StaticModel, horizon: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Mean pose repeated over the horizon, plus a per-joint validity flag.

    Joints never observed in training are predicted as zeros and flagged
    invalid.
    """
    pred = np.repeat(model.mean_pose[None], horizon, axis=0)
    valid = np.repeat(model.fitted[None], horizon, axis=0)
    return pred, valid


def cvm_predict(obs_poses, obs_mask, horizon: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint linear extrapolation from the last two valid observed frames.

    With a = last valid frame and b = the one before, the step-k prediction
    (k = 1..horizon) is p_a + v * (k + t_last - a), v = (p_a - p_b) / (a - b).
    A joint with one valid frame is held static; one with none is flagged.
    """
    obs_poses = np.asarray(obs_poses, dtype=np.float64)
    obs_mask = np.asarray(obs_mask, dtype=bool)
    T = obs_poses.shape[0]
    frames = np.arange(T)[:, None]
    a = np.where(obs_mask, frames, -1).max(axis=0)  # (J,)
    before = obs_mask & (frames < a[None, :])
    b = np.where(before, frames, -1).max(axis=0)
    J = obs_poses.shape[1]
    cols = np.arange(J)
    pa = obs_poses[np.maximum(a, 0), cols]
    pb = obs_poses[np.maximum(b, 0), cols]
    has_two = b >= 0
    gap = np.where(has_two, a - b, 1)
    v = np.where(has_two[:, None], (pa - pb) / gap[:, None], 0.0)
    k = np.arange(1, horizon + 1)[:, None, None]
    lead = (T - 1 - np.maximum(a, 0))[None, :, None]
    pred = pa[None] + v[None] * (k + lead)
    valid = np.repeat((a >= 0)[None], horizon, axis=0)
    pred = np.where(valid[..., None], pred, 0.0)
    return pred, valid
