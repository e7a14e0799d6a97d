"""Deterministic desk-scale synthetic clips.

Each clip picks a task family; wrist paths are sums of sinusoids with
family-specific ranges, fingers curl along fixed-length bone chains, and a
head-mounted camera follows a smooth random walk scaled by
``egomotion_level``. The seated torso stays put, so the hands move with the
arms while the view moves with the head. The text names the family and a
grip word. Fingers cycle between an open hand and that grip, so a window
caught near the open phase learns the coming grip only from the text.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .context import grid_vision_tokens
from .dataio import ClipRecord, ValidationError, clip_dir, write_clip_bundle, write_splits
from .geometry import CameraIntrinsics, RigidTransform, camera_looking, se3_apply
from .nnkernel.prng import Prng, derive_seed

FAMILIES = ("reach_left", "reach_right", "grasp", "wave", "rest")
# per-finger curl [rad per joint] of each closed grip, thumb first
GRIPS = {
    "pinch": (0.45, 0.50, 0.10, 0.10, 0.10),
    "fist": (0.35, 0.60, 0.60, 0.60, 0.60),
    "point": (0.40, 0.02, 0.60, 0.60, 0.60),
    "hook": (0.05, 0.45, 0.45, 0.45, 0.45),
}
OPEN_CURL = 0.05
TASK_VOCAB = list(FAMILIES) + list(GRIPS)

INTRINSICS = CameraIntrinsics(160.0, 160.0, 112.0, 112.0)
HEAD_HEIGHT = 1.6
CAMERA_PITCH = 0.75  # radians below horizontal, looking at the desk
WRIST_HOME = {0: np.array([0.40, 0.18, 1.20]), 21: np.array([0.40, -0.18, 1.20])}  # body frame: x fwd, y left

# (spread angle in the palm plane [rad], bone lengths [m]) per finger, thumb first
FINGER_LAYOUT = [
    (0.90, (0.035, 0.032, 0.028, 0.024)),
    (0.25, (0.070, 0.040, 0.025, 0.020)),
    (0.00, (0.068, 0.045, 0.028, 0.021)),
    (-0.22, (0.064, 0.042, 0.027, 0.020)),
    (-0.45, (0.060, 0.032, 0.020, 0.018)),
]

# amplitude range [m] and frequency range [Hz] per family: (active hand, other hand)
_WRIST_RANGES = {
    "reach_left": {0: ((0.06, 0.14), (0.15, 0.40)), 21: ((0.004, 0.015), (0.10, 0.30))},
    "reach_right": {0: ((0.004, 0.015), (0.10, 0.30)), 21: ((0.06, 0.14), (0.15, 0.40))},
    "grasp": {0: ((0.02, 0.05), (0.20, 0.50)), 21: ((0.02, 0.05), (0.20, 0.50))},
    "wave": {0: ((0.004, 0.015), (0.10, 0.30)), 21: ((0.03, 0.07), (0.70, 1.20))},
    "rest": {0: ((0.003, 0.010), (0.10, 0.30)), 21: ((0.003, 0.010), (0.10, 0.30))},
}
# grip closure depth and closure cycle frequency range [Hz]
_CLOSURE = {
    "reach_left": (0.8, (0.40, 0.80)),
    "reach_right": (0.8, (0.40, 0.80)),
    "grasp": (1.0, (0.50, 0.90)),
    "wave": (0.5, (0.60, 1.00)),
    "rest": (0.6, (0.20, 0.40)),
}


@dataclass
class SynthConfig:
    n_clips: int = 200
    frames_per_clip: int = 120
    egomotion_level: float = 0.5
    task_mix: dict = field(default_factory=lambda: {f: 1.0 for f in FAMILIES})
    seed: int = 0
    fps: float = 10.0
    render_frames: bool = False
    vision_tokens: bool = True
    occlusion_rate: float = 0.10

    def validate(self) -> None:
        if self.frames_per_clip < 30:
            raise ValidationError(f"frames_per_clip must be >= 30, got {self.frames_per_clip}")
        if self.n_clips < 1:
            raise ValidationError(f"n_clips must be >= 1, got {self.n_clips}")
        if not 0.0 <= self.egomotion_level <= 1.0:
            raise ValidationError(f"egomotion_level must be in [0, 1], got {self.egomotion_level}")
        unknown = set(self.task_mix) - set(FAMILIES)
        if unknown:
            raise ValidationError(f"unknown task families in mix: {sorted(unknown)}")
        weights = np.array([float(self.task_mix.get(f, 0.0)) for f in FAMILIES])
        if np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
            raise ValidationError(f"task_mix weights must be non-negative with a positive sum, got {self.task_mix}")

    def mix_weights(self) -> np.ndarray:
        return np.array([float(self.task_mix.get(f, 0.0)) for f in FAMILIES])


def _yaw(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _unit(rng: Prng, n: int) -> np.ndarray:
    v = rng.normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def hand_skeleton(wrist: np.ndarray, hand_rot: np.ndarray, curls: np.ndarray, mirror: bool) -> np.ndarray:
    """21 joints for one hand given the wrist, hand orientation and finger curls.

    Hand axes (columns of ``hand_rot``): fingers point along +x, +z is the
    back of the hand. Each finger's three distal bones flex by its curl
    angle per joint toward the palm (-z). Accepts a leading frame axis:
    wrist (T, 3), hand_rot (T, 3, 3), curls (T, 5) -> (T, 21, 3).
    """
    wrist = np.asarray(wrist, dtype=np.float64)
    single = wrist.ndim == 1
    if single:
        wrist, hand_rot, curls = wrist[None], np.asarray(hand_rot)[None], np.asarray(curls)[None]
    T = wrist.shape[0]
    local = np.zeros((T, 21, 3))
    side = 1.0 if mirror else -1.0  # thumb toward the body midline, palm down
    palm = np.array([0.0, 0.0, -1.0])
    for f, (spread, lengths) in enumerate(FINGER_LAYOUT):
        a = side * spread
        direction = np.array([np.cos(a), np.sin(a), 0.0])
        pos = np.zeros((T, 3))
        for k, length in enumerate(lengths):
            bend = (k * curls[:, f])[:, None]
            pos = pos + length * (np.cos(bend) * direction + np.sin(bend) * palm)
            local[:, 1 + 4 * f + k] = pos
    joints = wrist[:, None, :] + np.einsum("tij,tnj->tni", hand_rot, local)
    joints[:, 0] = wrist
    return joints[0] if single else joints


def _sinusoids(rng: Prng, amp_range, freq_range):
    k = 2 + rng.choice(3)
    dirs = _unit(rng, k)
    amps = rng.uniform((k,), *amp_range)
    freqs = rng.uniform((k,), *freq_range)
    phases = rng.uniform((k,), 0.0, 2 * np.pi)
    return dirs * amps[:, None], freqs, phases


def _eval_sinusoids(terms, t: np.ndarray) -> np.ndarray:
    vecs, freqs, phases = terms
    s = np.sin(2 * np.pi * freqs[None, :] * t[:, None] + phases[None, :])  # (T, k)
    return s @ vecs - np.sin(phases)[None, :] @ vecs  # zero offset at t = 0


def _occlusion(rng: Prng, T: int, rate: float) -> np.ndarray:
    """Valid mask with dropout intervals on whole hands and single fingers."""
    mask = np.ones((T, 42), dtype=bool)
    groups = [np.arange(w, w + 21) for w in (0, 21)]
    groups += [np.arange(w + 1 + 4 * f, w + 5 + 4 * f) for w in (0, 21) for f in range(5)]
    mean_len = 5.0
    for g in groups:
        share = rate / 2.0
        expected = share * T / mean_len
        n = int(np.floor(expected + float(rng.uniform((1,))[0])))
        for _ in range(n):
            length = int(rng.integers(2, 9))
            start = int(rng.integers(0, T))
            mask[start:start + length, g] = False
    return mask


def _camera_walk(rng: Prng, T: int, level: float):
    """Mean-reverting head offsets and camera yaw/pitch deltas per frame."""
    head = np.zeros((T, 3))
    yaw = np.zeros(T)
    pitch = np.zeros(T)
    vel = np.zeros(3)
    w_yaw = w_pitch = 0.0
    noise = rng.normal((T, 5))
    for t in range(1, T):
        vel = 0.85 * vel + level * 0.012 * np.array([noise[t, 0], noise[t, 1], 0.3 * noise[t, 2]])
        w_yaw = 0.85 * w_yaw + level * 0.02 * noise[t, 3]
        w_pitch = 0.85 * w_pitch + level * 0.01 * noise[t, 4]
        head[t] = 0.95 * head[t - 1] + vel
        yaw[t] = 0.95 * yaw[t - 1] + w_yaw
        pitch[t] = 0.95 * pitch[t - 1] + w_pitch
    return head, yaw, pitch


def render_frame(points_cam: np.ndarray, colors: np.ndarray, intr: CameraIntrinsics = INTRINSICS,
                 size: int = 224, radius_m: float = 0.012, background: float = 0.08) -> np.ndarray:
    """Gaussian blobs for camera-frame points, clamped to [0, 1]."""
    z = points_cam[:, 2]
    vis = z > 0.05
    p, c, z = points_cam[vis], colors[vis], z[vis]
    u = intr.fx * p[:, 0] / z + intr.cx
    v = intr.fy * p[:, 1] / z + intr.cy
    sigma = np.maximum(radius_m * intr.fx / z, 1.0)
    grid = np.arange(size) + 0.5
    gx = np.exp(-0.5 * ((grid[None, :] - u[:, None]) / sigma[:, None]) ** 2).astype(np.float32)
    gy = np.exp(-0.5 * ((grid[None, :] - v[:, None]) / sigma[:, None]) ** 2).astype(np.float32)
    weighted = (gy.T[None, :, :] * c.T[:, None, :].astype(np.float32)).reshape(3 * size, -1)
    img = (weighted @ gx).reshape(3, size, size).transpose(1, 2, 0) + np.float32(background)
    return np.clip(img, 0.0, 1.0).astype(np.float64)


_LANDMARKS_BODY = np.array([[0.75, 0.45, 0.95], [0.75, -0.45, 0.95], [0.25, 0.55, 0.95],
                            [0.25, -0.55, 0.95], [0.55, 0.0, 0.95], [1.2, 0.0, 1.4]])


def _colors() -> np.ndarray:
    col = np.zeros((42 + len(_LANDMARKS_BODY), 3))
    col[:21, 0] = 0.9
    col[21:42, 1] = 0.9
    tips = [4, 8, 12, 16, 20]
    for w in (0, 21):
        col[[w + t for t in tips], 2] = 0.6
    col[42:] = (0.3, 0.3, 0.8)
    return col


def generate_clip(index: int, cfg: SynthConfig) -> ClipRecord:
    rng = Prng(derive_seed(cfg.seed, index))
    T = cfg.frames_per_clip
    t = np.arange(T) / cfg.fps
    family = FAMILIES[rng.choice(len(FAMILIES), cfg.mix_weights())]
    grip_word = list(GRIPS)[rng.choice(len(GRIPS))]
    grip = np.array(GRIPS[grip_word])

    heading = float(rng.uniform((1,), -np.pi, np.pi)[0])
    body_rot = _yaw(heading)
    torso = rng.uniform((3,), -0.5, 0.5) * np.array([1.0, 1.0, 0.0])
    head, d_yaw, d_pitch = _camera_walk(rng, T, cfg.egomotion_level)

    poses = np.zeros((T, 42, 3))
    depth, closure_hz = _CLOSURE[family]
    for w in (0, 21):
        amp_range, freq_range = _WRIST_RANGES[family][w]
        terms = _sinusoids(rng, amp_range, freq_range)
        home = WRIST_HOME[w] + rng.uniform((3,), -0.03, 0.03)
        local = home[None, :] + _eval_sinusoids(terms, t)
        # palm down, fingers forward, slight inward turn
        turn = (0.25 if w == 0 else -0.25) + float(rng.uniform((1,), -0.4, 0.4)[0])
        tilt = float(rng.uniform((1,), -0.5, 0.5)[0])  # held palm roll for the whole clip
        roll_amp = (0.35 if family == "wave" and w == 21 else 0.05)
        roll_freq = float(rng.uniform((1,), *_WRIST_RANGES[family][w][1])[0])
        roll_phase = float(rng.uniform((1,), 0, 2 * np.pi)[0])
        freq = float(rng.uniform((1,), *closure_hz)[0])
        phase = float(rng.uniform((1,), 0, 2 * np.pi)[0])
        lags = rng.uniform((5,), 0.0, 0.3)
        open_curl = OPEN_CURL + rng.uniform((5,), -0.03, 0.03)
        wiggle = rng.uniform((5,), 0.0, 2 * np.pi)
        roll = tilt + roll_amp * np.sin(2 * np.pi * roll_freq * t + roll_phase)
        hand_rot = np.stack([body_rot @ _yaw(turn) @ _rot_x(r) for r in roll])
        closure = depth * (0.5 - 0.5 * np.cos(2 * np.pi * freq * t[:, None] + phase - lags[None, :]))
        curls = open_curl + closure * (grip - open_curl) + 0.03 * np.sin(2 * np.pi * 0.5 * t[:, None] + wiggle)
        wrist = torso + local @ body_rot.T
        poses[:, w:w + 21] = hand_skeleton(wrist, hand_rot, curls, mirror=(w == 21))

    rot, trans = [], []
    for i in range(T):
        center = torso + head[i] + np.array([0.0, 0.0, HEAD_HEIGHT])
        cam = camera_looking(center, heading + d_yaw[i], CAMERA_PITCH + d_pitch[i])
        rot.append(cam.rotation)
        trans.append(cam.translation)
    extr = RigidTransform(np.stack(rot), np.stack(trans))
    mask = _occlusion(rng, T, cfg.occlusion_rate)
    modifier_text = f"{family} {grip_word}"

    frames = tokens = None
    if cfg.render_frames or cfg.vision_tokens:
        landmarks = torso + (body_rot @ _LANDMARKS_BODY.T).T  # fixed in the world
        colors = _colors()
        imgs, toks = [], []
        for i in range(T):
            pts = np.concatenate([poses[i][mask[i]], landmarks])
            col = np.concatenate([colors[:42][mask[i]], colors[42:]])
            img = render_frame(se3_apply(extr[i], pts), col)
            toks.append(grid_vision_tokens(img[None]))
            if cfg.render_frames:
                imgs.append(img)
        if cfg.vision_tokens:
            tokens = np.stack(toks)
        if cfg.render_frames:
            frames = np.stack(imgs)
    return ClipRecord(
        clip_id=f"clip{index:05d}", text=modifier_text, poses_world=poses, extrinsics=extr,
        mask=mask, fps=cfg.fps, intrinsics=INTRINSICS, frames=frames, vision_tokens=tokens,
    )


def _rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def synth_generate(cfg: SynthConfig, out_dir) -> dict:
    """Write ``cfg.n_clips`` bundles under ``out_dir/clips`` plus splits.json."""
    cfg.validate()
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    ids = []
    for index in range(cfg.n_clips):
        rec = generate_clip(index, cfg)
        write_clip_bundle(rec, clip_dir(out, rec.clip_id))
        ids.append(rec.clip_id)
    splits = write_splits(out, ids)
    manifest = {"generator": "handcast.synth", "config": asdict(cfg),
                "counts": {k: len(v) for k, v in splits.items()}}
    (out / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return manifest
