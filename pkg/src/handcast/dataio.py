"""Clip bundles on disk, forecasting windows, and min-max normalization.

A clip bundle is a directory::

    meta.json           clip_id, fps, num_frames, num_joints, units, text,
                        joint_names, optional_fields, format_version, magic
    poses_world.f32     float32 LE [T][42][3]
    extrinsics.f32      float32 LE [T][3][4], rows [R | t], world -> camera
    mask.u8             uint8 [T][42], 1 = valid
    intrinsics.f32      optional, float32 LE [4] fx fy cx cy
    frames.f32          optional, float32 LE [T][224][224][3] in [0, 1]
    vision_tokens.f32   optional, float32 LE [T][L_v][D_feat]

A dataset root holds ``clips/<clip_id>/`` bundles and ``splits.json``.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (NUM_JOINTS, CameraIntrinsics, RigidTransform, canonicalize_clip,
                       egomotion_score)
from .nnkernel.prng import hash_string

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
BUNDLE_MAGIC = "handcast-clip"
FRAME_SIZE = 224
T_OBS = 20
T_FUT = 10
CONTEXT_FRAMES = 4
OPTIONAL_FIELDS = ("intrinsics", "frames", "vision_tokens")

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
JOINT_NAMES = [
    f"{side}_{name}"
    for side in ("left", "right")
    for name in ["wrist"] + [f"{finger}{k}" for finger in FINGERS for k in range(1, 5)]
]


class BundleError(Exception):
    """Base class for clip-bundle read failures."""


class MissingFileError(BundleError, FileNotFoundError):
    pass


class MagicMismatchError(BundleError):
    pass


class DimensionMismatchError(BundleError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class ClipRecord:
    clip_id: str
    text: str
    poses_world: np.ndarray  # (T, 42, 3) meters
    extrinsics: RigidTransform  # T world->camera poses
    mask: np.ndarray  # (T, 42) bool
    fps: float = 10.0
    intrinsics: CameraIntrinsics | None = None
    frames: np.ndarray | None = None  # (T, 224, 224, 3)
    vision_tokens: np.ndarray | None = None  # (T, L_v, D_feat)

    def __post_init__(self):
        T = self.poses_world.shape[0]
        if self.poses_world.shape != (T, NUM_JOINTS, 3):
            raise ValidationError(f"poses_world must be (T, {NUM_JOINTS}, 3), got {self.poses_world.shape}")
        if self.mask.shape != (T, NUM_JOINTS):
            raise ValidationError(f"mask must be ({T}, {NUM_JOINTS}), got {self.mask.shape}")
        if self.extrinsics.rotation.shape != (T, 3, 3):
            raise ValidationError(f"expected {T} extrinsics, got {self.extrinsics.rotation.shape[:-2]}")
        if not self.fps > 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(self.poses_world)):
            raise ValidationError("poses_world must be finite")
        if self.frames is not None and self.frames.shape != (T, FRAME_SIZE, FRAME_SIZE, 3):
            raise ValidationError(f"frames must be ({T}, {FRAME_SIZE}, {FRAME_SIZE}, 3), got {self.frames.shape}")
        if self.vision_tokens is not None and (self.vision_tokens.ndim != 3 or self.vision_tokens.shape[0] != T):
            raise ValidationError(f"vision_tokens must be ({T}, L_v, D_feat), got {self.vision_tokens.shape}")

    @property
    def num_frames(self) -> int:
        return self.poses_world.shape[0]


# bundle I/O --------------------------------------------------------------------

def _write_array(path: Path, arr: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def write_clip_bundle(record: ClipRecord, path) -> None:
    """Write ``record`` as a bundle directory (created if missing)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    T = record.num_frames
    optional = []
    meta = {
        "magic": BUNDLE_MAGIC,
        "format_version": FORMAT_VERSION,
        "clip_id": record.clip_id,
        "fps": float(record.fps),
        "num_frames": T,
        "num_joints": NUM_JOINTS,
        "units": "meters",
        "text": record.text,
        "joint_names": JOINT_NAMES,
    }
    poses = np.where(record.mask[..., None], record.poses_world, 0.0)
    _write_array(path / "poses_world.f32", poses, "<f4")
    ext = np.concatenate([record.extrinsics.rotation, record.extrinsics.translation[..., None]], axis=-1)
    _write_array(path / "extrinsics.f32", ext, "<f4")
    _write_array(path / "mask.u8", record.mask, "u1")
    if record.intrinsics is not None:
        optional.append("intrinsics")
        _write_array(path / "intrinsics.f32", record.intrinsics.as_array(), "<f4")
    if record.frames is not None:
        optional.append("frames")
        _write_array(path / "frames.f32", record.frames, "<f4")
    if record.vision_tokens is not None:
        optional.append("vision_tokens")
        meta["vision_token_shape"] = [int(record.vision_tokens.shape[1]), int(record.vision_tokens.shape[2])]
        _write_array(path / "vision_tokens.f32", record.vision_tokens, "<f4")
    meta["optional_fields"] = optional
    for name in OPTIONAL_FIELDS:
        stale = path / f"{name}.f32"
        if name not in optional and stale.exists():
            stale.unlink()
    (path / "meta.json").write_text(json.dumps(meta, indent=1, ensure_ascii=False), encoding="utf-8")


def _read_array(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"missing bundle file {path}")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(shape)) * itemsize
    if len(raw) != expected:
        raise DimensionMismatchError(
            f"{path.name}: expected {expected} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape)


def read_clip_bundle(path) -> ClipRecord:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise MissingFileError(f"missing bundle file {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("magic") != BUNDLE_MAGIC or meta.get("format_version") != FORMAT_VERSION:
        raise MagicMismatchError(
            f"{meta_path}: not a version-{FORMAT_VERSION} clip bundle "
            f"(magic={meta.get('magic')!r}, version={meta.get('format_version')!r})")
    T = int(meta["num_frames"])
    J = int(meta["num_joints"])
    if J != NUM_JOINTS:
        raise DimensionMismatchError(f"meta.json: num_joints={J}, expected {NUM_JOINTS}")
    poses = _read_array(path / "poses_world.f32", "<f4", (T, J, 3)).astype(np.float64)
    ext = _read_array(path / "extrinsics.f32", "<f4", (T, 3, 4)).astype(np.float64)
    mask = _read_array(path / "mask.u8", "u1", (T, J)).astype(bool)
    optional = set(meta.get("optional_fields", []))
    intr = frames = tokens = None
    if "intrinsics" in optional:
        fx, fy, cx, cy = _read_array(path / "intrinsics.f32", "<f4", (4,)).astype(np.float64)
        intr = CameraIntrinsics(float(fx), float(fy), float(cx), float(cy))
    if "frames" in optional:
        frames = _read_array(path / "frames.f32", "<f4", (T, FRAME_SIZE, FRAME_SIZE, 3)).astype(np.float64)
    if "vision_tokens" in optional:
        lv, dfeat = meta["vision_token_shape"]
        tokens = _read_array(path / "vision_tokens.f32", "<f4", (T, lv, dfeat)).astype(np.float64)
    return ClipRecord(
        clip_id=meta["clip_id"], text=meta["text"], poses_world=poses,
        extrinsics=RigidTransform(ext[..., :3], ext[..., 3]), mask=mask, fps=float(meta["fps"]),
        intrinsics=intr, frames=frames, vision_tokens=tokens,
    )


def quantize_record(record: ClipRecord) -> ClipRecord:
    """The record exactly as it reads back from disk (binary32, zeroed masked slots)."""
    f32 = lambda a: None if a is None else np.asarray(a, dtype=np.float32).astype(np.float64)
    intr = record.intrinsics
    if intr is not None:
        intr = CameraIntrinsics(*(float(v) for v in f32(intr.as_array())))
    poses = np.where(record.mask[..., None], record.poses_world, 0.0)
    return ClipRecord(record.clip_id, record.text, f32(poses),
                      RigidTransform(f32(record.extrinsics.rotation), f32(record.extrinsics.translation)),
                      record.mask.astype(bool), float(record.fps), intr, f32(record.frames),
                      f32(record.vision_tokens))


# dataset roots -----------------------------------------------------------------

def split_of(clip_id: str) -> str:
    """80/10/10 train/val/test assignment from a stable 64-bit hash of the id."""
    bucket = hash_string(clip_id) % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


def clip_dir(root, clip_id: str) -> Path:
    return Path(root) / "clips" / clip_id


def read_splits(root) -> dict[str, list[str]]:
    path = Path(root) / "splits.json"
    if not path.exists():
        raise MissingFileError(f"missing split manifest {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_splits(root, clip_ids) -> dict[str, list[str]]:
    splits = {"train": [], "val": [], "test": []}
    for cid in sorted(clip_ids):
        splits[split_of(cid)].append(cid)
    Path(root, "splits.json").write_text(json.dumps(splits, indent=1), encoding="utf-8")
    return splits


def load_split(root, split: str) -> list[ClipRecord]:
    splits = read_splits(root)
    if split not in splits:
        raise ValidationError(f"unknown split {split!r}; available: {sorted(splits)}")
    return [read_clip_bundle(clip_dir(root, cid)) for cid in splits[split]]


# windows -------------------------------------------------------------------------

@dataclass
class Sample:
    clip_id: str
    start: int
    obs_poses: np.ndarray  # (t_obs, 42, 3) canonical meters
    fut_poses: np.ndarray  # (t_fut, 42, 3)
    obs_mask: np.ndarray
    fut_mask: np.ndarray
    context_frame_indices: np.ndarray  # window-relative, within [0, t_obs)
    text: str
    egomotion: float
    degenerate_yaw: bool = False
    raw_visual: np.ndarray | None = None  # (k * L_v, D_feat) tokens for the context frames
    world_to_canonical: RigidTransform | None = None
    extras: dict = field(default_factory=dict)

    @property
    def sample_id(self) -> str:
        return f"{self.clip_id}@{self.start:05d}"


def sample_context_frames(t_obs: int = T_OBS, k: int = CONTEXT_FRAMES) -> np.ndarray:
    """k uniformly spaced frame indices over [0, t_obs - 1], half rounding away from zero."""
    if k < 1 or k > t_obs:
        raise ValidationError(f"cannot sample {k} context frames from {t_obs} observed frames")
    if k == 1:
        return np.zeros(1, dtype=np.int64)
    exact = np.arange(k) * (t_obs - 1) / (k - 1)
    return np.floor(exact + 0.5).astype(np.int64)


@dataclass
class IngestionSummary:
    clips_seen: int = 0
    clips_skipped: int = 0
    windows: int = 0


def make_windows(record: ClipRecord, t_obs: int = T_OBS, t_fut: int = T_FUT, stride: int = 5,
                 k_context: int = CONTEXT_FRAMES, mode: str = "yaw_only", up_axis=(0.0, 0.0, 1.0),
                 summary: IngestionSummary | None = None) -> list[Sample]:
    """Cut a clip into canonicalized (observed, future) windows.

    Windows start at 0, stride, 2*stride, ... and each is anchored at its own
    first observed frame. Clips shorter than t_obs + t_fut yield no windows.
    """
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    span = t_obs + t_fut
    T = record.num_frames
    if summary is not None:
        summary.clips_seen += 1
    if T < span:
        if summary is not None:
            summary.clips_skipped += 1
        return []
    ctx = sample_context_frames(t_obs, k_context)
    out = []
    for start in range(0, T - span + 1, stride):
        sl = slice(start, start + span)
        ext = record.extrinsics[sl]
        canon = canonicalize_clip(record.poses_world[sl], record.mask[sl], ext, mode, up_axis)
        raw_visual = _window_visual_tokens(record, start + ctx)
        out.append(Sample(
            clip_id=record.clip_id, start=start,
            obs_poses=canon.positions[:t_obs], fut_poses=canon.positions[t_obs:],
            obs_mask=canon.valid[:t_obs], fut_mask=canon.valid[t_obs:],
            context_frame_indices=ctx.copy(), text=record.text,
            egomotion=egomotion_score(ext), degenerate_yaw=canon.degenerate_yaw,
            raw_visual=raw_visual, world_to_canonical=canon.world_to_canonical,
        ))
    if summary is not None:
        summary.windows += len(out)
    return out


def _window_visual_tokens(record: ClipRecord, frame_idx: np.ndarray) -> np.ndarray | None:
    from .context import grid_vision_tokens, load_precomputed_tokens

    if record.vision_tokens is not None:
        return load_precomputed_tokens(record, frame_idx)
    if record.frames is not None:
        return grid_vision_tokens(record.frames[frame_idx])
    return None


def windows_for_split(root, split: str, stride: int = 5, **kw) -> tuple[list[Sample], IngestionSummary]:
    summary = IngestionSummary()
    samples: list[Sample] = []
    for rec in load_split(root, split):
        samples.extend(make_windows(rec, stride=stride, summary=summary, **kw))
    if summary.clips_skipped:
        log.info("skipped %d of %d clips shorter than one window", summary.clips_skipped, summary.clips_seen)
    return samples, summary


# normalization -------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    lo: np.ndarray  # (3,) per-axis minimum, meters
    hi: np.ndarray  # (3,) per-axis maximum

    @property
    def degenerate(self) -> np.ndarray:
        return self.hi == self.lo

    @property
    def span(self) -> np.ndarray:
        return np.where(self.degenerate, 0.0, self.hi - self.lo)

    def to_json(self) -> dict:
        return {"min": [float(v) for v in self.lo], "max": [float(v) for v in self.hi],
                "degenerate": [bool(v) for v in self.degenerate]}

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_minmax(samples: list[Sample]) -> NormStats:
    """Per-axis min/max over every valid joint (observed and future frames)."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for s in samples:
        for poses, mask in ((s.obs_poses, s.obs_mask), (s.fut_poses, s.fut_mask)):
            pts = poses[mask]
            if len(pts):
                lo = np.minimum(lo, pts.min(axis=0))
                hi = np.maximum(hi, pts.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise ValidationError("cannot fit min-max statistics: no valid joints")
    return NormStats(lo, hi)


def normalize(poses, stats: NormStats) -> np.ndarray:
    """(x - min) / (max - min) per axis; degenerate axes map to 0.5."""
    poses = np.asarray(poses, dtype=np.float64)
    deg = stats.degenerate
    denom = np.where(deg, 1.0, stats.hi - stats.lo)
    return np.where(deg, 0.5, (poses - stats.lo) / denom)


def denormalize(poses, stats: NormStats) -> np.ndarray:
    """Inverse of :func:`normalize`; degenerate axes return the minimum."""
    poses = np.asarray(poses, dtype=np.float64)
    return np.where(stats.degenerate, stats.lo, poses * stats.span + stats.lo)


def dataset_fingerprint(root) -> dict[str, int]:
    """File name -> size for every file under ``root``; used to assert read-only access."""
    root = Path(root)
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = Path(dirpath, f)
            out[str(p.relative_to(root))] = p.stat().st_size
    return out
