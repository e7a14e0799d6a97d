"""Rigid transforms, egocentric canonical frames, pinhole projection, egomotion.

Conventions
-----------
* Extrinsics map world points to camera points: ``p_cam = R @ p_world + t``.
* Camera axes follow the pinhole convention: +x right, +y down, +z forward.
* Joint arrays are ``(..., 42, 3)``; indices 0-20 are the left hand with the
  wrist at 0, 21-41 the right hand with the wrist at 21.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NUM_JOINTS = 42
JOINTS_PER_HAND = 21
WRISTS = (0, 21)
ORTHO_TOL = 1e-5  # accepts binary32 round trips of exact rotations
DEGENERATE_YAW_TOL = 1e-6


class GeometryError(ValueError):
    pass


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class RigidTransform:
    """World-to-camera rigid motion; may hold a leading batch of poses.

    ``rotation`` is ``(..., 3, 3)`` and ``translation`` ``(..., 3)`` in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape[-2:] != (3, 3) or t.shape[-1:] != (3,) or R.shape[:-2] != t.shape[:-1]:
            raise GeometryError(f"rotation {R.shape} and translation {t.shape} do not form a pose")
        _check_finite("rotation", R)
        _check_finite("translation", t)
        gram = np.swapaxes(R, -1, -2) @ R
        if np.max(np.abs(gram - np.eye(3)), initial=0.0) > ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if np.max(np.abs(np.linalg.det(R) - 1.0), initial=0.0) > ORTHO_TOL:
            raise GeometryError("rotation has determinant != +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, batch: tuple[int, ...] = ()) -> "RigidTransform":
        return cls(np.broadcast_to(np.eye(3), batch + (3, 3)).copy(), np.zeros(batch + (3,)))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[..., :3, :3], m[..., :3, 3])

    def matrix(self) -> np.ndarray:
        """Homogeneous ``(..., 4, 4)`` form."""
        out = np.zeros(self.rotation.shape[:-2] + (4, 4))
        out[..., :3, :3] = self.rotation
        out[..., :3, 3] = self.translation
        out[..., 3, 3] = 1.0
        return out

    def __len__(self):
        return self.rotation.shape[0]

    def __getitem__(self, index) -> "RigidTransform":
        return RigidTransform(self.rotation[index], self.translation[index])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates, -R^T t."""
        return -np.einsum("...ji,...j->...i", self.rotation, self.translation)

    @property
    def forward(self) -> np.ndarray:
        """Camera +z axis expressed in world coordinates."""
        return self.rotation[..., 2, :]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])


def se3_apply(pose: RigidTransform, points) -> np.ndarray:
    """R @ p + t for every row of ``points`` (``(..., N, 3)``)."""
    points = np.asarray(points, dtype=np.float64)
    _check_finite("points", points)
    if points.shape[-1] != 3:
        raise GeometryError(f"points must have a trailing axis of 3, got {points.shape}")
    return np.einsum("...ij,...nj->...ni", pose.rotation, points) + pose.translation[..., None, :]


def se3_inverse(pose: RigidTransform) -> RigidTransform:
    Rt = np.swapaxes(pose.rotation, -1, -2)
    return RigidTransform(Rt, -np.einsum("...ij,...j->...i", Rt, pose.translation))


def se3_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: p -> a(b(p))."""
    R = a.rotation @ b.rotation
    t = np.einsum("...ij,...j->...i", a.rotation, b.translation) + a.translation
    return RigidTransform(R, t)


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (normalized internally) axis."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def geodesic_angle(Ra, Rb) -> np.ndarray:
    """Rotation angle of Ra^T Rb in [0, pi].

    Computed as 2*asin(|Ra - Rb|_F / sqrt(8)), which equals
    arccos((tr(Ra^T Rb) - 1) / 2) for rotations but is exact at zero and
    well conditioned near it.
    """
    diff = np.asarray(Ra) - np.asarray(Rb)
    chord = np.sqrt(np.sum(diff * diff, axis=(-2, -1))) / np.sqrt(8.0)
    return 2.0 * np.arcsin(np.clip(chord, 0.0, 1.0))


def _canonical_heading(up: np.ndarray) -> np.ndarray:
    """Fixed horizontal heading: the world axis least aligned with ``up``,
    with its up component removed (+X for up = +Z)."""
    axis = np.eye(3)[int(np.argmin(np.abs(up)))]
    h = axis - up * (axis @ up)
    return h / np.linalg.norm(h)


def yaw_anchor(anchor: RigidTransform, up_axis=(0.0, 0.0, 1.0)) -> tuple[RigidTransform, bool]:
    """World-to-canonical transform keeping only camera position and heading.

    The rotation turns about ``up_axis`` so the horizontal projection of the
    camera's forward axis lands on the canonical heading. Returns the
    transform and whether the heading was degenerate (forward parallel to
    up), in which case zero yaw is used.
    """
    up = np.asarray(up_axis, dtype=np.float64)
    up = up / np.linalg.norm(up)
    fwd = anchor.forward
    horiz = fwd - up * (fwd @ up)
    norm = np.linalg.norm(horiz)
    degenerate = norm < DEGENERATE_YAW_TOL
    if degenerate:
        R = np.eye(3)
    else:
        f = horiz / norm
        h0 = _canonical_heading(up)
        src = np.stack([f, np.cross(up, f), up], axis=1)
        dst = np.stack([h0, np.cross(up, h0), up], axis=1)
        R = dst @ src.T
    c = anchor.center
    return RigidTransform(R, -R @ c), bool(degenerate)


@dataclass
class CanonicalClip:
    positions: np.ndarray  # (T, 42, 3)
    valid: np.ndarray  # (T, 42) bool
    world_to_canonical: RigidTransform
    mode: str
    degenerate_yaw: bool = False
    meta: dict = field(default_factory=dict)


def canonicalize_clip(world_poses, valid, extrinsics: RigidTransform, mode: str = "yaw_only",
                      up_axis=(0.0, 0.0, 1.0)) -> CanonicalClip:
    """Express a window of world-frame joints in the frame of its first camera.

    ``full_camera`` uses the anchor extrinsic as is. ``yaw_only`` keeps the
    anchor camera position and heading but not its pitch or roll, so the
    up axis stays vertical.
    """
    world_poses = np.asarray(world_poses, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if world_poses.ndim != 3 or world_poses.shape[1:] != (NUM_JOINTS, 3):
        raise GeometryError(f"expected poses of shape (T, {NUM_JOINTS}, 3), got {world_poses.shape}")
    if world_poses.shape[0] < 1:
        raise GeometryError("need at least one frame")
    if valid.shape != world_poses.shape[:2]:
        raise GeometryError(f"mask shape {valid.shape} does not match poses {world_poses.shape}")
    anchor = extrinsics[0] if extrinsics.rotation.ndim == 3 else extrinsics
    degenerate = False
    if mode == "full_camera":
        to_canon = anchor
    elif mode == "yaw_only":
        to_canon, degenerate = yaw_anchor(anchor, up_axis)
    else:
        raise GeometryError(f"unknown canonicalization mode {mode!r}")
    flat = se3_apply(to_canon, world_poses.reshape(-1, 3)).reshape(world_poses.shape)
    return CanonicalClip(flat, valid.copy(), to_canon, mode, degenerate,
                         {"degenerate_yaw": degenerate} if degenerate else {})


def project_to_image(joints, valid, intr: CameraIntrinsics,
                     cam_from_anchor: RigidTransform | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of anchor-frame joints.

    Returns ``(pixels (J, 2), in_front (J,))``. Pixels of joints that are
    invalid or not in front of the camera (z <= 1e-6) are NaN.
    """
    joints = np.asarray(joints, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    cam = joints if cam_from_anchor is None else se3_apply(cam_from_anchor, joints)
    z = cam[..., 2]
    in_front = (z > 1e-6) & valid
    safe_z = np.where(in_front, z, 1.0)
    u = intr.fx * cam[..., 0] / safe_z + intr.cx
    v = intr.fy * cam[..., 1] / safe_z + intr.cy
    pix = np.stack([u, v], axis=-1)
    pix[~in_front] = np.nan
    return pix, in_front


def egomotion_score(extrinsics: RigidTransform, rot_weight: float = 1.0) -> float:
    """Sum over consecutive frames of translation change plus weighted rotation angle.

    rot_weight is in meters per radian.
    """
    if extrinsics.rotation.ndim == 2 or len(extrinsics) < 2:
        return 0.0
    dt = np.linalg.norm(np.diff(extrinsics.translation, axis=0), axis=-1)
    ang = geodesic_angle(extrinsics.rotation[1:], extrinsics.rotation[:-1])
    return float(np.sum(dt + rot_weight * ang))


def camera_looking(center, yaw: float, pitch: float, roll: float = 0.0) -> RigidTransform:
    """World-to-camera pose for a camera at ``center`` (Z-up world).

    yaw is the heading about +Z measured from +X, pitch tilts the forward
    axis downward, roll spins about the forward axis.
    """
    fwd = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), -np.sin(pitch)])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    if roll:
        R = rotation_about((0, 0, 1), roll) @ R
    c = np.asarray(center, dtype=np.float64)
    return RigidTransform(R, -R @ c)


def stack_transforms(poses: list[RigidTransform]) -> RigidTransform:
    return RigidTransform(np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
