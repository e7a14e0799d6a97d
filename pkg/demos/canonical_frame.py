"""Canonicalization removes camera motion: the same hands seen from a walking head.

    python3 demos/canonical_frame.py
"""

import numpy as np

from handcast.geometry import RigidTransform, canonicalize_clip, rotation_about, se3_apply, se3_compose
from handcast.synth import SynthConfig, generate_clip


def main() -> None:
    rec = generate_clip(0, SynthConfig(egomotion_level=0.8, vision_tokens=False))
    print(f"{rec.clip_id}: '{rec.text}', {len(rec.poses_world)} frames")

    # move the whole world: rotate about the vertical and shift
    g = RigidTransform(rotation_about([0, 0, 1], 1.1), np.array([3.0, -2.0, 0.0]))
    moved = se3_apply(g, rec.poses_world)
    moved_extr = se3_compose(rec.extrinsics, RigidTransform(g.rotation.T, -g.rotation.T @ g.translation))

    for mode in ("yaw_only", "full_camera"):
        a = canonicalize_clip(rec.poses_world, rec.mask, rec.extrinsics, mode=mode).positions
        b = canonicalize_clip(moved, rec.mask, moved_extr, mode=mode).positions
        print(f"{mode:<12} max change after moving the world: {np.max(np.abs(a - b)):.2e} m")


if __name__ == "__main__":
    main()
