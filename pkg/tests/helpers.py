"""Deterministic builders for trajectories, slabs and caches used across tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from memctx.geometry import CameraTrajectory, Intrinsics, Pose, rot_y

SQUARE = Intrinsics(128.0, 128.0, 128.0, 128.0, 256, 256)
WIDE = Intrinsics(100.0, 100.0, 160.0, 90.0, 320, 180)


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_pose(rng, spread=1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=spread, size=3))


def random_intrinsics(rng) -> Intrinsics:
    w = int(rng.integers(64, 400))
    h = int(rng.integers(64, 400))
    f = float(rng.uniform(0.5, 1.5) * min(w, h))
    return Intrinsics(f, f * float(rng.uniform(0.9, 1.1)), w * float(rng.uniform(0.4, 0.6)), h * float(rng.uniform(0.4, 0.6)), w, h)


def random_trajectory(rng, n_frames, spread=0.3) -> CameraTrajectory:
    intr = random_intrinsics(rng)
    return CameraTrajectory(tuple((intr, random_pose(rng, spread)) for _ in range(n_frames)))


def yaw_trajectory(start_deg, end_deg, n=9, intr=SQUARE, center=(0.0, 0.0, 0.0)) -> CameraTrajectory:
    """Camera spinning in place about the vertical axis."""
    angles = np.radians(np.linspace(start_deg, end_deg, n))
    return CameraTrajectory(tuple((intr, Pose(rot_y(a), center)) for a in angles))


def as_tuples(traj) -> list:
    """(fx, fy, cx, cy, w, h, R, t) per frame, for the loop oracles."""
    return [
        (i.fx, i.fy, i.cx, i.cy, i.width, i.height, p.rotation.copy(), p.translation.copy())
        for i, p in traj
    ]


def random_slab(rng, n_tokens=16, dim=8, n_frames=4, n_target=3, scale=1.0):
    """Slab whose first ``n_target`` tokens are target queries; every frame gets a token."""
    from memctx.responsiveness import AttentionSlab

    frames = np.concatenate([np.arange(n_frames), rng.integers(0, n_frames, n_tokens - n_frames)])
    rng.shuffle(frames)
    mask = np.zeros(n_tokens, dtype=bool)
    mask[:n_target] = True
    q = rng.normal(scale=scale, size=(n_tokens, dim))
    k = rng.normal(scale=scale, size=(n_tokens, dim))
    return AttentionSlab(q, k, frames, mask)
