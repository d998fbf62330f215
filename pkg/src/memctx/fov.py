"""Field-of-view footprints on a sphere grid and FOV-based ranking of cached videos."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateTarget, GridMismatch, InvalidArgument
from .geometry import CameraTrajectory, Pose, SphereGrid, relative_pose, sample_sphere, visible_mask

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class FovSet:
    """Visibility footprint: bit ``m`` is set when grid sample ``m`` is seen."""

    grid_id: str
    size: int
    bits: int

    @classmethod
    def from_mask(cls, grid: SphereGrid, mask: np.ndarray) -> "FovSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (grid.size,):
            raise GridMismatch(f"mask has {mask.shape[0]} samples, grid {grid.grid_id} has {grid.size}")
        packed = np.packbits(mask, bitorder="little").tobytes()
        return cls(grid.grid_id, grid.size, int.from_bytes(packed, "little"))

    def count(self) -> int:
        return self.bits.bit_count()

    def indices(self) -> list:
        return np.flatnonzero(self.to_mask()).tolist()

    def to_mask(self) -> np.ndarray:
        raw = self.bits.to_bytes((self.size + 7) // 8, "little")
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[: self.size].astype(bool)

    def _check(self, other: "FovSet") -> None:
        if self.grid_id != other.grid_id:
            raise GridMismatch(f"cannot combine FOV sets from grids {self.grid_id} and {other.grid_id}")

    def __or__(self, other: "FovSet") -> "FovSet":
        self._check(other)
        return FovSet(self.grid_id, self.size, self.bits | other.bits)

    def __and__(self, other: "FovSet") -> "FovSet":
        self._check(other)
        return FovSet(self.grid_id, self.size, self.bits & other.bits)


@dataclass(frozen=True)
class FovScore:
    overlap: float
    contain: float
    weighted: float
    lam: float


def frame_fov(frame, grid: SphereGrid, ref: Pose) -> FovSet:
    """Samples visible from one (Intrinsics, Pose) frame after expressing it relative to ``ref``."""
    intr, pose = frame
    rel = relative_pose(pose, ref)
    return FovSet.from_mask(grid, visible_mask(grid.points, intr, rel))


def video_fov(traj: CameraTrajectory, grid: SphereGrid, ref: Optional[Pose] = None) -> FovSet:
    """Union of per-frame footprints. ``ref`` defaults to the trajectory's own first frame."""
    if len(traj) == 0:
        raise InvalidArgument("empty trajectory")
    if ref is None:
        ref = traj.frames[0][1]
    mask = np.zeros(grid.size, dtype=bool)
    for intr, pose in traj:
        mask |= visible_mask(grid.points, intr, relative_pose(pose, ref))
    return FovSet.from_mask(grid, mask)


def fov_score(target: FovSet, candidate: FovSet, lam: float = DEFAULT_LAMBDA) -> FovScore:
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument(f"lambda must lie in [0, 1], got {lam}")
    inter = (target & candidate).count()
    n_target = target.count()
    if n_target == 0:
        raise DegenerateTarget("target FOV is empty; containment score is undefined")
    union = (target | candidate).count()
    overlap = inter / union
    contain = inter / n_target
    return FovScore(overlap, contain, lam * overlap + (1.0 - lam) * contain, lam)


class FovIndex:
    """Memo of candidate footprints keyed by (entry, grid, reference pose).

    Safe to share between threads; a racing duplicate computation just
    overwrites an identical value.
    """

    def __init__(self):
        self._memo = {}
        self._lock = threading.Lock()

    def get(self, entry_id, traj: CameraTrajectory, grid: SphereGrid, ref: Pose) -> FovSet:
        key = (entry_id, grid.grid_id, ref.rotation.tobytes(), ref.translation.tobytes())
        with self._lock:
            hit = self._memo.get(key)
        if hit is None:
            hit = video_fov(traj, grid, ref)
            with self._lock:
                self._memo[key] = hit
        return hit

    def __len__(self):
        return len(self._memo)


def rank_by_fov(
    target: CameraTrajectory,
    entries: Iterable,
    k: int,
    lam: float = DEFAULT_LAMBDA,
    grid: Optional[SphereGrid] = None,
    index: Optional[FovIndex] = None,
) -> list:
    """Top-k ``(entry_id, FovScore)`` for cache entries keyed by camera trajectory.

    Target and candidates are all expressed relative to the target's first
    frame, so the sphere sits at the first target camera. Ties go to the most
    recently inserted entry, then to the smaller id.
    """
    if k < 0:
        raise InvalidArgument(f"k must be >= 0, got {k}")
    if grid is None:
        grid = sample_sphere()
    ref = target.frames[0][1]
    tgt = video_fov(target, grid, ref)
    if tgt.count() == 0:
        raise DegenerateTarget("target FOV is empty; containment score is undefined")
    scored = []
    for entry in entries:
        if not isinstance(entry.key, CameraTrajectory):
            raise InvalidArgument(f"entry {entry.entry_id} is not keyed by a camera trajectory")
        if index is not None:
            cand = index.get(entry.entry_id, entry.key, grid, ref)
        else:
            cand = video_fov(entry.key, grid, ref)
        scored.append((entry, fov_score(tgt, cand, lam)))
    scored.sort(key=lambda es: (-es[1].weighted, -es[0].created_seq, es[0].entry_id))
    return [(e.entry_id, s) for e, s in scored[:k]]
