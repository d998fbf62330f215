"""Segment descriptors from per-frame embeddings and cosine ranking of edit history."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDescriptor, FormatError, InvalidArgument

EMB_MAGIC = 0x4D435458
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4I")


@dataclass(frozen=True, eq=False)
class SegmentDescriptor:
    vector: np.ndarray
    frame_count: int = 1

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64).reshape(-1)
        if vec.size == 0:
            raise InvalidArgument("descriptor must have dim > 0")
        if not np.all(np.isfinite(vec)):
            raise InvalidArgument("descriptor contains non-finite values")
        if self.frame_count < 1:
            raise InvalidArgument(f"frame_count must be >= 1, got {self.frame_count}")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.size

    def __eq__(self, other):
        if not isinstance(other, SegmentDescriptor):
            return NotImplemented
        return self.frame_count == other.frame_count and np.array_equal(self.vector, other.vector)

    def __hash__(self):
        return hash((self.frame_count, self.vector.tobytes()))


def descriptor(frames) -> SegmentDescriptor:
    """Mean of per-frame embedding vectors."""
    if isinstance(frames, np.ndarray):
        arr = frames.astype(np.float64, copy=False)
    else:
        frames = list(frames)
        if not frames:
            raise InvalidArgument("cannot build a descriptor from zero frames")
        dims = {np.size(f) for f in frames}
        if len(dims) != 1:
            raise InvalidArgument(f"ragged frame embeddings, dims {sorted(dims)}")
        arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidArgument(f"expected a non-empty (frames, dim) array, got shape {arr.shape}")
    return SegmentDescriptor(arr.mean(axis=0), frame_count=arr.shape[0])


def cosine_sim(a: SegmentDescriptor, b: SegmentDescriptor) -> float:
    if a.dim != b.dim:
        raise InvalidArgument(f"descriptor dims differ: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.vector))
    nb = float(np.linalg.norm(b.vector))
    if na == 0.0 or nb == 0.0:
        raise DegenerateDescriptor("zero-norm descriptor has no direction")
    sim = float(np.dot(a.vector, b.vector)) / (na * nb)
    return min(1.0, max(-1.0, sim))


def similarities(target: SegmentDescriptor, history) -> list:
    return [cosine_sim(target, h) for h in history]


def rank_segments(target: SegmentDescriptor, history, k: int, enforce_recent_first: bool = False) -> list:
    """Indices into ``history`` (oldest first) by descending similarity, top ``k``.

    Equal similarities favour the more recent segment. With
    ``enforce_recent_first`` the last segment always leads the list.
    """
    if k < 0:
        raise InvalidArgument(f"k must be >= 0, got {k}")
    sims = similarities(target, history)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], -i))
    if enforce_recent_first and order:
        last = len(sims) - 1
        order.remove(last)
        order.insert(0, last)
    return order[:k]


# -- embedding file ------------------------------------------------------------


def write_embeddings(path, frames) -> None:
    arr = np.asarray(frames, dtype="<f4")
    if arr.ndim != 2:
        raise InvalidArgument(f"embeddings must be (frames, dim), got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_embeddings(path) -> np.ndarray:
    """Load a frame_count x dim float32 matrix."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, dim = _EMB_HEADER.unpack_from(data)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08X}")
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _EMB_HEADER.size + 4 * count * dim
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(count, dim).copy()
