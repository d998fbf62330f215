"""Temporal RoPE index ranges for target, user-input/previous and memory videos.

Each role owns a disjoint block of ``T`` temporal indices: target ``[0, T)``,
user input (or previous segment) ``[T, 2T)``, memory ``[2T, 3T)``. Spatial
indices are untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import InvalidArgument

NVS = "novel_view"
EDIT = "text_edit"
MEM_LAYOUTS = ("shared", "stacked")


@dataclass(frozen=True)
class RopeRanges:
    task: str
    segment_length: int
    ranges: tuple  # ((role, start, end_exclusive), ...)
    reversed_memory: bool = False
    mem_layout: str = "shared"

    def range_of(self, role: str) -> tuple:
        for name, start, end in self.ranges:
            if name == role:
                return start, end
        raise InvalidArgument(f"role {role!r} not in {self.task} layout")

    @property
    def roles(self) -> tuple:
        return tuple(r[0] for r in self.ranges)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "segment_length": self.segment_length,
            "ranges": [list(r) for r in self.ranges],
            "reversed_memory": self.reversed_memory,
            "mem_layout": self.mem_layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RopeRanges":
        return cls(
            d["task"],
            int(d["segment_length"]),
            tuple((r[0], int(r[1]), int(r[2])) for r in d["ranges"]),
            bool(d.get("reversed_memory", False)),
            d.get("mem_layout", "shared"),
        )


def _memory_ranges(T: int, mem_layout: str, n_memory: int) -> list:
    if mem_layout not in MEM_LAYOUTS:
        raise InvalidArgument(f"mem_layout must be one of {MEM_LAYOUTS}, got {mem_layout!r}")
    if mem_layout == "shared":
        return [("memory", 2 * T, 3 * T)]
    if n_memory < 1:
        raise InvalidArgument("stacked memory layout needs n_memory >= 1")
    return [(f"memory_{j + 1}", (2 + j) * T, (3 + j) * T) for j in range(n_memory)]


def layout_nvs(T: int, mem_layout: str = "shared", n_memory: int = 1) -> RopeRanges:
    if T < 1:
        raise InvalidArgument(f"segment length must be >= 1, got {T}")
    ranges = [("target", 0, T), ("user", T, 2 * T)] + _memory_ranges(T, mem_layout, n_memory)
    return RopeRanges(NVS, T, tuple(ranges), False, mem_layout)


def layout_edit(
    T: int, reversed_for_inference: bool = False, mem_layout: str = "shared", n_memory: int = 1
) -> RopeRanges:
    """Long-video editing layout. With ``reversed_for_inference`` frame ``f`` of the
    previous/memory segments maps to ``end - 1 - f`` instead of ``start + f``."""
    if T < 1:
        raise InvalidArgument(f"segment length must be >= 1, got {T}")
    ranges = [("target", 0, T), ("previous", T, 2 * T)] + _memory_ranges(T, mem_layout, n_memory)
    return RopeRanges(EDIT, T, tuple(ranges), bool(reversed_for_inference), mem_layout)


def _resolve(layout: RopeRanges, role: str, video: int) -> str:
    if role == "memory" and layout.mem_layout == "stacked":
        return f"memory_{video + 1}"
    return role


def _reversible(layout: RopeRanges, role: str) -> bool:
    return layout.task == EDIT and (role == "previous" or role.startswith("memory"))


def index_of(layout: RopeRanges, role: str, frame: int, video: int = 0) -> int:
    """Temporal RoPE index of ``frame`` of a video in ``role``.

    ``video`` picks the memory video under the stacked layout; with the
    shared layout every memory video reuses the same indices.
    """
    name = _resolve(layout, role, video)
    start, end = layout.range_of(name)
    if not 0 <= frame < layout.segment_length:
        raise InvalidArgument(f"frame {frame} outside 0..{layout.segment_length - 1}")
    if layout.reversed_memory and _reversible(layout, name):
        return end - 1 - frame
    return start + frame


def reflect(layout: RopeRanges, index: int) -> int:
    """Mirror an index inside its reversible range; other indices pass through."""
    for name, start, end in layout.ranges:
        if start <= index < end:
            return start + end - 1 - index if _reversible(layout, name) else index
    raise InvalidArgument(f"index {index} is outside the layout")


def index_table(layout: RopeRanges) -> list:
    """``(role, frame, index)`` for every role and frame, in range order."""
    rows = []
    for name, _, _ in layout.ranges:
        for f in range(layout.segment_length):
            rows.append((name, f, index_of(layout, name, f)))
    return rows


def table_json(layout: RopeRanges) -> str:
    d = layout.to_dict()
    d["table"] = [{"role": r, "frame": f, "index": i} for r, f, i in index_table(layout)]
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
