"""Responsiveness-driven token merge plans.

The learned convolutional compressor is replaced by mean pooling over
contiguous token groups. It has the same interface (N_t tokens in,
ceil(N_t / r) tokens of the same width out), which is all planning and cost
accounting need.

Cost accounting: blocks are numbered from 1. A merge point ``b`` means
blocks ``b`` onward see the merged sequence; each later merge point
compresses the already-merged frames by ``r`` again.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument
from .tokens import TokenAllocation, _ceil_div

DEFAULT_BLOCK_POINTS = (10, 20)
CONVENTIONS = ("divisor", "kept-fraction")


@dataclass(frozen=True)
class MergePolicy:
    """``r = r_base + r_slope * (n_memory - 1)``; no merging without memory videos.

    r grows with the number of conditioning videos; the constants
    themselves are our choice. Under ``kept-fraction`` the formula yields the share
    of tokens kept and r is its reciprocal.
    """

    fraction_low: float = 0.5
    r_base: float = 2.5
    r_slope: float = 0.5
    r_convention: str = "divisor"
    merge_user_input: bool = True

    def __post_init__(self):
        if not 0.0 <= self.fraction_low <= 1.0:
            raise InvalidArgument(f"fraction_low must lie in [0, 1], got {self.fraction_low}")
        if self.r_convention not in CONVENTIONS:
            raise InvalidArgument(f"r_convention must be one of {CONVENTIONS}, got {self.r_convention!r}")

    def reduction(self, n_memory: int) -> float:
        if n_memory <= 0:
            return 1.0
        value = self.r_base + self.r_slope * (n_memory - 1)
        if self.r_convention == "kept-fraction":
            if not 0.0 < value <= 1.0:
                raise InvalidArgument(f"kept fraction must lie in (0, 1], got {value}")
            value = 1.0 / value
        if value < 1.0:
            raise InvalidArgument(f"reduction factor must be >= 1, got {value}")
        return value


def merged_count(n: int, r: float) -> int:
    """Tokens left after merging ``n`` tokens by factor ``r`` (at least one)."""
    # the epsilon keeps exact quotients like 1560/2.5 from rounding up
    return max(1, math.ceil(n / r - 1e-9))


def select_frames(scores, policy: MergePolicy, protected: Iterable[int] = ()) -> list:
    """The floor(fraction_low * T) least responsive unprotected frames, ascending."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    protected = set(protected)
    want = math.floor(policy.fraction_low * s.size + 1e-9)
    order = [i for i in np.argsort(s, kind="stable").tolist() if i not in protected]
    return sorted(order[:want])


@dataclass(frozen=True)
class MergePlan:
    block_points: tuple
    frames_to_merge: tuple  # ((role, (frame, ...)), ...)
    reduction: float
    pre_tokens: int
    post_tokens: int
    stage_tokens: tuple  # ((first_block, tokens), ...)
    discard: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frames_to_merge"] = {role: list(frames) for role, frames in self.frames_to_merge}
        d["block_points"] = list(self.block_points)
        d["stage_tokens"] = [list(s) for s in self.stage_tokens]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MergePlan":
        return cls(
            tuple(d["block_points"]),
            tuple((role, tuple(frames)) for role, frames in sorted(d["frames_to_merge"].items(), key=_role_order)),
            float(d["reduction"]),
            int(d["pre_tokens"]),
            int(d["post_tokens"]),
            tuple(tuple(s) for s in d["stage_tokens"]),
            bool(d.get("discard", False)),
        )


def _role_order(item):
    role = item[0]
    if role == "user_input":
        return (0, 0)
    if role.startswith("memory_"):
        return (1, int(role.split("_")[1]))
    return (2, role)


def plan(
    allocation: TokenAllocation,
    per_video_scores: Sequence,
    policy: MergePolicy = MergePolicy(),
    block_points: Iterable[int] = DEFAULT_BLOCK_POINTS,
    discard: bool = False,
) -> MergePlan:
    """Build a merge plan for the mergeable conditioning videos of ``allocation``.

    ``per_video_scores`` holds one responsiveness vector per mergeable video
    in allocation order (user input first when ``policy.merge_user_input``,
    then memory ranks). Target frames are never merged.
    """
    points = tuple(sorted(set(int(b) for b in block_points)))
    if any(b < 1 or b > allocation.blocks for b in points):
        raise InvalidArgument(f"block points {points} fall outside blocks 1..{allocation.blocks}")
    videos = [v for v in allocation.per_video if v.role != "target"]
    if not policy.merge_user_input:
        videos = [v for v in videos if v.role != "user_input"]
    if len(per_video_scores) != len(videos):
        raise InvalidArgument(f"got {len(per_video_scores)} score vectors for {len(videos)} mergeable videos")
    n_memory = sum(1 for v in allocation.per_video if v.role.startswith("memory_"))
    r = policy.reduction(n_memory)

    selected = []
    for video, scores in zip(videos, per_video_scores):
        s = np.asarray(getattr(scores, "scores", scores))
        n_frames = _ceil_div(video.latent_shape[0], video.tokenizer.f)
        if s.size != n_frames:
            raise InvalidArgument(f"{video.role}: {s.size} scores for {n_frames} token frames")
        frames = select_frames(s, policy) if r > 1.0 else []
        selected.append((video, frames))

    # per-frame token counts of the merged frames, advanced stage by stage
    current = []
    for video, frames in selected:
        per_frame = video.token_count // _ceil_div(video.latent_shape[0], video.tokenizer.f)
        current.extend([per_frame] * len(frames))
    pre = allocation.total_tokens
    stages = [(1, pre)]
    tokens = pre
    for b in points:
        nxt = [0 if discard else merged_count(n, r) for n in current]
        tokens -= sum(current) - sum(nxt)
        current = nxt
        stages.append((b, tokens))
    post = stages[1][1] if len(stages) > 1 else pre
    return MergePlan(
        points,
        tuple((v.role, tuple(f)) for v, f in selected),
        float(r),
        pre,
        post,
        tuple(stages),
        discard,
    )


def plan_cost(plan_: MergePlan, blocks: int, head_dim: int) -> float:
    """Modeled attention cost summed over blocks with each stage's token count."""
    bounds = [s[0] for s in plan_.stage_tokens] + [blocks + 1]
    cost = 0
    for (start, n), end in zip(plan_.stage_tokens, bounds[1:]):
        cost += (end - start) * 4 * n * n * head_dim
    return float(cost)


def plan_reduction(plan_: MergePlan, allocation: TokenAllocation) -> float:
    """``1 - cost(merged) / cost(unmerged)`` under the allocation's block/head setup."""
    base = float(allocation.blocks * 4 * plan_.pre_tokens**2 * allocation.head_dim)
    return 1.0 - plan_cost(plan_, allocation.blocks, allocation.head_dim) / base


def apply_merge(tokens: np.ndarray, r: float) -> np.ndarray:
    """Mean-pool ``N_t`` tokens into ``ceil(N_t / r)`` contiguous, near-equal groups."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise InvalidArgument(f"expected (N_t, D) tokens with N_t >= 1, got shape {tokens.shape}")
    if r < 1:
        raise InvalidArgument(f"reduction factor must be >= 1, got {r}")
    groups = np.array_split(tokens, merged_count(tokens.shape[0], r))
    return np.stack([g.mean(axis=0) for g in groups])
