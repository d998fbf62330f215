"""Relevance-tiered tokenization budgets and a quadratic attention cost model.

The cost model counts only the two self-attention matmuls per block
(Q K^T and attn V), 2*N^2*D multiply-adds each. MLP and modulation layers
scale linearly in N and are left out; numbers are for relative comparison.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import InvalidArgument

DEFAULT_HEAD_DIM = 128
DEFAULT_BLOCKS = 30


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class TokenizerSpec:
    f: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.f, self.h, self.w) < 1:
            raise InvalidArgument(f"tokenizer factors must be >= 1, got {self}")

    @classmethod
    def parse(cls, text: str) -> "TokenizerSpec":
        try:
            f, h, w = (int(x) for x in text.lower().split("x"))
        except ValueError:
            raise InvalidArgument(f"tokenizer must look like FxHxW, got {text!r}") from None
        return cls(f, h, w)

    def __str__(self):
        return f"{self.f}x{self.h}x{self.w}"

    def token_count(self, shape) -> int:
        """Patches covering an (F, H, W, C) latent; partial patches count as whole."""
        F, H, W = shape[0], shape[1], shape[2]
        return _ceil_div(F, self.f) * _ceil_div(H, self.h) * _ceil_div(W, self.w)


DEFAULT_TIERS = (TokenizerSpec(1, 2, 2), TokenizerSpec(1, 4, 4), TokenizerSpec(1, 8, 8))


@dataclass(frozen=True)
class TierSchedule:
    """Which tokenizer each video gets.

    Memory videos ranked ``1..top_cutoff`` use ``tiers[1]``; the rest use
    ``tiers[-1]``. Target and user input use ``tiers[target_tier]`` and
    ``tiers[user_tier]``. Only the user-input and memory tiers are
    pinned down; the target mirrors the user input.
    """

    tiers: tuple = DEFAULT_TIERS
    top_cutoff: int = 3
    target_tier: int = 0
    user_tier: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tiers", tuple(self.tiers))
        if len(self.tiers) < 2:
            raise InvalidArgument("a schedule needs at least two tiers")
        if self.top_cutoff < 0:
            raise InvalidArgument(f"top_cutoff must be >= 0, got {self.top_cutoff}")
        for idx in (self.target_tier, self.user_tier):
            if not 0 <= idx < len(self.tiers):
                raise InvalidArgument(f"tier index {idx} out of range")

    def memory_tier(self, rank: int) -> TokenizerSpec:
        return self.tiers[1] if rank <= self.top_cutoff else self.tiers[-1]


@dataclass(frozen=True)
class VideoTokens:
    role: str
    latent_shape: tuple
    tokenizer: TokenizerSpec
    token_count: int


@dataclass(frozen=True)
class TokenAllocation:
    per_video: tuple
    total_tokens: int
    attention_cost: float
    head_dim: int = DEFAULT_HEAD_DIM
    blocks: int = DEFAULT_BLOCKS

    @property
    def conditioning(self) -> tuple:
        return tuple(v for v in self.per_video if v.role != "target")

    def to_dict(self) -> dict:
        d = asdict(self)
        for v in d["per_video"]:
            v["tokenizer"] = str(TokenizerSpec(**v["tokenizer"]))
            v["latent_shape"] = list(v["latent_shape"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TokenAllocation":
        try:
            videos = tuple(
                VideoTokens(
                    v["role"], tuple(v["latent_shape"]), TokenizerSpec.parse(v["tokenizer"]), int(v["token_count"])
                )
                for v in d["per_video"]
            )
            alloc = cls(videos, int(d["total_tokens"]), float(d["attention_cost"]), int(d["head_dim"]), int(d["blocks"]))
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"malformed allocation: {exc}") from None
        for v in videos:
            if v.token_count != v.tokenizer.token_count(v.latent_shape):
                raise InvalidArgument(f"allocation entry {v.role} has an inconsistent token count")
        if alloc.total_tokens != sum(v.token_count for v in videos):
            raise InvalidArgument("allocation total does not match its videos")
        return alloc

    @classmethod
    def from_json(cls, text: str) -> "TokenAllocation":
        return cls.from_dict(json.loads(text))


def parse_shape(text: str) -> tuple:
    """``"21x60x104x16"`` -> ``(21, 60, 104, 16)``."""
    try:
        shape = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise InvalidArgument(f"shape must look like FxHxWxC, got {text!r}") from None
    if len(shape) != 4 or min(shape) <= 0:
        raise InvalidArgument(f"shape must be four positive counts, got {text!r}")
    return shape


def attention_cost(total_tokens: int, head_dim: int = DEFAULT_HEAD_DIM, blocks: int = DEFAULT_BLOCKS) -> float:
    if total_tokens < 0 or head_dim <= 0 or blocks <= 0:
        raise InvalidArgument("attention_cost needs non-negative tokens and positive head_dim/blocks")
    n = int(total_tokens)
    return float(blocks * (2 * n * n * head_dim + 2 * n * n * head_dim))


def _build(videos, head_dim, blocks) -> TokenAllocation:
    total = sum(v.token_count for v in videos)
    return TokenAllocation(tuple(videos), total, attention_cost(total, head_dim, blocks), head_dim, blocks)


def allocate(
    target_shape,
    user_shape,
    memory_shapes=(),
    schedule: TierSchedule = TierSchedule(),
    head_dim: int = DEFAULT_HEAD_DIM,
    blocks: int = DEFAULT_BLOCKS,
) -> TokenAllocation:
    """Tokenize target, user input and relevance-ordered memory videos by tier."""
    videos = []
    tgt_spec = schedule.tiers[schedule.target_tier]
    usr_spec = schedule.tiers[schedule.user_tier]
    videos.append(VideoTokens("target", tuple(target_shape), tgt_spec, tgt_spec.token_count(target_shape)))
    videos.append(VideoTokens("user_input", tuple(user_shape), usr_spec, usr_spec.token_count(user_shape)))
    for rank, shape in enumerate(memory_shapes, 1):
        spec = schedule.memory_tier(rank)
        videos.append(VideoTokens(f"memory_{rank}", tuple(shape), spec, spec.token_count(shape)))
    return _build(videos, head_dim, blocks)


def allocate_uniform(
    target_shape,
    user_shape,
    memory_shapes=(),
    tokenizer: TokenizerSpec = DEFAULT_TIERS[0],
    head_dim: int = DEFAULT_HEAD_DIM,
    blocks: int = DEFAULT_BLOCKS,
) -> TokenAllocation:
    """Baseline: every video goes through the same tokenizer."""
    schedule = TierSchedule(tiers=(tokenizer, tokenizer), top_cutoff=0)
    return allocate(target_shape, user_shape, memory_shapes, schedule, head_dim, blocks)


def reduction_report(
    baseline: TokenAllocation,
    candidate: TokenAllocation,
    blocks: int = DEFAULT_BLOCKS,
    head_dim: int = DEFAULT_HEAD_DIM,
) -> float:
    """Fractional drop in modeled attention cost, ``1 - cost(candidate) / cost(baseline)``."""
    base = attention_cost(baseline.total_tokens, head_dim, blocks)
    if base == 0:
        raise InvalidArgument("baseline attention cost is zero")
    return 1.0 - attention_cost(candidate.total_tokens, head_dim, blocks) / base
