"""Frame-level attention responsiveness and its stability across transformer blocks."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import FormatError, InvalidArgument, InvalidSlab

SLAB_MAGIC = 0x534C4142
_SLAB_HEADER = struct.Struct("<5I")
SOFTMAX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AttentionSlab:
    """Single-head query/key activations of one block, with token->frame labels."""

    queries: np.ndarray
    keys: np.ndarray
    frame_index: np.ndarray
    target_mask: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        k = np.asarray(self.keys, dtype=np.float64)
        fi = np.asarray(self.frame_index)
        tm = np.asarray(self.target_mask, dtype=bool)
        if q.ndim != 2 or q.shape != k.shape:
            raise InvalidSlab(f"queries {q.shape} and keys {k.shape} must both be N x D")
        n = q.shape[0]
        if n == 0 or q.shape[1] == 0:
            raise InvalidSlab("slab has no tokens")
        if fi.shape != (n,) or tm.shape != (n,):
            raise InvalidSlab("frame_index and target_mask need one value per token")
        if not np.issubdtype(fi.dtype, np.integer) or fi.min() < 0:
            raise InvalidSlab("frame_index must hold non-negative integers")
        counts = np.bincount(fi)
        if np.any(counts == 0):
            raise InvalidSlab(f"frame {int(np.argmin(counts))} has no tokens")
        if not tm.any():
            raise InvalidSlab("slab has no target query tokens")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k))):
            raise InvalidSlab("slab contains non-finite values")
        for name, arr in (("queries", q), ("keys", k), ("frame_index", fi), ("target_mask", tm)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_tokens(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]

    @property
    def n_frames(self) -> int:
        return int(self.frame_index.max()) + 1


@dataclass(frozen=True, eq=False)
class ResponsivenessVector:
    scores: np.ndarray

    @property
    def frame_count(self) -> int:
        return self.scores.size

    def __eq__(self, other):
        if not isinstance(other, ResponsivenessVector):
            return NotImplemented
        return np.array_equal(self.scores, other.scores)


def aggregate_keys(slab: AttentionSlab) -> np.ndarray:
    """Per-frame mean key, shape (frames, D)."""
    sums = np.zeros((slab.n_frames, slab.dim))
    np.add.at(sums, slab.frame_index, slab.keys)
    counts = np.bincount(slab.frame_index, minlength=slab.n_frames)
    return sums / counts[:, None]


def frame_softmax(slab: AttentionSlab) -> np.ndarray:
    """Softmax over frames of each target query against the frame-mean keys; (n_target, frames)."""
    kbar = aggregate_keys(slab)
    q = slab.queries[slab.target_mask]
    logits = q @ kbar.T / math.sqrt(slab.dim)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def responsiveness(slab: AttentionSlab) -> ResponsivenessVector:
    p = frame_softmax(slab)
    worst = np.abs(p.sum(axis=1) - 1.0).max()
    assert worst <= SOFTMAX_TOL, f"softmax rows drift from 1 by {worst}"
    return ResponsivenessVector(p.max(axis=0))


# -- cross-block stability -----------------------------------------------------


def pearson(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Pearson r, or None when either vector is constant."""
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return None
    # sqrt(v * v) == v exactly, so a vector against itself gives exactly 1
    r = float(da @ db) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, r))


def spearman(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Spearman rho as Pearson on average ranks."""
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def bottom_k(scores: np.ndarray, k: int) -> set:
    """Indices of the ``k`` lowest scores; ties go to the lower frame index."""
    return set(np.argsort(scores, kind="stable")[:k].tolist())


def bottom_k_overlap(a: np.ndarray, b: np.ndarray, k_fraction: float) -> float:
    k = math.ceil(k_fraction * a.size)
    return len(bottom_k(a, k) & bottom_k(b, k)) / k


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sd: float
    n: int
    skipped: int = 0

    def __str__(self):
        if self.n == 0:
            return "n/a"
        return f"{self.mean:.3f} ± {self.sd:.3f}"


@dataclass(frozen=True)
class BlockStability:
    anchor: int
    compared: tuple
    pearson: MetricSummary
    spearman: MetricSummary
    bottom_k: MetricSummary


def _summarize(values) -> MetricSummary:
    got = [v for v in values if v is not None]
    skipped = len(values) - len(got)
    if not got:
        return MetricSummary(float("nan"), float("nan"), 0, skipped)
    arr = np.asarray(got)
    return MetricSummary(float(arr.mean()), float(arr.std()), len(got), skipped)


def block_stability(
    per_block: Sequence,
    anchor: int,
    k_fraction: float = 0.5,
    compare: Optional[Sequence[int]] = None,
) -> BlockStability:
    """Agreement between block ``anchor`` and later blocks (or the ``compare`` indices).

    Block indices are positions in ``per_block``. Spread is the population
    standard deviation over compared blocks. Pairs with a constant score
    vector have no correlation and are counted in ``skipped``.
    """
    vecs = [np.asarray(getattr(v, "scores", v), dtype=np.float64) for v in per_block]
    if len(vecs) < 2:
        raise InvalidArgument("need at least two blocks")
    if len({v.size for v in vecs}) != 1:
        raise InvalidArgument("blocks have different frame counts")
    if not 0 <= anchor < len(vecs):
        raise InvalidArgument(f"anchor {anchor} out of range for {len(vecs)} blocks")
    if not 0 < k_fraction <= 1:
        raise InvalidArgument(f"k_fraction must lie in (0, 1], got {k_fraction}")
    if compare is None:
        compare = range(anchor + 1, len(vecs))
    compare = tuple(b for b in compare if b != anchor)
    if not compare:
        raise InvalidArgument("no blocks to compare against the anchor")
    ref = vecs[anchor]
    return BlockStability(
        anchor,
        compare,
        _summarize([pearson(ref, vecs[b]) for b in compare]),
        _summarize([spearman(ref, vecs[b]) for b in compare]),
        _summarize([bottom_k_overlap(ref, vecs[b], k_fraction) for b in compare]),
    )


# -- slab file -----------------------------------------------------------------


def write_slab(path, slab: AttentionSlab) -> None:
    targets = np.flatnonzero(slab.target_mask).astype("<u4")
    with open(path, "wb") as fh:
        fh.write(_SLAB_HEADER.pack(SLAB_MAGIC, slab.n_tokens, slab.dim, slab.n_frames, targets.size))
        fh.write(slab.frame_index.astype("<u4").tobytes())
        fh.write(targets.tobytes())
        fh.write(slab.queries.astype("<f4").tobytes())
        fh.write(slab.keys.astype("<f4").tobytes())


def read_slab(path) -> AttentionSlab:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _SLAB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n, d, n_frames, n_target = _SLAB_HEADER.unpack_from(data)
    if magic != SLAB_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08X}")
    expected = _SLAB_HEADER.size + 4 * (n + n_target + 2 * n * d)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _SLAB_HEADER.size
    frame_index = np.frombuffer(data, "<u4", n, off).astype(np.int64)
    off += 4 * n
    targets = np.frombuffer(data, "<u4", n_target, off).astype(np.int64)
    off += 4 * n_target
    queries = np.frombuffer(data, "<f4", n * d, off).reshape(n, d)
    off += 4 * n * d
    keys = np.frombuffer(data, "<f4", n * d, off).reshape(n, d)
    if np.any(targets >= n):
        raise FormatError(f"{path}: target index out of range")
    mask = np.zeros(n, dtype=bool)
    mask[targets] = True
    try:
        slab = AttentionSlab(queries, keys, frame_index, mask)
    except InvalidSlab as exc:
        raise FormatError(f"{path}: {exc}") from None
    if slab.n_frames != n_frames:
        raise FormatError(f"{path}: header declares {n_frames} frames, tokens cover {slab.n_frames}")
    return slab
