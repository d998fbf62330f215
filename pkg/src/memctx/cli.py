"""``memctx`` command line.

Human-readable tables go to stdout, ``--json`` switches to machine output,
errors go to stderr. Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .cache import MemoryCache, load
from .config import load_config, load_policy
from .errors import InvalidArgument, MemctxError
from .features import descriptor, rank_segments, read_embeddings, similarities
from .fov import rank_by_fov
from .geometry import parse_grid, read_trajectory, sample_sphere
from .merge import plan, plan_reduction
from .responsiveness import block_stability, read_slab, responsiveness
from .rope import index_table, layout_edit, layout_nvs, table_json
from .tokens import (
    DEFAULT_TIERS,
    TierSchedule,
    TokenAllocation,
    TokenizerSpec,
    allocate,
    allocate_uniform,
    parse_shape,
    reduction_report,
)

COST_NOTE = "cost model: self-attention QK^T and AV multiply-adds only (4*N^2*D per block)"


def _natural_key(path: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", path.name)]


def _slab_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise InvalidArgument(f"{d}: not a directory")
    files = sorted((p for p in d.iterdir() if p.is_file() and p.suffix == ".slab"), key=_natural_key)
    if not files:
        raise InvalidArgument(f"{d}: no .slab files")
    return files


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- cache ---------------------------------------------------------------------


def cmd_cache_add(args, cfg):
    cache = MemoryCache.open(args.cache, create=True)
    if args.traj:
        key = read_trajectory(args.traj, default=cfg.intrinsics)
    else:
        key = read_embeddings(args.emb)
    entry = cache.insert(parse_shape(args.shape), key, payload=Path(args.payload) if args.payload else None)
    print(f"added entry {entry.entry_id}")


def cmd_cache_list(args, cfg):
    snap = load(args.cache).snapshot()
    if args.json:
        _emit_json({"task": snap.task, "entries": [e.to_record() for e in snap]})
        return
    print("entry_id seq task shape key payload")
    for e in snap:
        shape = "x".join(str(x) for x in e.latent_shape)
        print(f"{e.entry_id} {e.created_seq} {e.task} {shape} {e.key_ref} {e.payload_ref or '-'}")


def cmd_cache_gc(args, cfg):
    cache = load(args.cache)
    removed = cache.gc()
    for p in removed:
        print(f"removed {p.relative_to(cache.root)}")
    print(f"{len(removed)} file(s) removed")


# -- retrieval -----------------------------------------------------------------


def cmd_retrieve_fov(args, cfg):
    n_theta, n_phi = parse_grid(args.grid) if args.grid else (cfg.n_theta, cfg.n_phi)
    radius = args.radius if args.radius is not None else cfg.radius
    lam = args.lam if args.lam is not None else cfg.lam
    k = args.k if args.k is not None else cfg.k
    grid = sample_sphere(n_theta, n_phi, radius)
    target = read_trajectory(args.target, default=cfg.intrinsics)
    snap = load(args.cache).snapshot()
    results = rank_by_fov(target, snap, k, lam, grid)
    if args.json:
        _emit_json(
            [
                {"rank": i, "entry_id": eid, "weighted": s.weighted, "overlap": s.overlap, "contain": s.contain}
                for i, (eid, s) in enumerate(results, 1)
            ]
        )
        return
    for i, (eid, s) in enumerate(results, 1):
        print(f"{i} {eid} {s.weighted:.6f} {s.overlap:.6f} {s.contain:.6f}")


def cmd_retrieve_feat(args, cfg):
    k = args.k if args.k is not None else cfg.k
    target = descriptor(read_embeddings(args.target))
    snap = load(args.cache).snapshot()
    history = [e.key for e in snap]
    order = rank_segments(target, history, k, args.recent_first)
    sims = similarities(target, history)
    rows = [(i, snap.entries[j].entry_id, sims[j]) for i, j in enumerate(order, 1)]
    if args.json:
        _emit_json([{"rank": r, "entry_id": eid, "similarity": s} for r, eid, s in rows])
        return
    for r, eid, s in rows:
        print(f"{r} {eid} {s:.6f}")


# -- token planning ------------------------------------------------------------


def _schedule(text, cfg) -> TierSchedule:
    if text is None:
        return cfg.schedule
    if text == "default":
        return TierSchedule(DEFAULT_TIERS, cfg.schedule.top_cutoff, cfg.schedule.target_tier, cfg.schedule.user_tier)
    tiers = tuple(TokenizerSpec.parse(t) for t in text.split(","))
    return TierSchedule(tiers, cfg.schedule.top_cutoff)


def cmd_plan_tokens(args, cfg):
    memory = [parse_shape(s) for s in args.memory.split(",") if s] if args.memory else []
    target, user = parse_shape(args.target), parse_shape(args.user)
    sched = _schedule(args.tiers, cfg)
    alloc = allocate(target, user, memory, sched, cfg.head_dim, cfg.blocks)
    if args.json:
        sys.stdout.write(alloc.to_json())
        return
    uniform = allocate_uniform(target, user, memory, sched.tiers[0], cfg.head_dim, cfg.blocks)
    print(f"{'role':<12} {'shape':<16} {'tokenizer':<9} {'tokens':>9}")
    for v in alloc.per_video:
        shape = "x".join(str(x) for x in v.latent_shape)
        print(f"{v.role:<12} {shape:<16} {str(v.tokenizer):<9} {v.token_count:>9}")
    print(f"{'total':<12} {'':<16} {'':<9} {alloc.total_tokens:>9}")
    print(f"uniform {sched.tiers[0]} total: {uniform.total_tokens}")
    red = reduction_report(uniform, alloc, cfg.blocks, cfg.head_dim)
    print(f"modeled attention reduction vs uniform: {red:.4f}")
    print(COST_NOTE)


def cmd_plan_merge(args, cfg):
    alloc = TokenAllocation.from_json(Path(args.alloc).read_text())
    policy, points = cfg.merge, None
    if args.policy:
        policy, points = load_policy(args.policy, cfg.merge)
    if args.r_convention:
        policy = replace(policy, r_convention=args.r_convention)
    if args.block_points:
        points = tuple(int(b) for b in args.block_points.split(","))
    points = points if points is not None else cfg.block_points
    scores = [responsiveness(read_slab(p)) for p in _slab_files(args.slabs)]
    merge_plan = plan(alloc, scores, policy, points, discard=args.discard)
    out = merge_plan.to_dict()
    out["modeled_cost_reduction"] = round(plan_reduction(merge_plan, alloc), 12)
    out["cost_model"] = COST_NOTE
    _emit_json(out)


# -- responsiveness ------------------------------------------------------------


def cmd_score(args, cfg):
    r = responsiveness(read_slab(args.slab))
    if args.json:
        _emit_json({"scores": r.scores.tolist()})
        return
    print("frame R")
    for t, s in enumerate(r.scores):
        print(f"{t} {s:.6f}")


def cmd_analyze_blocks(args, cfg):
    files = _slab_files(args.slabs)
    per_block = [responsiveness(read_slab(p)) for p in files]
    n = len(per_block)
    anchors = args.anchor or [a for a in (1, 11, 21) if a < n]
    rows = []
    for a in anchors:
        if not 1 <= a < n:
            raise InvalidArgument(f"anchor block {a} needs later blocks (have blocks 1..{n})")
        rows.append((a, block_stability(per_block, a - 1, args.k)))
    if args.json:
        _emit_json(
            [
                {
                    "anchor": a,
                    "compared": [b + 1 for b in st.compared],
                    **{
                        name: {"mean": m.mean, "sd": m.sd, "n": m.n, "skipped": m.skipped}
                        for name, m in (("pearson", st.pearson), ("spearman", st.spearman), ("bottom_k", st.bottom_k))
                    },
                }
                for a, st in rows
            ]
        )
        return
    pct = f"{args.k * 100:g}%"
    print(f"{'':<20} {'Pearson r':>15} {'Spearman rho':>15} {'Bottom-k (' + pct + ')':>18}")
    for a, st in rows:
        label = f"Block {a} vs {a + 1}-{n}" if a + 1 < n else f"Block {a} vs {n}"
        print(f"{label:<20} {str(st.pearson):>15} {str(st.spearman):>15} {str(st.bottom_k):>18}")
        skipped = st.pearson.skipped + st.spearman.skipped
        if skipped:
            print(f"  ({st.pearson.skipped} pearson / {st.spearman.skipped} spearman pairs skipped: constant scores)")


# -- rope ----------------------------------------------------------------------


def cmd_rope(args, cfg):
    mem_layout = args.mem_layout or cfg.mem_layout
    if args.task == "nvs":
        if args.reverse_memory:
            raise InvalidArgument("--reverse-memory applies to the edit layout only")
        layout = layout_nvs(args.frames, mem_layout, args.n_memory)
    else:
        layout = layout_edit(args.frames, args.reverse_memory, mem_layout, args.n_memory)
    if args.json:
        sys.stdout.write(table_json(layout))
        return
    for name, start, end in layout.ranges:
        print(f"# {name} [{start}, {end})")
    print("role frame index")
    for role, f, i in index_table(layout):
        print(f"{role} {f} {i}")


def cmd_version(args, cfg):
    print(__version__)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memctx", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML config (default: $MEMCTX_CONFIG, else built-in defaults)")
    sub = p.add_subparsers(dest="command", required=True)

    cache = sub.add_parser("cache", help="manage the edit cache")
    csub = cache.add_subparsers(dest="cache_command", required=True)
    add = csub.add_parser("add", help="append an edit")
    add.add_argument("--cache", required=True)
    key = add.add_mutually_exclusive_group(required=True)
    key.add_argument("--traj", help="camera trajectory file (novel-view task)")
    key.add_argument("--emb", help="source-segment embedding file (text-edit task)")
    add.add_argument("--shape", required=True, help="latent shape FxHxWxC")
    add.add_argument("--payload", help="latent payload file to store")
    add.set_defaults(func=cmd_cache_add)
    ls = csub.add_parser("list", help="list entries")
    ls.add_argument("--cache", required=True)
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_cache_list)
    gc = csub.add_parser("gc", help="remove unreferenced files")
    gc.add_argument("--cache", required=True)
    gc.set_defaults(func=cmd_cache_gc)

    fov = sub.add_parser("retrieve-fov", help="rank cached videos by FOV overlap")
    fov.add_argument("--cache", required=True)
    fov.add_argument("--target", required=True)
    fov.add_argument("--k", type=int)
    fov.add_argument("--lambda", dest="lam", type=float)
    fov.add_argument("--grid", help="NTHETAxNPHI, e.g. 180x360")
    fov.add_argument("--radius", type=float)
    fov.add_argument("--json", action="store_true")
    fov.set_defaults(func=cmd_retrieve_fov)

    feat = sub.add_parser("retrieve-feat", help="rank cached segments by descriptor similarity")
    feat.add_argument("--cache", required=True)
    feat.add_argument("--target", required=True)
    feat.add_argument("--k", type=int)
    feat.add_argument("--recent-first", action="store_true")
    feat.add_argument("--json", action="store_true")
    feat.set_defaults(func=cmd_retrieve_feat)

    pt = sub.add_parser("plan-tokens", help="tokenizer tiers, token counts and modeled cost")
    pt.add_argument("--target", required=True)
    pt.add_argument("--user", required=True)
    pt.add_argument("--memory", default="", help="comma-separated FxHxWxC shapes, most relevant first")
    pt.add_argument("--tiers", help="'default' or comma-separated FxHxW tokenizers")
    pt.add_argument("--json", action="store_true")
    pt.set_defaults(func=cmd_plan_tokens)

    pm = sub.add_parser("plan-merge", help="plan adaptive token merging")
    pm.add_argument("--alloc", required=True, help="allocation JSON from plan-tokens --json")
    pm.add_argument("--slabs", required=True, help="directory of .slab files, one per mergeable video")
    pm.add_argument("--policy", help="merge policy TOML")
    pm.add_argument("--block-points", help="comma-separated block numbers")
    pm.add_argument("--r-convention", choices=("divisor", "kept-fraction"))
    pm.add_argument("--discard", action="store_true", help="drop selected frames instead of merging (baseline)")
    pm.set_defaults(func=cmd_plan_merge)

    sc = sub.add_parser("score", help="per-frame responsiveness of one slab")
    sc.add_argument("--slab", required=True)
    sc.add_argument("--json", action="store_true")
    sc.set_defaults(func=cmd_score)

    ab = sub.add_parser("analyze-blocks", help="cross-block stability of responsiveness")
    ab.add_argument("--slabs", required=True, help="directory of per-block .slab files")
    ab.add_argument("--anchor", type=int, action="append", help="anchor block number (1-based, repeatable)")
    ab.add_argument("--k", type=float, default=0.5, help="bottom-k fraction")
    ab.add_argument("--json", action="store_true")
    ab.set_defaults(func=cmd_analyze_blocks)

    rp = sub.add_parser("rope", help="temporal RoPE index table")
    rp.add_argument("--task", choices=("nvs", "edit"), required=True)
    rp.add_argument("--frames", type=int, required=True)
    rp.add_argument("--reverse-memory", action="store_true")
    rp.add_argument("--mem-layout", choices=("shared", "stacked"))
    rp.add_argument("--n-memory", type=int, default=1)
    rp.add_argument("--json", action="store_true")
    rp.set_defaults(func=cmd_rope)

    v = sub.add_parser("version", help="print version")
    v.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except MemctxError as exc:
        print(f"memctx: {exc.module}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"memctx: io: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"memctx: io: malformed JSON: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
