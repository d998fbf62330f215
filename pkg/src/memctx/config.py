"""Declarative engine configuration (TOML). Defaults are the published engine settings."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidArgument
from .geometry import Intrinsics, default_intrinsics
from .merge import DEFAULT_BLOCK_POINTS, MergePolicy
from .tokens import DEFAULT_BLOCKS, DEFAULT_HEAD_DIM, TierSchedule, TokenizerSpec

ENV_VAR = "MEMCTX_CONFIG"

_SCHEMA = {
    "retrieval": {"lambda": float, "k": int},
    "grid": {"n_theta": int, "n_phi": int, "radius": float},
    "tokens": {
        "tiers": list,
        "top_cutoff": int,
        "target_tier": int,
        "user_tier": int,
        "head_dim": int,
        "blocks": int,
    },
    "merge": {
        "fraction_low": float,
        "r_base": float,
        "r_slope": float,
        "r_convention": str,
        "merge_user_input": bool,
        "block_points": list,
    },
    "rope": {"mem_layout": str},
    "intrinsics": {"width": int, "height": int, "fx": float, "fy": float, "cx": float, "cy": float},
}


@dataclass(frozen=True)
class Config:
    lam: float = 0.5
    k: int = 3
    n_theta: int = 180
    n_phi: int = 360
    radius: float = 1.0
    schedule: TierSchedule = field(default_factory=TierSchedule)
    head_dim: int = DEFAULT_HEAD_DIM
    blocks: int = DEFAULT_BLOCKS
    merge: MergePolicy = field(default_factory=MergePolicy)
    block_points: tuple = DEFAULT_BLOCK_POINTS
    mem_layout: str = "shared"
    # inference-time intrinsics for extrinsics-only trajectories; sized for 832x480 video
    intrinsics: Intrinsics = field(default_factory=lambda: default_intrinsics(832, 480))


def _typecheck(section: str, key: str, value, expected, source: str):
    loc = f"{source}: [{section}].{key}"
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"{loc}: expected integer, got boolean")
    if not isinstance(value, expected):
        raise ConfigError(f"{loc}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def _flatten(doc: dict, source: str) -> dict:
    out = {}
    for section, body in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: [{section}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key [{section}].{key}")
            out[(section, key)] = _typecheck(section, key, value, _SCHEMA[section][key], source)
    return out


def config_from_dict(doc: dict, source: str = "<config>", base: Optional[Config] = None) -> Config:
    vals = _flatten(doc, source)
    cfg = base or Config()
    get = lambda s, k, d: vals.get((s, k), d)  # noqa: E731
    try:
        sched = cfg.schedule
        tiers = get("tokens", "tiers", None)
        sched = TierSchedule(
            tiers=tuple(TokenizerSpec.parse(t) for t in tiers) if tiers is not None else sched.tiers,
            top_cutoff=get("tokens", "top_cutoff", sched.top_cutoff),
            target_tier=get("tokens", "target_tier", sched.target_tier),
            user_tier=get("tokens", "user_tier", sched.user_tier),
        )
        m = cfg.merge
        merge = MergePolicy(
            fraction_low=get("merge", "fraction_low", m.fraction_low),
            r_base=get("merge", "r_base", m.r_base),
            r_slope=get("merge", "r_slope", m.r_slope),
            r_convention=get("merge", "r_convention", m.r_convention),
            merge_user_input=get("merge", "merge_user_input", m.merge_user_input),
        )
        intr = cfg.intrinsics
        if any(s == "intrinsics" for s, _ in vals):
            w = get("intrinsics", "width", intr.width)
            h = get("intrinsics", "height", intr.height)
            base_intr = default_intrinsics(w, h)
            intr = Intrinsics(
                get("intrinsics", "fx", base_intr.fx),
                get("intrinsics", "fy", base_intr.fy),
                get("intrinsics", "cx", base_intr.cx),
                get("intrinsics", "cy", base_intr.cy),
                w,
                h,
            )
        lam = get("retrieval", "lambda", cfg.lam)
        if not 0.0 <= lam <= 1.0:
            raise InvalidArgument(f"[retrieval].lambda must lie in [0, 1], got {lam}")
        mem_layout = get("rope", "mem_layout", cfg.mem_layout)
        if mem_layout not in ("shared", "stacked"):
            raise InvalidArgument(f"[rope].mem_layout must be 'shared' or 'stacked', got {mem_layout!r}")
        return replace(
            cfg,
            lam=lam,
            k=get("retrieval", "k", cfg.k),
            n_theta=get("grid", "n_theta", cfg.n_theta),
            n_phi=get("grid", "n_phi", cfg.n_phi),
            radius=get("grid", "radius", cfg.radius),
            schedule=sched,
            head_dim=get("tokens", "head_dim", cfg.head_dim),
            blocks=get("tokens", "blocks", cfg.blocks),
            merge=merge,
            block_points=tuple(int(b) for b in get("merge", "block_points", cfg.block_points)),
            mem_layout=mem_layout,
            intrinsics=intr,
        )
    except InvalidArgument as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path=None) -> Config:
    """Read ``path``, else ``$MEMCTX_CONFIG``, else return defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return Config()
    return config_from_dict(read_toml(path), str(path))


def load_policy(path, base: MergePolicy) -> tuple:
    """Merge policy file: keys of the ``[merge]`` table, at top level or under ``[merge]``.

    Returns ``(policy, block_points or None)``.
    """
    doc = read_toml(path)
    if "merge" not in doc:
        doc = {"merge": doc}
    cfg = config_from_dict(doc, str(path), Config(merge=base))
    points = cfg.block_points if "block_points" in doc["merge"] else None
    return cfg.merge, points
