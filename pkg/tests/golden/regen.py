"""Rebuild the golden pipeline inputs and expected outputs.

Run from the repository root: ``python3 tests/golden/regen.py``. Before
anything is written, the retrieval ranking, token counts and RoPE table are
recomputed with the brute-force oracles and must agree with the CLI.
"""

from __future__ import annotations

import json
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from helpers import SQUARE, as_tuples, random_slab, yaw_trajectory  # noqa: E402
from oracles import count_cells, fov_scores_exact, sphere_points_loop, video_fov_loop  # noqa: E402
import pipeline  # noqa: E402

from memctx.geometry import read_trajectory, write_trajectory  # noqa: E402
from memctx.responsiveness import write_slab  # noqa: E402

# (yaw start, yaw end, camera centre) for mem_1..mem_4, then the target
MEMORY = [
    (60, 100, (0.0, 0.0, 0.0)),
    (5, 40, (0.1, 0.0, -0.2)),
    (170, 220, (0.0, 0.0, 0.0)),
    (-30, 10, (0.0, 0.05, 0.1)),
]
TARGET = (0, 35, (0.0, 0.0, 0.0))
SLAB_NAMES = ["01_user_input.slab", "02_memory_1.slab", "03_memory_2.slab"]


def write_inputs(inputs: Path) -> None:
    inputs.mkdir(parents=True, exist_ok=True)
    for i, (a, b, c) in enumerate(MEMORY, 1):
        write_trajectory(yaw_trajectory(a, b, n=9, intr=SQUARE, center=c), inputs / f"mem_{i}.traj")
    a, b, c = TARGET
    write_trajectory(yaw_trajectory(a, b, n=9, intr=SQUARE, center=c), inputs / "target.traj")
    slabs = inputs / "slabs"
    slabs.mkdir(exist_ok=True)
    rng = np.random.default_rng(2024)
    for name in SLAB_NAMES:
        write_slab(slabs / name, random_slab(rng, 24, 8, pipeline.FRAMES, 6))


def oracle_retrieval(inputs: Path) -> list:
    n_theta, n_phi = (int(x) for x in pipeline.GRID.split("x"))
    pts = np.array(sphere_points_loop(n_theta, n_phi, 1.0))
    target = as_tuples(read_trajectory(inputs / "target.traj"))
    ref = (target[0][6], target[0][7])
    tgt = video_fov_loop(target, pts)
    rows = []
    for i in range(1, len(MEMORY) + 1):
        cand = video_fov_loop(as_tuples(read_trajectory(inputs / f"mem_{i}.traj")), pts, ref)
        ov, ct, w = fov_scores_exact(tgt, cand, Fraction(1, 2))
        rows.append((w, i, ov, ct))
    # best first; later insertions win ties
    rows.sort(key=lambda r: (-r[0], -r[1]))
    return [f"{n} {i} {float(w):.6f} {float(ov):.6f} {float(ct):.6f}" for n, (w, i, ov, ct) in enumerate(rows[: pipeline.K], 1)]


def check(outputs: dict, inputs: Path) -> None:
    assert outputs["03_retrieve_fov.txt"].splitlines() == oracle_retrieval(inputs), "retrieval disagrees with oracle"

    alloc = json.loads(outputs["04_plan_tokens.json"])
    for v in alloc["per_video"]:
        F, H, W = v["latent_shape"][:3]
        f, h, w = (int(x) for x in v["tokenizer"].split("x"))
        assert v["token_count"] == count_cells(F, H, W, f, h, w), v

    T = pipeline.FRAMES
    rows = [line.split() for line in outputs["06_rope.txt"].splitlines() if line and not line.startswith(("#", "role"))]
    base = {"target": 0, "user": T, "memory": 2 * T}
    assert all(int(i) == base[r] + int(f) for r, f, i in rows), "nvs rope table"
    table = json.loads(outputs["06_rope_edit.json"])["table"]
    for row in table:
        lo = {"target": 0, "previous": T, "memory": 2 * T}[row["role"]]
        want = lo + row["frame"] if row["role"] == "target" else lo + T - 1 - row["frame"]
        assert row["index"] == want, row


def main() -> None:
    inputs = pipeline.INPUTS
    write_inputs(inputs)
    with tempfile.TemporaryDirectory() as tmp:
        outputs = pipeline.run_pipeline(Path(tmp), inputs)
    check(outputs, inputs)
    pipeline.EXPECTED.mkdir(parents=True, exist_ok=True)
    for name, text in outputs.items():
        (pipeline.EXPECTED / name).write_bytes(text.encode("utf-8"))
    print(f"wrote {len(outputs)} golden files to {pipeline.EXPECTED}")


if __name__ == "__main__":
    main()
