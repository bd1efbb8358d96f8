"""Shared test utilities: small random instances and reference schedules."""

import math
import random

from mipsched.arch import ArchSpec, MemLevel, MemTensorMatrix, default_simba_arch
from mipsched.formulation import ObjectiveWeights, PartitionSpec, build_model
from mipsched.schedule import Loop, Schedule
from mipsched.solver import assignment_space_size
from mipsched.workload import DIM_INDEX, LayerDims, PaddingPolicy, factorize

J = DIM_INDEX

SUITE_LAYERS = {
    "tiny": LayerDims(3, 1, 1, 1, 1, 4, 3),
    "conv28": LayerDims(3, 3, 28, 28, 8, 4, 3),
    "wide256": LayerDims(3, 3, 14, 14, 256, 256, 1),
    "deep512": LayerDims(3, 3, 7, 7, 512, 512, 1),
}


def random_instance(seed: int, max_space: int = 250_000):
    """Small solvable instance for oracle comparisons, or None if the
    drawn configuration exceeds the space budget."""
    rng = random.Random(seed)
    dims = [1] * 7
    for j in rng.sample(range(7), k=rng.randint(1, 4)):
        dims[j] = rng.choice([2, 3, 4, 5, 6, 8, 9])
    layer = LayerDims(*dims, stride=rng.choice([1, 1, 2]))
    pf = factorize(layer, PaddingPolicy(max_prime=7))

    H = rng.randint(2, 3)
    noc_at = rng.randrange(H - 1)
    levels = []
    for i in range(H):
        if i == H - 1:
            caps, fanout = (math.inf,) * 3, 1
        else:
            caps = tuple(float(rng.choice([4, 8, 16, 32, 64])) for _ in range(3))
            fanout = rng.choice([1, 2, 4])
        levels.append(
            MemLevel(f"L{i}", caps, spatial_fanout=fanout, is_noc_boundary=(i == noc_at))
        )
    rows = [[1, 1, 1] if i == H - 1 else [rng.choice([0, 1]) for _ in range(3)] for i in range(H)]
    for v in range(3):
        if not any(rows[i][v] for i in range(H - 1)):
            rows[rng.randrange(H - 1)][v] = 1
    arch = ArchSpec(
        levels=tuple(levels),
        B=MemTensorMatrix(rows=tuple(tuple(r) for r in rows)),
        precision_bytes=(1, 1, rng.choice([1, 3])),
        name=f"rand{seed}",
    )
    mode = rng.choice(["combined", "combined", "util", "comp", "traffic", "balance"])
    weights = ObjectiveWeights(
        rng.choice([0.5, 1, 2]), rng.choice([0.5, 1, 2]), rng.choice([0.5, 1, 2]), mode=mode
    )
    partition = None
    if rng.random() < 0.2:
        partition = PartitionSpec(budget_bytes=rng.choice([48, 96, 192]), e_min=2)
    try:
        model = build_model(pf, arch, weights, partition=partition)
    except Exception:
        return None
    if assignment_space_size(model) > max_space:
        return None
    return model


def toy_two_level(fanout: int = 4, cap: float = 64.0) -> ArchSpec:
    """Minimal two-level target: one bounded NoC-boundary buffer + backing."""
    return ArchSpec(
        levels=(
            MemLevel("Buf", (cap, cap, cap), spatial_fanout=fanout, is_noc_boundary=True),
            MemLevel("Mem", (math.inf,) * 3),
        ),
        B=MemTensorMatrix(rows=((1, 1, 1), (1, 1, 1))),
        name="toy2",
    )


def reference_conv28_schedule(arch=None) -> Schedule:
    """Hand-built 28x28 schedule (the inconsistent inner channel tile is
    dropped; the shared-buffer-level spatial loops sit at the NoC fanout
    and the innermost channel split at the MAC fanout)."""
    arch = arch or default_simba_arch()
    return Schedule(
        levels=(
            (Loop(J["Q"], 2, False), Loop(J["C"], 8, True)),
            (Loop(J["P"], 2, False), Loop(J["S"], 3, False)),
            (Loop(J["P"], 2, False),),
            (),
            (
                Loop(J["K"], 2, True),
                Loop(J["K"], 2, True),
                Loop(J["R"], 3, True),
                Loop(J["N"], 3, False),
                Loop(J["Q"], 7, False),
                Loop(J["P"], 7, False),
            ),
            (Loop(J["Q"], 2, False),),
        ),
        level_names=tuple(l.name for l in arch.levels),
        layer=LayerDims(3, 3, 28, 28, 8, 4, 3),
        arch_name=arch.name,
    )


def reference_tiny_schedule(arch_name: str = "simba") -> Schedule:
    """Four-factor example: K split spatially across two levels, N the
    innermost temporal loop of the shared buffer, R spatial outermost."""
    arch = default_simba_arch()
    return Schedule(
        levels=(
            (),
            (),
            (),
            (Loop(J["K"], 2, True),),
            (Loop(J["N"], 3, False), Loop(J["K"], 2, True), Loop(J["R"], 3, True)),
            (),
        ),
        level_names=tuple(l.name for l in arch.levels),
        layer=LayerDims(3, 1, 1, 1, 1, 4, 3),
        arch_name=arch_name,
    )


def input_fanout_arch() -> ArchSpec:
    """Baseline variant granting the input buffer a spatial fanout, so
    MAC-lane parallelism can bind there (the four-factor example uses it)."""
    base = default_simba_arch()
    levels = list(base.levels)
    levels[3] = MemLevel("InputBuf", (0, 8 * 1024, 0), spatial_fanout=8)
    return ArchSpec(levels=tuple(levels), name="simba-ibfan")
