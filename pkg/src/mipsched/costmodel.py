"""Product-domain analytical cost model.

Everything here works on exact integer products of loop bounds, the
counterpart of the formulation's log-domain linear terms.  Element
counts are the native unit; bytes appear only where latency or budgets
are involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .arch import ArchSpec, IA, NUM_TENSORS, OA
from .workload import DIM_INDEX

if TYPE_CHECKING:
    from .schedule import Schedule


def dim_tile(schedule: "Schedule", j: int, below_level: int) -> int:
    """Product of dimension j's bounds at levels strictly inside below_level."""
    t = 1
    for I in range(below_level):
        for loop in schedule.levels[I]:
            if loop.dim == j:
                t *= loop.bound
    return t


def tile_elements(
    schedule: "Schedule", arch: ArchSpec, level: int, v: int, halo: bool = False
) -> int:
    """Elements of tensor v resident inside `level` for one tile.

    Plain mode multiplies the related dimension tiles (what the linear
    model sees).  Halo mode sizes the input-activation window physically:
    width (P_t - 1) * stride + R_t, height likewise from Q and S.
    """
    if halo and v == IA:
        p_t = dim_tile(schedule, DIM_INDEX["P"], level)
        q_t = dim_tile(schedule, DIM_INDEX["Q"], level)
        r_t = dim_tile(schedule, DIM_INDEX["R"], level)
        s_t = dim_tile(schedule, DIM_INDEX["S"], level)
        c_t = dim_tile(schedule, DIM_INDEX["C"], level)
        n_t = dim_tile(schedule, DIM_INDEX["N"], level)
        stride = schedule.layer.stride
        width = (p_t - 1) * stride + r_t
        height = (q_t - 1) * stride + s_t
        return width * height * c_t * n_t
    t = 1
    for j in arch.A.dims_of(v):
        t *= dim_tile(schedule, j, level)
    return t


def compute_cycles(schedule: "Schedule") -> int:
    """Product of all temporal loop bounds (cycles per PE, fully pipelined)."""
    t = 1
    for loops in schedule.levels:
        for loop in loops:
            if not loop.spatial:
                t *= loop.bound
    return t


def spatial_product(schedule: "Schedule", level: int) -> int:
    t = 1
    for loop in schedule.levels[level]:
        if loop.spatial:
            t *= loop.bound
    return t


@dataclass(frozen=True)
class TrafficClassEntry:
    tensor: int
    dim: int
    bound: int
    klass: str  # "unicast" | "multicast" | "reduction"


def classify_traffic(schedule: "Schedule", arch: ArchSpec) -> list[TrafficClassEntry]:
    """Traffic class of every spatially mapped NoC-level loop, per tensor.

    A spatial dimension related to the tensor splits it across PEs
    (unicast); an unrelated dimension replicates weights/inputs
    (multicast) or accumulates partial sums (reduction for outputs).
    """
    noc = arch.noc_level
    out = []
    for loop in schedule.levels[noc]:
        if not loop.spatial:
            continue
        for v in range(NUM_TENSORS):
            if arch.A.related(loop.dim, v):
                klass = "unicast"
            elif v == OA:
                klass = "reduction"
            else:
                klass = "multicast"
            out.append(TrafficClassEntry(v, loop.dim, loop.bound, klass))
    return out


@dataclass(frozen=True)
class TensorTraffic:
    per_transfer_elems: int
    link_multiplier: int
    iterations: int
    reduction_multiplier: int
    total_elems: int


def _iterations(schedule: "Schedule", arch: ArchSpec, v: int) -> int:
    """Temporal transfer count at the NoC: once a loop relevant to the
    tensor (and storable at its level) is seen, every outer temporal loop
    multiplies the count."""
    noc = arch.noc_level
    seen = False
    t = 1
    for I in range(noc, arch.num_levels):
        for loop in schedule.levels[I]:
            if loop.spatial:
                continue
            if arch.A.related(loop.dim, v) and arch.B.stores(I, v):
                seen = True
            if seen:
                t *= loop.bound
    return t


def traffic_terms(
    schedule: "Schedule", arch: ArchSpec, include_reduction: bool = False
) -> tuple[TensorTraffic, TensorTraffic, TensorTraffic]:
    """Per-tensor NoC traffic: transfer size x link multiplier x iterations.

    ``include_reduction`` additionally charges output partial-sum
    reduction across unrelated spatial dimensions; the linear model never
    includes this term, so it stays off wherever log/product agreement is
    checked.
    """
    noc = arch.noc_level
    out = []
    for v in range(NUM_TENSORS):
        d = tile_elements(schedule, arch, noc, v, halo=False)
        link = 1
        red = 1
        for loop in schedule.levels[noc]:
            if not loop.spatial:
                continue
            if arch.A.related(loop.dim, v):
                link *= loop.bound
            elif v == OA:
                red *= loop.bound
        iters = _iterations(schedule, arch, v)
        total = d * link * iters
        if include_reduction and v == OA:
            total *= red
        out.append(TensorTraffic(d, link, iters, red if v == OA else 1, total))
    return tuple(out)


def traffic_bytes(traffic, arch: ArchSpec) -> int:
    return sum(t.total_elems * arch.precision_bytes[v] for v, t in enumerate(traffic))


def noc_transfer_cycles(traffic, arch: ArchSpec) -> int:
    return math.ceil(traffic_bytes(traffic, arch) / arch.noc_bandwidth)
