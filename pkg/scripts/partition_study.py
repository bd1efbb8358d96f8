#!/usr/bin/env python3
"""Co-optimize buffer sizes with the schedule, layer by layer.

Shows how different layers prefer different on-chip memory splits under
the same total budget, and what the co-optimization buys relative to the
fixed baseline partition.

Usage: python scripts/partition_study.py [--budget BYTES]
"""

import argparse
import sys

from mipsched.arch import TENSOR_NAMES, default_simba_arch
from mipsched.cli import baseline_total_bytes, solve_layer
from mipsched.formulation import ObjectiveWeights, PartitionSpec
from mipsched.solver import SolverOptions
from mipsched.workload import LayerDims, factorize

SUITE = {
    "tiny": LayerDims(3, 1, 1, 1, 1, 4, 3),
    "conv28": LayerDims(3, 3, 28, 28, 8, 4, 3),
    "wide256": LayerDims(3, 3, 14, 14, 256, 256, 1),
    "deep512": LayerDims(3, 3, 7, 7, 512, 512, 1),
}


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", type=int, default=None, help="bytes (default: baseline total)")
    ap.add_argument("--time-limit", type=float, default=200.0)
    args = ap.parse_args()

    arch = default_simba_arch()
    budget = args.budget or baseline_total_bytes(arch)
    print(f"budget {budget} B (baseline total {baseline_total_bytes(arch)} B)")

    for name, dims in SUITE.items():
        pf = factorize(dims)
        opts = SolverOptions(time_limit_s=args.time_limit)
        fixed = solve_layer(pf, arch, ObjectiveWeights(), opts)
        part = solve_layer(
            pf, arch, ObjectiveWeights(), opts, partition=PartitionSpec(budget_bytes=budget)
        )
        if part.solution.status != "optimal" or fixed.solution.status != "optimal":
            print(f"{name}: {part.solution.status}")
            continue
        model = part.model
        picks = []
        total = 0
        for mi, menu in enumerate(model.menus):
            ent = menu.entries[part.solution.menu_selection[mi]]
            total += ent.nbytes
            picks.append(
                f"{arch.levels[menu.level].name}/{TENSOR_NAMES[menu.tensor]}={ent.nbytes}B"
            )
        print(f"\n{name}: objective {fixed.solution.objective_value:.4f} -> "
              f"{part.solution.objective_value:.4f}, {total} B used")
        print("  " + " ".join(picks))
    return 0


if __name__ == "__main__":
    sys.exit(main())
