import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_instance, reference_conv28_schedule, toy_two_level
from mipsched.arch import ArchSpec, MemLevel, MemTensorMatrix
from mipsched.formulation import (
    SPATIAL,
    TEMPORAL,
    FormulationError,
    ObjectiveWeights,
    PartitionSpec,
    build_assignment_constraints,
    build_buffer_constraints,
    build_model,
    build_spatial_constraints,
)
from mipsched.schedule import encode
from mipsched.solver import exhaustive_solve, solve
from mipsched.workload import LayerDims, factorize


def tiny_pf():
    return factorize(LayerDims(3, 1, 1, 1, 1, 4, 3))


def three_level_arch(w_cap_elems=16, extra_all=1 << 20):
    """Inner PE level, one bounded weight buffer, unbounded backing."""
    return ArchSpec(
        levels=(
            MemLevel("PE", (float(extra_all),) * 3, spatial_fanout=1, is_noc_boundary=True),
            MemLevel("WBuf", (float(w_cap_elems), 0.0, 0.0)),
            MemLevel("Mem", (math.inf,) * 3),
        ),
        B=MemTensorMatrix(rows=((1, 1, 1), (1, 0, 0), (1, 1, 1))),
        name="toy3",
    )


class TestAssignmentConstraints:
    def test_exactly_one_per_factor(self, simba):
        cons = build_assignment_constraints(tiny_pf(), simba)
        assigns = [c for c in cons if c.kind == "assign"]
        assert len(assigns) == 4  # one per prime factor
        for c in assigns:
            assert c.sense == "==" and c.rhs == 1.0
            assert all(coef == 1.0 for _vid, coef in c.terms)

    def test_at_most_one_per_slot(self, simba):
        cons = build_assignment_constraints(tiny_pf(), simba)
        slots = [c for c in cons if c.kind == "slot"]
        assert len(slots) == 6 * 4  # every level reserves a slot per factor
        assert all(c.sense == "<=" and c.rhs == 1.0 for c in slots)

    def test_all_unit_layer_trivially_feasible(self, simba):
        pf = factorize(LayerDims(1, 1, 1, 1, 1, 1, 1))
        model = build_model(pf, simba)
        assert build_assignment_constraints(pf, simba) == []
        sol = solve(model)
        assert sol.status == "optimal" and sol.objective_value == 0.0

    def test_double_assignment_violates_raw(self, simba):
        model = build_model(tiny_pf(), simba)
        vals = model.raw_values({0: (5, 0, TEMPORAL), 1: (5, 1, TEMPORAL),
                                 2: (5, 2, TEMPORAL), 3: (5, 3, TEMPORAL)})
        raw = model.raw()
        vals[raw.x_id[(0, 5, 1, TEMPORAL)]] = 1.0  # factor 0 assigned twice
        assert any(name.startswith("assign") for name in model.check_raw(vals))


class TestBufferConstraints:
    def test_feasible_at_boundary(self):
        # four two-sided channel factors exactly fill a 16-element buffer
        arch = three_level_arch(w_cap_elems=16)
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        model = build_model(pf, arch)
        x = {fi: (0, fi, TEMPORAL) for fi in range(4)}
        assert model.constraint_violations(x) == []
        con = next(c for c in model.check_cons if c.kind == "buffer" and c.level == 1)
        lhs = sum(
            model.con_contrib[model.check_cons.index(con)][fi][(0, TEMPORAL)]
            for fi in range(4)
        )
        assert math.isclose(lhs, con.rhs, rel_tol=1e-12)  # 2*2*2*2 = 16 exactly

    def test_one_more_factor_overflows(self):
        arch = three_level_arch(w_cap_elems=16)
        pf = factorize(LayerDims(3, 1, 1, 1, 4, 4, 1))  # adds a kernel factor of 3
        model = build_model(pf, arch)
        x = {fi: (0, fi, TEMPORAL) for fi in range(5)}
        bad = model.constraint_violations(x)
        assert any("WBuf" in b for b in bad)  # 48 elements > 16

    def test_unrelated_factors_do_not_count(self):
        arch = three_level_arch(w_cap_elems=2)
        pf = factorize(LayerDims(1, 1, 8, 8, 1, 1, 1))  # P, Q unrelated to weights
        model = build_model(pf, arch)
        x = {fi: (0, fi, TEMPORAL) for fi in range(model.F)}
        assert model.constraint_violations(x) == []

    def test_both_mappings_count(self):
        cons = build_buffer_constraints(tiny_pf(), toy_two_level(cap=4.0))
        # spatial and temporal variables of inner-level factors both appear
        model = build_model(tiny_pf(), toy_two_level(cap=4.0))
        ci = next(
            i for i, c in enumerate(model.check_cons) if c.kind == "buffer"
        )
        contrib = model.con_contrib[ci][0]
        assert (0, SPATIAL) not in contrib  # level 0 is the bounded level itself
        assert cons  # constraints exist for the bounded level


class TestSpatialConstraints:
    def test_reference_schedule_fits_noc(self, simba):
        pf = factorize(LayerDims(3, 3, 28, 28, 8, 4, 3))
        model = build_model(pf, simba)
        x = encode(reference_conv28_schedule(simba), pf)
        assert model.constraint_violations(x) == []
        ci = next(
            i
            for i, c in enumerate(model.check_cons)
            if c.kind == "spatial" and c.level == 4
        )
        lhs = sum(
            model.con_contrib[ci][fi].get((I, k), 0.0)
            for fi, (I, z, k) in x.items()
        )
        assert math.isclose(lhs, math.log2(12))  # 3*2*2 across 16 engines

    def test_spatial_overflow_infeasible(self, simba):
        pf = factorize(LayerDims(3, 3, 1, 1, 1, 2, 1))
        model = build_model(pf, simba)
        x = {fi: (4, fi, SPATIAL) for fi in range(3)}  # 3*3*2 = 18 > 16
        assert any("spatial" in b for b in model.constraint_violations(x))

    def test_no_spatial_assignments_trivial(self, simba):
        pf = tiny_pf()
        model = build_model(pf, simba)
        x = {fi: (5, fi, TEMPORAL) for fi in range(4)}
        assert not any(
            "spatial" in b for b in model.constraint_violations(x)
        )
        assert build_spatial_constraints(pf, simba)  # constraints still exist


class TestObjectives:
    def test_everything_outermost_zero_util(self, simba):
        model = build_model(tiny_pf(), simba)
        x = {fi: (5, fi, TEMPORAL) for fi in range(4)}
        assert model.term_values(x)["util"] == 0.0

    def test_single_buffer_util(self):
        # two kernel-width factors of 2 resident inside: log2(4) = 2
        arch = three_level_arch(w_cap_elems=64)
        pf = factorize(LayerDims(4, 1, 1, 1, 1, 1, 1))
        model = build_model(pf, arch)
        x = {0: (0, 0, TEMPORAL), 1: (0, 1, TEMPORAL)}
        terms = model.term_values(x)
        assert terms["util"] == 2.0

    def test_util_bounded_by_capacity_sum(self, simba):
        model = build_model(tiny_pf(), simba)
        sol = solve(model)
        cap_sum = sum(c.rhs for c in model.check_cons if c.kind == "buffer")
        assert model.term_values(sol.x_assignment)["util"] <= cap_sum + 1e-9

    def test_comp_of_reference_schedule(self, simba):
        pf = factorize(LayerDims(3, 3, 28, 28, 8, 4, 3))
        model = build_model(pf, simba)
        x = encode(reference_conv28_schedule(simba), pf)
        assert math.isclose(model.term_values(x)["comp"], math.log2(7056), rel_tol=1e-12)

    def test_comp_plus_spatial_is_total_work(self, simba):
        pf = factorize(LayerDims(3, 3, 28, 28, 8, 4, 3))
        model = build_model(pf, simba)
        sol = solve(model)
        comp = model.term_values(sol.x_assignment)["comp"]
        spatial = sum(
            model.factors[fi].lg
            for fi, (I, z, k) in sol.x_assignment.items()
            if k == SPATIAL
        )
        total = sum(math.log2(d) for d in pf.padded if d > 1)
        assert math.isclose(comp + spatial, total, rel_tol=1e-9)

    def test_everything_spatial_zero_comp(self):
        arch = toy_two_level(fanout=8, cap=1024.0)
        pf = factorize(LayerDims(1, 1, 1, 1, 1, 8, 1))
        model = build_model(pf, arch)
        x = {fi: (0, fi, SPATIAL) for fi in range(3)}
        assert model.term_values(x)["comp"] == 0.0

    def test_transfer_size_term(self, simba):
        # weight tile of 3*3*2*2 below the boundary
        pf = factorize(LayerDims(3, 3, 1, 1, 2, 2, 1))
        model = build_model(pf, simba)
        x = {fi: (0, fi, TEMPORAL) for fi in range(model.F)}
        terms = model.term_values(x)
        assert math.isclose(terms["D_W"], math.log2(36), rel_tol=1e-12)
        assert terms["L_W"] == terms["L_IA"] == terms["L_OA"] == 0.0

    def test_no_outer_temporal_means_no_iterations(self, simba):
        pf = factorize(LayerDims(3, 3, 1, 1, 2, 2, 1))
        model = build_model(pf, simba)
        x = {fi: (0, fi, TEMPORAL) for fi in range(model.F)}
        terms = model.term_values(x)
        assert terms["T_W"] == terms["T_IA"] == terms["T_OA"] == 0.0


class TestRawModel:
    def test_var_count_before_fixing(self, simba):
        pf = tiny_pf()
        model = build_model(pf, simba)
        assert model.var_count_before_fixing() == 4 * (6 * 4) * 2
        # spatial variables only exist where the fanout admits them
        x_vars = sum(len(ch) for ch in model.choices)
        spatial_levels = sum(1 for l in simba.levels if l.spatial_fanout > 1)
        assert x_vars == 4 * 4 * (6 + spatial_levels)

    def test_solver_solution_satisfies_raw_model(self, simba):
        pf = tiny_pf()
        model = build_model(pf, simba)
        sol = solve(model)
        vals = model.raw_values(sol.x_assignment, sol.menu_selection)
        assert model.check_raw(vals) == []

    def test_linearization_exact_by_enumeration(self):
        arch = toy_two_level(fanout=2, cap=64.0)
        pf = factorize(LayerDims(1, 1, 2, 1, 1, 2, 1))
        model = build_model(pf, arch)
        raw = model.raw()
        import itertools

        for choice in itertools.product(model.choices[0], model.choices[1]):
            if choice[0][:2] == choice[1][:2]:
                continue  # rank collision
            x = {0: choice[0], 1: choice[1]}
            vals = model.raw_values(x)
            if not model.constraint_violations(x):
                assert model.check_raw(vals) == []
            for (v, gi, fi), pid in raw.p_id.items():
                I, z = model.g_positions[gi]
                xv = vals[raw.x_id[(fi, I, z, TEMPORAL)]]
                yv = vals[raw.y_id[(v, gi)]]
                assert vals[pid] == xv * yv  # product variable is exact

    def test_y_monotone_in_solutions(self, simba):
        pf = factorize(LayerDims(1, 1, 4, 1, 2, 4, 2))
        model = build_model(pf, simba)
        sol = solve(model)
        vals = model.raw_values(sol.x_assignment)
        raw = model.raw()
        for v in range(3):
            prev = 0.0
            for gi in range(len(model.g_positions)):
                cur = vals[raw.y_id[(v, gi)]]
                assert cur >= prev
                prev = cur


class TestComposeObjective:
    def test_compose_matches_built_objective(self, simba):
        from mipsched.formulation import compose_objective

        model = build_model(tiny_pf(), simba, ObjectiveWeights(2, 0.5, 1.5))
        raw = model.raw()
        assert compose_objective(model.weights, raw.term_exprs) == raw.objective

    def test_compose_rejects_balance(self):
        from mipsched.formulation import compose_objective

        with pytest.raises(FormulationError):
            compose_objective(ObjectiveWeights(mode="balance"), {})

    def test_partition_vars_view(self):
        from mipsched.formulation import build_partition_vars

        arch = TestPartition().two_buffer_arch()
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        menus, cons = build_partition_vars(
            pf, arch, PartitionSpec(budget_bytes=24, e_min=3, e_max=4, include_baseline=False)
        )
        assert len(menus) == 2
        kinds = {c.kind for c in cons}
        assert kinds == {"menu", "budget", "buffer"}

    def test_variable_indices(self, simba):
        model = build_model(tiny_pf(), simba)
        idx = model.variable_indices()
        assert len(idx) == sum(len(ch) for ch in model.choices)
        assert idx[0].factor == (0, 0) and idx[0].mapping in (SPATIAL, TEMPORAL)

    def test_single_modes_match_weighted_combined(self):
        arch = toy_two_level(fanout=2, cap=16.0)
        pf = factorize(LayerDims(1, 1, 2, 1, 3, 2, 1))
        comp_only = solve(build_model(pf, arch, ObjectiveWeights(mode="comp")))
        combined = solve(build_model(pf, arch, ObjectiveWeights(0, 1, 0, mode="combined")))
        assert comp_only.objective_value == combined.objective_value

    def test_util_mode_is_negated_maximization(self):
        arch = toy_two_level(fanout=2, cap=16.0)
        pf = factorize(LayerDims(1, 1, 2, 1, 3, 2, 1))
        model = build_model(pf, arch, ObjectiveWeights(mode="util"))
        sol = solve(model)
        assert sol.objective_value <= 0.0
        assert math.isclose(
            -sol.objective_value, model.term_values(sol.x_assignment)["util"]
        )

    def test_default_weights_have_all_terms(self, simba):
        model = build_model(tiny_pf(), simba, ObjectiveWeights())
        x = {0: (0, 0, TEMPORAL), 1: (4, 0, TEMPORAL), 2: (4, 1, SPATIAL), 3: (5, 0, TEMPORAL)}
        t = model.term_values(x)
        expect = -t["util"] + t["comp"] + t["traffic"]
        assert math.isclose(model.objective_of(x), expect, rel_tol=1e-9)

    def test_balance_mode_absolute_difference(self):
        arch = toy_two_level(fanout=2, cap=16.0)
        pf = factorize(LayerDims(1, 1, 2, 1, 3, 2, 1))
        model = build_model(pf, arch, ObjectiveWeights(1, 1, 1, mode="balance"))
        sol = solve(model)
        assert sol.objective_value >= 0.0
        t = model.term_values(sol.x_assignment)
        assert math.isclose(sol.objective_value, abs(t["traffic"] - t["comp"]), rel_tol=1e-9)

    def test_weight_validation(self):
        with pytest.raises(FormulationError):
            ObjectiveWeights(0, 0, 0, mode="combined")
        with pytest.raises(FormulationError):
            ObjectiveWeights(-1, 1, 1)
        with pytest.raises(FormulationError):
            ObjectiveWeights(mode="nonsense")


class TestPartition:
    def two_buffer_arch(self):
        return ArchSpec(
            levels=(
                MemLevel("PE", (0.0, 0.0, 0.0), spatial_fanout=1, is_noc_boundary=True),
                MemLevel("WBuf", (16.0, 0.0, 0.0)),
                MemLevel("IBuf", (0.0, 16.0, 0.0)),
                MemLevel("Mem", (math.inf,) * 3),
            ),
            B=MemTensorMatrix(rows=((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 1))),
            name="twobuf",
        )

    def test_menu_selection_under_budget(self):
        arch = self.two_buffer_arch()
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        spec = PartitionSpec(budget_bytes=24, e_min=3, e_max=4, include_baseline=False)
        model = build_model(pf, arch, partition=spec)
        assert [len(m.entries) for m in model.menus] == [2, 2]
        # 8 + 16 = 24 bytes fits; 16 + 16 = 32 does not
        x = {fi: (3, fi, TEMPORAL) for fi in range(4)}
        assert model.constraint_violations(x, (0, 1)) == []
        assert any("budget" in b for b in model.constraint_violations(x, (1, 1)))

    def test_empty_menu_raises(self):
        arch = self.two_buffer_arch()
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        with pytest.raises(FormulationError):
            build_model(
                pf, arch, partition=PartitionSpec(budget_bytes=4, e_min=4, include_baseline=False)
            )

    def test_budget_must_be_positive(self):
        with pytest.raises(FormulationError):
            PartitionSpec(budget_bytes=0)

    def test_infeasible_budget_reported(self):
        arch = self.two_buffer_arch()
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        spec = PartitionSpec(budget_bytes=10, e_min=3, e_max=4, include_baseline=False)
        model = build_model(pf, arch, partition=spec)
        sol = solve(model)
        assert sol.status == "infeasible"
        assert sol.witness and "budget" in sol.witness
        assert exhaustive_solve(model).status == "infeasible"

    def test_baseline_menu_reproduces_fixed_model(self):
        arch = self.two_buffer_arch()
        pf = factorize(LayerDims(1, 1, 1, 1, 4, 4, 1))
        fixed = solve(build_model(pf, arch))
        # menu restricted to exactly the baseline sizes, ample budget
        spec = PartitionSpec(budget_bytes=10_000, e_min=4, e_max=4)
        model = build_model(pf, arch, partition=spec)
        pinned = solve(model)
        assert pinned.status == "optimal"
        assert pinned.objective_value == fixed.objective_value


@given(st.integers(min_value=0, max_value=3000))
@settings(max_examples=40, deadline=None)
def test_assignment_conservation(seed):
    model = random_instance(seed)
    if model is None:
        return
    sol = solve(model)
    if sol.status != "optimal":
        return
    per_dim = {}
    for fi, (I, z, k) in sol.x_assignment.items():
        f = model.factors[fi]
        per_dim[f.j] = per_dim.get(f.j, 0.0) + f.lg
    for j, total in per_dim.items():
        assert math.isclose(total, math.log2(model.pf.padded[j]), rel_tol=1e-9)
