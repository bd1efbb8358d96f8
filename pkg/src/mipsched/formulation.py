"""Mixed-integer formulation of the scheduling problem.

Every prime factor of every loop bound gets exactly one configuration:
a memory level, a rank slot within that level (the permutation order),
and a spatial-or-temporal binding.  Buffer capacities, spatial fanouts
and the optional partition budget become linear constraints over the
binary allocation variables with log2 coefficients; utilization, compute
and NoC-traffic objectives are linear in the same variables, with the
traffic iteration term linearized through indicator and product
variables.

The built model carries both the raw MIP (variables, constraints,
objective, for dumps and brute-force verification) and the structured
view the bundled solver searches over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import ArchSpec, NUM_TENSORS, TENSOR_NAMES, log2_capacity
from .workload import DIM_NAMES, PrimeFactorization, total_factor_count

SPATIAL, TEMPORAL = 0, 1
MAP_NAMES = ("s", "t")

MODES = ("util", "comp", "traffic", "combined", "balance")


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the utilization / compute / traffic objective terms."""

    w_u: float = 1.0
    w_c: float = 1.0
    w_t: float = 1.0
    mode: str = "combined"

    def __post_init__(self):
        if self.mode not in MODES:
            raise FormulationError(f"unknown objective mode {self.mode!r}")
        if min(self.w_u, self.w_c, self.w_t) < 0:
            raise FormulationError("objective weights must be non-negative")
        if self.mode == "combined" and max(self.w_u, self.w_c, self.w_t) <= 0:
            raise FormulationError("combined mode needs at least one positive weight")

    def effective(self) -> tuple[float, float, float]:
        """(w_u, w_c, w_t) actually applied for the linear modes."""
        if self.mode == "util":
            return (self.w_u, 0.0, 0.0)
        if self.mode == "comp":
            return (0.0, self.w_c, 0.0)
        if self.mode == "traffic":
            return (0.0, 0.0, self.w_t)
        return (self.w_u, self.w_c, self.w_t)


@dataclass(frozen=True)
class PartitionSpec:
    """Co-optimize buffer sizes from a power-of-two menu under a byte budget.

    The menu for each storable on-chip (level, tensor) pair spans element
    exponents [e_min, e_max] (e_max defaults to what the budget admits);
    the exact baseline capacity is kept in the menu so the unpartitioned
    architecture stays a feasible point.
    """

    budget_bytes: int
    e_min: int = 4
    e_max: int | None = None
    include_baseline: bool = True

    def __post_init__(self):
        if self.budget_bytes <= 0:
            raise FormulationError("partition budget must be positive")


@dataclass(frozen=True)
class VarIndex:
    """Identity of one allocation variable: factor, slot, binding."""

    factor: tuple[int, int]  # (dimension j, ordinal n)
    level: int
    rank: int
    mapping: int  # SPATIAL or TEMPORAL


@dataclass(frozen=True)
class Factor:
    j: int
    n: int
    prime: int
    lg: float
    cls: int  # identical-factor class (same dimension, same prime)


@dataclass(frozen=True)
class MenuEntry:
    e: float  # log2 of element count (non-integer only for the baseline entry)
    elements: int
    nbytes: int


@dataclass(frozen=True)
class Menu:
    level: int
    tensor: int
    entries: tuple[MenuEntry, ...]  # ascending e


@dataclass(frozen=True)
class CheckCon:
    """A constraint the search checks incrementally (lhs from X choices)."""

    kind: str  # "buffer" or "spatial"
    name: str
    level: int
    tensor: int | None
    rhs: float  # loosest rhs (for buffer in partition mode: e_max - pad)
    menu: int | None  # menu index when the rhs is a partition variable
    pad: float  # halo-tightening pad already folded into rhs


@dataclass(frozen=True)
class RawConstraint:
    name: str
    kind: str
    terms: tuple[tuple[int, float], ...]  # (var id, coefficient)
    sense: str  # "<=", ">=", "=="
    rhs: float


class MipModel:
    """Scheduling MIP plus the structure the bundled solver exploits.

    Variable order (fixes the lexicographic tie-break): allocation
    variables factor-major (level asc, rank asc, spatial before
    temporal), then partition selectors (level asc, tensor asc, exponent
    asc), then traffic indicators, then their linearization products,
    then the balance auxiliary.
    """

    def __init__(
        self,
        pf: PrimeFactorization,
        arch: ArchSpec,
        weights: ObjectiveWeights,
        partition: PartitionSpec | None,
        capacity_pads: dict[tuple[int, int], float] | None,
    ):
        self.pf = pf
        self.arch = arch
        self.weights = weights
        self.partition = partition
        self.pads = dict(capacity_pads or {})

        self.H = arch.num_levels
        self.noc = arch.noc_level
        self.Z = total_factor_count(pf)

        classes: dict[tuple[int, int], int] = {}
        factors = []
        for j, n, prime, lg in pf.flat():
            cls = classes.setdefault((j, prime), len(classes))
            factors.append(Factor(j, n, prime, lg, cls))
        self.factors: tuple[Factor, ...] = tuple(factors)
        self.F = len(factors)

        self._build_choices()
        self._build_costs()
        self._build_check_constraints()
        self._build_menus()
        self._build_choice_classes()
        self._raw = None  # lazy raw MIP

    # ------------------------------------------------------------------
    # structure
    # ------------------------------------------------------------------

    def _build_choices(self):
        arch = self.arch
        self.choices: list[list[tuple[int, int, int]]] = []
        self.choice_index: list[dict[tuple[int, int, int], int]] = []
        self.collapsed: list[list[tuple[int, int]]] = []
        for f in self.factors:
            ch = []
            coll = []
            for I in range(self.H):
                spatial_ok = arch.levels[I].spatial_allowed(f.j)
                for z in range(self.Z):
                    if spatial_ok:
                        ch.append((I, z, SPATIAL))
                    ch.append((I, z, TEMPORAL))
                if spatial_ok:
                    coll.append((I, SPATIAL))
                coll.append((I, TEMPORAL))
            self.choices.append(ch)
            self.choice_index.append({c: i for i, c in enumerate(ch)})
            self.collapsed.append(coll)

        self.g_positions: list[tuple[int, int]] = [
            (I, z) for I in range(self.noc, self.H) for z in range(self.Z)
        ]
        self.g_index = {pos: gi for gi, pos in enumerate(self.g_positions)}

    def _build_costs(self):
        arch = self.arch
        w_u, w_c, w_t = self.weights.effective()
        self.util_pairs = arch.on_chip_pairs()

        self.util_coef: list[dict[tuple[int, int], float]] = []
        self.comp_coef: list[dict[tuple[int, int], float]] = []
        self.dl_coef: list[dict[tuple[int, int], float]] = []
        self.dl_coef_v: list[dict[tuple[int, int], tuple[float, float, float]]] = []
        self.self_t_coef: list[dict[tuple[int, int], float]] = []
        self.static_obj: list[dict[tuple[int, int], float]] = []

        for fi, f in enumerate(self.factors):
            ut, cp, dl, dlv, st, so = {}, {}, {}, {}, {}, {}
            rel = [arch.A.related(f.j, v) for v in range(NUM_TENSORS)]
            relcount = sum(rel)
            for I, k in self.collapsed[fi]:
                u = f.lg * sum(
                    1 for (Ic, v) in self.util_pairs if Ic > I and rel[v]
                )
                c = f.lg if k == TEMPORAL else 0.0
                per_v = [0.0, 0.0, 0.0]
                if I < self.noc:
                    for v in range(NUM_TENSORS):
                        if rel[v]:
                            per_v[v] = f.lg
                elif I == self.noc and k == SPATIAL:
                    for v in range(NUM_TENSORS):
                        if rel[v]:
                            per_v[v] = f.lg
                d = f.lg * relcount if (I < self.noc or (I == self.noc and k == SPATIAL)) else 0.0
                s = 0.0
                if k == TEMPORAL and I >= self.noc:
                    s = f.lg * sum(
                        1
                        for v in range(NUM_TENSORS)
                        if rel[v] and arch.B.stores(I, v)
                    )
                ut[(I, k)] = u
                cp[(I, k)] = c
                dl[(I, k)] = d
                dlv[(I, k)] = tuple(per_v)
                st[(I, k)] = s
                so[(I, k)] = -w_u * u + w_c * c + w_t * d
            self.util_coef.append(ut)
            self.comp_coef.append(cp)
            self.dl_coef.append(dl)
            self.dl_coef_v.append(dlv)
            self.self_t_coef.append(st)
            self.static_obj.append(so)

    def _build_check_constraints(self):
        arch = self.arch
        cons: list[CheckCon] = []
        contribs: list[list[dict[tuple[int, int], float]]] = []

        for I, v in self.util_pairs:
            cap = log2_capacity(arch, I, v)
            pad = self.pads.get((I, v), 0.0)
            if math.isinf(cap) and self.partition is None:
                continue
            per_factor = []
            for fi, f in enumerate(self.factors):
                d = {}
                if arch.A.related(f.j, v):
                    for Ic, k in self.collapsed[fi]:
                        if Ic < I:
                            d[(Ic, k)] = f.lg
                per_factor.append(d)
            name = f"buffer[{arch.levels[I].name}/{TENSOR_NAMES[v]}]"
            cons.append(
                CheckCon("buffer", name, I, v, cap - pad, None, pad)
            )
            contribs.append(per_factor)

        for I in range(self.H):
            if arch.levels[I].spatial_fanout <= 1:
                continue
            per_factor = []
            for fi, f in enumerate(self.factors):
                d = {}
                if (I, SPATIAL) in self.static_obj[fi]:
                    d[(I, SPATIAL)] = f.lg
                per_factor.append(d)
            cons.append(
                CheckCon(
                    "spatial",
                    f"spatial[{arch.levels[I].name}]",
                    I,
                    None,
                    math.log2(arch.levels[I].spatial_fanout),
                    None,
                    0.0,
                )
            )
            contribs.append(per_factor)

        self.check_cons = cons
        self.con_contrib = contribs

    def _build_menus(self):
        self.menus: list[Menu] = []
        self.budget_bytes: int | None = None
        if self.partition is None:
            return
        spec = self.partition
        arch = self.arch
        self.budget_bytes = spec.budget_bytes
        menu_of: dict[tuple[int, int], int] = {}
        for I, v in self.util_pairs:
            baseline = arch.capacity_elements(I, v)
            if math.isinf(baseline):
                continue
            prec = arch.precision_bytes[v]
            e_max = spec.e_max
            if e_max is None:
                e_max = int(math.floor(math.log2(spec.budget_bytes // prec))) if spec.budget_bytes >= prec else -1
            entries: dict[float, tuple[int, int]] = {}
            for e in range(spec.e_min, e_max + 1):
                entries[float(e)] = (2**e, (2**e) * prec)
            if spec.include_baseline and baseline >= 1:
                eb = math.log2(baseline)
                entries.setdefault(eb, (int(baseline), int(baseline) * prec))
            if not entries:
                raise FormulationError(
                    f"partition menu empty for {arch.levels[I].name}/{TENSOR_NAMES[v]}: "
                    f"e_min={spec.e_min} exceeds what budget {spec.budget_bytes} admits"
                )
            menu_entries = tuple(
                MenuEntry(e, elems, nbytes)
                for e, (elems, nbytes) in sorted(entries.items())
            )
            menu_of[(I, v)] = len(self.menus)
            self.menus.append(Menu(I, v, menu_entries))

        # Re-link buffer constraints to their menus; rhs becomes the menu max.
        new_cons = []
        for con in self.check_cons:
            if con.kind == "buffer" and (con.level, con.tensor) in menu_of:
                mi = menu_of[(con.level, con.tensor)]
                loosest = self.menus[mi].entries[-1].e - con.pad
                new_cons.append(
                    CheckCon(con.kind, con.name, con.level, con.tensor, loosest, mi, con.pad)
                )
            else:
                new_cons.append(con)
        self.check_cons = new_cons

    def _build_choice_classes(self):
        """Group each factor's (level, mapping) choices that are fully
        interchangeable: identical objective coefficients and identical
        contribution to every constraint, with no permutation-order
        semantics (temporal at/above the NoC is always its own class).
        The search branches once per class; the reported assignment picks
        the concrete level during canonicalization."""
        self.choice_classes: list[list[tuple[tuple[int, int], ...]]] = []
        for fi in range(self.F):
            groups: dict[tuple, list[tuple[int, int]]] = {}
            order: list[tuple] = []
            for I, k in self.collapsed[fi]:
                if k == TEMPORAL and I >= self.noc:
                    sig = ("chain", I)
                else:
                    sig = (
                        "free",
                        k,
                        self.util_coef[fi][(I, k)],
                        self.comp_coef[fi][(I, k)],
                        self.dl_coef_v[fi][(I, k)],
                        tuple(
                            self.con_contrib[ci][fi].get((I, k), 0.0)
                            for ci in range(len(self.check_cons))
                        ),
                    )
                if sig not in groups:
                    groups[sig] = []
                    order.append(sig)
                groups[sig].append((I, k))
            self.choice_classes.append([tuple(groups[s]) for s in order])

    # ------------------------------------------------------------------
    # canonical evaluation (shared by both solvers and the tests)
    # ------------------------------------------------------------------

    def _t_sums(self, x_assign: dict[int, tuple[int, int, int]]):
        """Traffic iteration sums, scanning tensors then positions.

        Returns (per-tensor T log-sums, combined sum in canonical order).
        """
        occ: dict[tuple[int, int], int] = {}
        for fi, (I, z, k) in x_assign.items():
            if k == TEMPORAL and I >= self.noc:
                occ[(I, z)] = fi
        arch = self.arch
        per_v = [0.0, 0.0, 0.0]
        total = 0.0
        for v in range(NUM_TENSORS):
            y = False
            for I, z in self.g_positions:
                fi = occ.get((I, z))
                if fi is None:
                    continue
                f = self.factors[fi]
                if arch.A.related(f.j, v) and arch.B.stores(I, v):
                    y = True
                if y:
                    per_v[v] += f.lg
                    total += f.lg
        return per_v, total

    def objective_of(
        self,
        x_assign: dict[int, tuple[int, int, int]],
        menu_sel: tuple[int, ...] | None = None,
    ) -> float:
        """Objective value of a complete assignment (canonical term order)."""
        if self.weights.mode == "balance":
            comp = 0.0
            traf = 0.0
            for fi in range(self.F):
                I, z, k = x_assign[fi]
                comp += self.comp_coef[fi][(I, k)]
                traf += self.dl_coef[fi][(I, k)]
            traf += self._t_sums(x_assign)[1]
            return abs(self.weights.w_t * traf - self.weights.w_c * comp)
        obj = 0.0
        for fi in range(self.F):
            I, z, k = x_assign[fi]
            obj += self.static_obj[fi][(I, k)]
        w_t = self.weights.effective()[2]
        if w_t != 0.0:
            obj += w_t * self._t_sums(x_assign)[1]
        return obj

    def term_values(self, x_assign: dict[int, tuple[int, int, int]]) -> dict[str, float]:
        """Raw (unweighted) objective term values for an assignment."""
        util = comp = 0.0
        d = [0.0, 0.0, 0.0]
        lift = [0.0, 0.0, 0.0]
        for fi in range(self.F):
            I, z, k = x_assign[fi]
            util += self.util_coef[fi][(I, k)]
            comp += self.comp_coef[fi][(I, k)]
            per_v = self.dl_coef_v[fi][(I, k)]
            if I < self.noc:
                for v in range(NUM_TENSORS):
                    d[v] += per_v[v]
            else:
                for v in range(NUM_TENSORS):
                    lift[v] += per_v[v]
        t_v, _ = self._t_sums(x_assign)
        out = {"util": util, "comp": comp}
        for v, name in enumerate(TENSOR_NAMES):
            out[f"D_{name}"] = d[v]
            out[f"L_{name}"] = lift[v]
            out[f"T_{name}"] = t_v[v]
        out["traffic"] = sum(d) + sum(lift) + sum(t_v)
        return out

    def lex_key(
        self,
        x_assign: dict[int, tuple[int, int, int]],
        menu_sel: tuple[int, ...] | None = None,
    ) -> tuple[int, ...]:
        """Tie-break key: ascending order == lexicographically smaller
        raw assignment vector (a one-hot 1 placed later is smaller)."""
        key = [-self.choice_index[fi][x_assign[fi]] for fi in range(self.F)]
        if self.menus:
            if menu_sel is None:
                raise ValueError("partition model needs a menu selection")
            key.extend(-mi for mi in menu_sel)
        return tuple(key)

    def constraint_violations(
        self,
        x_assign: dict[int, tuple[int, int, int]],
        menu_sel: tuple[int, ...] | None = None,
        tol: float = 1e-6,
    ) -> list[str]:
        """Re-check every capacity/spatial/budget constraint independently."""
        bad = []
        slots_seen: dict[tuple[int, int], int] = {}
        for fi in range(self.F):
            I, z, k = x_assign[fi]
            if (I, z) in slots_seen:
                bad.append(f"slot[{I},{z}] assigned twice")
            slots_seen[(I, z)] = fi
        for ci, con in enumerate(self.check_cons):
            lhs = 0.0
            for fi in range(self.F):
                I, z, k = x_assign[fi]
                lhs += self.con_contrib[ci][fi].get((I, k), 0.0)
            rhs = con.rhs
            if con.menu is not None:
                if menu_sel is None:
                    raise ValueError("partition model needs a menu selection")
                rhs = self.menus[con.menu].entries[menu_sel[con.menu]].e - con.pad
            if lhs > rhs + tol:
                bad.append(f"{con.name}: {lhs:.9f} > {rhs:.9f}")
        if self.menus:
            total = sum(
                m.entries[menu_sel[mi]].nbytes for mi, m in enumerate(self.menus)
            )
            if total > self.budget_bytes:
                bad.append(f"budget: {total} B > {self.budget_bytes} B")
        return bad

    # ------------------------------------------------------------------
    # raw MIP view
    # ------------------------------------------------------------------

    def var_count_before_fixing(self) -> int:
        return self.F * (self.H * self.Z) * 2

    def variable_indices(self) -> list[VarIndex]:
        """Identity of every allocation variable, in declaration order."""
        return [
            VarIndex(factor=(f.j, f.n), level=I, rank=z, mapping=k)
            for fi, f in enumerate(self.factors)
            for I, z, k in self.choices[fi]
        ]

    def raw(self):
        if self._raw is None:
            self._raw = _build_raw(self)
        return self._raw

    def raw_values(
        self,
        x_assign: dict[int, tuple[int, int, int]],
        menu_sel: tuple[int, ...] | None = None,
    ) -> list[float]:
        """Full variable vector for an assignment, with the indicator and
        product variables derived minimally (their optimal completion)."""
        raw = self.raw()
        vals = [0.0] * len(raw.var_names)
        for fi, (I, z, k) in x_assign.items():
            vals[raw.x_id[(fi, I, z, k)]] = 1.0
        if self.menus:
            for mi, base in enumerate(raw.menu_id_base):
                vals[base + menu_sel[mi]] = 1.0
        occ = {}
        for fi, (I, z, k) in x_assign.items():
            if k == TEMPORAL and I >= self.noc:
                occ[(I, z)] = fi
        arch = self.arch
        for v in range(NUM_TENSORS):
            y = 0.0
            for gi, (I, z) in enumerate(self.g_positions):
                fi = occ.get((I, z))
                if fi is not None:
                    f = self.factors[fi]
                    if arch.A.related(f.j, v) and arch.B.stores(I, v):
                        y = 1.0
                vals[raw.y_id[(v, gi)]] = y
                if fi is not None and y:
                    vals[raw.p_id[(v, gi, fi)]] = 1.0
        if raw.d_id is not None:
            comp = sum(vals[vid] * c for vid, c in raw.term_exprs["comp"].items())
            traf = sum(vals[vid] * c for vid, c in raw.term_exprs["traffic"].items())
            vals[raw.d_id] = abs(self.weights.w_t * traf - self.weights.w_c * comp)
        return vals

    def check_raw(self, vals: list[float], tol: float = 1e-6) -> list[str]:
        """Violated raw constraints for a full variable vector."""
        bad = []
        for con in self.raw().constraints:
            lhs = sum(vals[vid] * c for vid, c in con.terms)
            if con.sense == "<=" and lhs > con.rhs + tol:
                bad.append(con.name)
            elif con.sense == ">=" and lhs < con.rhs - tol:
                bad.append(con.name)
            elif con.sense == "==" and abs(lhs - con.rhs) > tol:
                bad.append(con.name)
        return bad


@dataclass
class RawModel:
    var_names: list[str]
    var_kinds: list[str]
    constraints: list[RawConstraint]
    objective: dict[int, float]
    x_id: dict[tuple[int, int, int, int], int]  # (fi, I, z, k) -> var id
    menu_id_base: list[int]
    y_id: dict[tuple[int, int], int]
    p_id: dict[tuple[int, int, int], int]
    d_id: int | None
    term_exprs: dict[str, dict[int, float]]


def _build_raw(m: MipModel) -> RawModel:
    names: list[str] = []
    kinds: list[str] = []

    def add_var(name: str, kind: str) -> int:
        names.append(name)
        kinds.append(kind)
        return len(names) - 1

    x_id = {}
    for fi, f in enumerate(m.factors):
        for I, z, k in m.choices[fi]:
            x_id[(fi, I, z, k)] = add_var(
                f"X_{DIM_NAMES[f.j]}{f.n}_L{I}_z{z}_{MAP_NAMES[k]}", "x"
            )
    menu_id_base = []
    for menu in m.menus:
        base = len(names)
        menu_id_base.append(base)
        for ent in menu.entries:
            add_var(
                f"S_L{menu.level}_{TENSOR_NAMES[menu.tensor]}_e{ent.e:g}", "part"
            )
    y_id = {}
    for v in range(NUM_TENSORS):
        for gi in range(len(m.g_positions)):
            y_id[(v, gi)] = add_var(f"Y_{TENSOR_NAMES[v]}_g{gi}", "y")
    p_id = {}
    for v in range(NUM_TENSORS):
        for gi, (I, z) in enumerate(m.g_positions):
            for fi, f in enumerate(m.factors):
                p_id[(v, gi, fi)] = add_var(
                    f"P_{TENSOR_NAMES[v]}_g{gi}_{DIM_NAMES[f.j]}{f.n}", "prod"
                )
    d_id = None
    if m.weights.mode == "balance":
        d_id = add_var("D_balance", "aux")

    cons: list[RawConstraint] = []

    # exactly one configuration per factor
    for fi, f in enumerate(m.factors):
        terms = tuple((x_id[(fi, I, z, k)], 1.0) for I, z, k in m.choices[fi])
        cons.append(
            RawConstraint(f"assign[{DIM_NAMES[f.j]}{f.n}]", "assign", terms, "==", 1.0)
        )
    # at most one factor per rank slot
    for I in range(m.H):
        for z in range(m.Z):
            terms = []
            for fi in range(m.F):
                for k in (SPATIAL, TEMPORAL):
                    vid = x_id.get((fi, I, z, k))
                    if vid is not None:
                        terms.append((vid, 1.0))
            if terms:
                cons.append(
                    RawConstraint(f"slot[L{I},z{z}]", "slot", tuple(terms), "<=", 1.0)
                )

    # buffer capacity / spatial fanout
    for ci, con in enumerate(m.check_cons):
        terms = []
        for fi in range(m.F):
            for (I, k), coef in m.con_contrib[ci][fi].items():
                for z in range(m.Z):
                    terms.append((x_id[(fi, I, z, k)], coef))
        if con.menu is not None:
            base = menu_id_base[con.menu]
            for ei, ent in enumerate(m.menus[con.menu].entries):
                terms.append((base + ei, -ent.e))
            rhs = -con.pad
        else:
            rhs = con.rhs
        cons.append(RawConstraint(con.name, con.kind, tuple(terms), "<=", rhs))

    # partition: one size per buffer, total bytes within budget
    if m.menus:
        for mi, menu in enumerate(m.menus):
            base = menu_id_base[mi]
            terms = tuple((base + ei, 1.0) for ei in range(len(menu.entries)))
            cons.append(
                RawConstraint(
                    f"menu[{m.arch.levels[menu.level].name}/{TENSOR_NAMES[menu.tensor]}]",
                    "menu",
                    terms,
                    "==",
                    1.0,
                )
            )
        terms = tuple(
            (menu_id_base[mi] + ei, float(ent.nbytes))
            for mi, menu in enumerate(m.menus)
            for ei, ent in enumerate(menu.entries)
        )
        cons.append(
            RawConstraint("budget", "budget", terms, "<=", float(m.budget_bytes))
        )

    # traffic iteration indicators and their products
    arch = m.arch
    for v in range(NUM_TENSORS):
        for gi, (I, z) in enumerate(m.g_positions):
            trig = []
            for fi, f in enumerate(m.factors):
                if arch.A.related(f.j, v) and arch.B.stores(I, v):
                    trig.append((x_id[(fi, I, z, TEMPORAL)], 1.0))
            terms = ((y_id[(v, gi)], 1.0),) + tuple((vid, -c) for vid, c in trig)
            cons.append(
                RawConstraint(f"ydef[{TENSOR_NAMES[v]},g{gi}]", "ydef", terms, ">=", 0.0)
            )
            if gi > 0:
                cons.append(
                    RawConstraint(
                        f"ymono[{TENSOR_NAMES[v]},g{gi}]",
                        "ydef",
                        ((y_id[(v, gi)], 1.0), (y_id[(v, gi - 1)], -1.0)),
                        ">=",
                        0.0,
                    )
                )
            for fi in range(m.F):
                pv = p_id[(v, gi, fi)]
                xv = x_id[(fi, I, z, TEMPORAL)]
                yv = y_id[(v, gi)]
                cons.append(
                    RawConstraint(
                        f"pdef1[{TENSOR_NAMES[v]},g{gi},f{fi}]",
                        "pdef",
                        ((pv, 1.0), (yv, -1.0)),
                        "<=",
                        0.0,
                    )
                )
                cons.append(
                    RawConstraint(
                        f"pdef2[{TENSOR_NAMES[v]},g{gi},f{fi}]",
                        "pdef",
                        ((pv, 1.0), (xv, -1.0)),
                        "<=",
                        0.0,
                    )
                )
                cons.append(
                    RawConstraint(
                        f"pdef3[{TENSOR_NAMES[v]},g{gi},f{fi}]",
                        "pdef",
                        ((pv, 1.0), (yv, -1.0), (xv, -1.0)),
                        ">=",
                        -1.0,
                    )
                )

    # objective terms as linear expressions
    util_expr: dict[int, float] = {}
    comp_expr: dict[int, float] = {}
    traf_expr: dict[int, float] = {}
    for fi in range(m.F):
        for I, z, k in m.choices[fi]:
            vid = x_id[(fi, I, z, k)]
            u = m.util_coef[fi][(I, k)]
            c = m.comp_coef[fi][(I, k)]
            d = m.dl_coef[fi][(I, k)]
            if u:
                util_expr[vid] = u
            if c:
                comp_expr[vid] = c
            if d:
                traf_expr[vid] = d
    for v in range(NUM_TENSORS):
        for gi in range(len(m.g_positions)):
            for fi, f in enumerate(m.factors):
                traf_expr[p_id[(v, gi, fi)]] = f.lg

    parts = {"util": util_expr, "comp": comp_expr, "traffic": traf_expr}
    if m.weights.mode == "balance":
        objective = {d_id: 1.0}
        bal = {}
        for vid, c in traf_expr.items():
            bal[vid] = bal.get(vid, 0.0) + m.weights.w_t * c
        for vid, c in comp_expr.items():
            bal[vid] = bal.get(vid, 0.0) - m.weights.w_c * c
        cons.append(
            RawConstraint(
                "balance+",
                "balance",
                ((d_id, 1.0),) + tuple((vid, -c) for vid, c in bal.items()),
                ">=",
                0.0,
            )
        )
        cons.append(
            RawConstraint(
                "balance-",
                "balance",
                ((d_id, 1.0),) + tuple((vid, c) for vid, c in bal.items()),
                ">=",
                0.0,
            )
        )
    else:
        objective = compose_objective(m.weights, parts)

    return RawModel(
        var_names=names,
        var_kinds=kinds,
        constraints=cons,
        objective=objective,
        x_id=x_id,
        menu_id_base=menu_id_base,
        y_id=y_id,
        p_id=p_id,
        d_id=d_id,
        term_exprs={"util": util_expr, "comp": comp_expr, "traffic": traf_expr},
    )


def build_model(
    pf: PrimeFactorization,
    arch: ArchSpec,
    weights: ObjectiveWeights = ObjectiveWeights(),
    partition: PartitionSpec | None = None,
    capacity_pads: dict[tuple[int, int], float] | None = None,
) -> MipModel:
    """Assemble the full scheduling MIP for one layer on one architecture.

    ``capacity_pads`` subtracts log2 headroom from individual buffer
    bounds; the solve pipeline uses it to re-solve when the exact
    validator finds halo-inflated input tiles that the linear model
    cannot see.
    """
    return MipModel(pf, arch, weights, partition, capacity_pads)


def compose_objective(
    weights: ObjectiveWeights, parts: dict[str, dict[int, float]]
) -> dict[int, float]:
    """Combine utilization/compute/traffic term expressions into one
    minimized linear objective: traffic and compute enter positively,
    utilization negated.  Balance mode is not a linear combination (it
    minimizes an absolute difference through an auxiliary variable) and
    is assembled during the model build instead."""
    if weights.mode == "balance":
        raise FormulationError("balance mode composes via an auxiliary variable")
    w_u, w_c, w_t = weights.effective()
    objective: dict[int, float] = {}
    for vid, c in parts.get("util", {}).items():
        objective[vid] = objective.get(vid, 0.0) - w_u * c
    if w_c:
        for vid, c in parts.get("comp", {}).items():
            objective[vid] = objective.get(vid, 0.0) + w_c * c
    if w_t:
        for vid, c in parts.get("traffic", {}).items():
            objective[vid] = objective.get(vid, 0.0) + w_t * c
    return objective


# Convenience views matching the individual construction steps; each
# builds a fresh model and returns the relevant slice of it.

def build_assignment_constraints(pf, arch) -> list[RawConstraint]:
    raw = build_model(pf, arch).raw()
    return [c for c in raw.constraints if c.kind in ("assign", "slot")]


def build_buffer_constraints(pf, arch) -> list[RawConstraint]:
    raw = build_model(pf, arch).raw()
    return [c for c in raw.constraints if c.kind == "buffer"]


def build_spatial_constraints(pf, arch) -> list[RawConstraint]:
    raw = build_model(pf, arch).raw()
    return [c for c in raw.constraints if c.kind == "spatial"]


def build_util_objective(pf, arch) -> dict[int, float]:
    return build_model(pf, arch).raw().term_exprs["util"]


def build_comp_objective(pf, arch) -> dict[int, float]:
    return build_model(pf, arch).raw().term_exprs["comp"]


def build_traffic_objective(pf, arch) -> dict[int, float]:
    return build_model(pf, arch).raw().term_exprs["traffic"]


def build_partition_vars(pf, arch, spec: PartitionSpec):
    """Partition menus plus the constraints they introduce: one size per
    buffer, capacity bounds linked to the chosen size, and the total-byte
    budget."""
    model = build_model(pf, arch, partition=spec)
    cons = [
        c for c in model.raw().constraints if c.kind in ("menu", "budget", "buffer")
    ]
    return model.menus, cons
