"""Deterministic solver for the scheduling MIP.

`solve` runs a branch-and-bound specialized to the model's structure: it
branches over exactly-one factor groups (largest log-factor first),
tracks permutation order at and above the NoC boundary only for
temporal factors (where it matters), and collapses both interchangeable
identical factors and fully equivalent (level, mapping) choices, so each
distinct schedule class is searched once.  Pruning combines a per-factor
best-case bound, a root Lagrangian relaxation of the capacity
constraints, and per-constraint fractional knapsack relaxations; the
partial traffic term is monotone under extension and included exactly.
Reported assignments are canonicalized to the lexicographically smallest
member of their class, so results are bit-stable across runs and worker
counts.

`exhaustive_solve` enumerates the raw assignment space and serves as the
independent optimality oracle for desk-scale instances.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .formulation import TEMPORAL, MipModel

INF = math.inf
EPS_PRUNE = 1e-9
EXHAUSTIVE_SPACE_LIMIT = 10_000_000


class SpaceTooLarge(ValueError):
    pass


@dataclass
class SolverOptions:
    """Knobs for both solvers.

    The tie-break rule is fixed: among equal-objective optima, the
    lexicographically smallest assignment vector wins.  Worker count
    never changes the returned solution, only (possibly) node counts.
    """

    time_limit_s: float = 300.0
    tolerance: float = 1e-6
    tie_break: str = "lexmin"
    threads: int = 1

    def __post_init__(self):
        if self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class SolveStats:
    nodes: int = 0
    leaves: int = 0
    wall_time_s: float = 0.0


@dataclass
class Solution:
    """Solver outcome.  `objective_value`, `x_assignment` (factor index ->
    (level, rank, mapping)) and `menu_selection` are deterministic;
    stats are informational only."""

    status: str  # "optimal" | "infeasible" | "timeout"
    objective_value: float | None
    x_assignment: dict[int, tuple[int, int, int]] | None
    menu_selection: tuple[int, ...] | None
    stats: SolveStats
    witness: tuple[str, ...] | None = None


# ----------------------------------------------------------------------
# canonical assignment (lexicographically smallest vector of a leaf class)
# ----------------------------------------------------------------------


class _LevelState:
    __slots__ = ("used", "chain_pins", "chain_len", "fixed_unpinned")

    def __init__(self, chain_len: int, fixed_here: int):
        self.used: set[int] = set()
        self.chain_pins: dict[int, int] = {}
        self.chain_len = chain_len
        self.fixed_unpinned = fixed_here


def _level_feasible(st: _LevelState, Z: int) -> bool:
    """Can the level's remaining fixed placements still be embedded?"""
    if Z - len(st.used) < st.fixed_unpinned:
        return False
    pins = sorted(st.chain_pins.items())
    prev_pos, prev_z = -1, -1
    for pos, z in pins:
        if z <= prev_z:
            return False
        run = pos - prev_pos - 1
        if run > 0:
            avail = sum(1 for zz in range(prev_z + 1, z) if zz not in st.used)
            if avail < run:
                return False
        prev_pos, prev_z = pos, z
    run = st.chain_len - prev_pos - 1
    if run > 0:
        avail = sum(1 for zz in range(prev_z + 1, Z) if zz not in st.used)
        if avail < run:
            return False
    return True


def _zmax(st: _LevelState, pos: int | None, Z: int, fixed: bool) -> int | None:
    """Highest rank this placement can take while the rest stays embeddable."""
    if pos is None:
        lo, hi = -1, Z
    else:
        lo = max((z for p, z in st.chain_pins.items() if p < pos), default=-1)
        hi = min((z for p, z in st.chain_pins.items() if p > pos), default=Z)
    for z in range(hi - 1, lo, -1):
        if z in st.used:
            continue
        st.used.add(z)
        if fixed:
            st.fixed_unpinned -= 1
        if pos is not None:
            st.chain_pins[pos] = z
        ok = _level_feasible(st, Z)
        st.used.discard(z)
        if fixed:
            st.fixed_unpinned += 1
        if pos is not None:
            del st.chain_pins[pos]
        if ok:
            return z
    return None


def canonical_assignment(
    model: MipModel,
    choice_cls: list[tuple[tuple[int, int], ...]],
    chains: dict[int, list[int]],
) -> dict[int, tuple[int, int, int]]:
    """Lexicographically smallest raw assignment realizing a leaf class.

    A leaf fixes, per factor, a class of interchangeable (level, mapping)
    options, plus the relative order of temporal factors at levels >= the
    NoC boundary.  Identical factors may be permuted, option levels and
    rank slots shifted freely within the class; this picks, factor by
    declared order, the placement with the highest (level, rank, mapping)
    that keeps the remainder completable (a later one-hot position is a
    lexicographically smaller vector).
    """
    Z = model.Z
    chain_pos: dict[int, int] = {}
    for I, lst in chains.items():
        for pos, fi in enumerate(lst):
            chain_pos[fi] = pos

    # placement: (options tuple, chain position or None)
    remaining: dict[int, list[tuple[tuple[tuple[int, int], ...], int | None]]] = {}
    fixed_count: dict[int, int] = {}
    for fi, options in enumerate(choice_cls):
        p = (options, chain_pos.get(fi))
        remaining.setdefault(model.factors[fi].cls, []).append(p)
        option_levels = {I for I, _k in options}
        if len(option_levels) == 1:
            I = next(iter(option_levels))
            fixed_count[I] = fixed_count.get(I, 0) + 1

    all_levels = {I for options in choice_cls for I, _k in options}
    all_levels.update(chains.keys())
    states = {
        I: _LevelState(len(chains.get(I, [])), fixed_count.get(I, 0))
        for I in all_levels
    }

    def pin(I, z, pos, fixed):
        st = states[I]
        st.used.add(z)
        if fixed:
            st.fixed_unpinned -= 1
        if pos is not None:
            st.chain_pins[pos] = z

    def unpin(I, z, pos, fixed):
        st = states[I]
        st.used.discard(z)
        if fixed:
            st.fixed_unpinned += 1
        if pos is not None:
            del st.chain_pins[pos]

    F = model.F

    def rec(fi: int) -> list[tuple[int, int, int]] | None:
        if fi == F:
            return []
        cls = model.factors[fi].cls
        cands = []
        seen = set()
        for p in remaining[cls]:
            if p in seen:
                continue
            seen.add(p)
            options, pos = p
            fixed = len({I for I, _k in options}) == 1
            for I, k in options:
                z = _zmax(states[I], pos, Z, fixed)
                if z is not None:
                    cands.append(((I, z, k), p, fixed))
        if not cands:
            return None
        best = max(c[0] for c in cands)
        tied = [c for c in cands if c[0] == best]
        results = []
        for (I, z, k), p, fixed in tied:
            remaining[cls].remove(p)
            pin(I, z, p[1], fixed)
            suffix = rec(fi + 1)
            unpin(I, z, p[1], fixed)
            remaining[cls].append(p)
            if suffix is not None:
                results.append([(I, z, k)] + suffix)
        if not results:
            return None
        if len(results) == 1:
            return results[0]

        # rare exact tie: keep the lexicographically smallest suffix
        def key_of(assign_suffix):
            return tuple(
                -model.choice_index[fi + off][c]
                for off, c in enumerate(assign_suffix)
            )

        return min(results, key=key_of)

    suffix = rec(0)
    if suffix is None:
        raise RuntimeError("canonicalization failed on a feasible leaf")
    return {fi: suffix[fi] for fi in range(F)}


# ----------------------------------------------------------------------
# branch and bound
# ----------------------------------------------------------------------


class _Incumbent:
    def __init__(self):
        self.lock = threading.Lock()
        self.obj = INF
        self.key = None
        self.x = None
        self.menu = None

    def beats(self, obj, key) -> bool:
        return self.x is None or (obj, key) < (self.obj, self.key)

    def offer(self, obj, key, x, menu) -> bool:
        with self.lock:
            if self.beats(obj, key):
                self.obj, self.key, self.x, self.menu = obj, key, x, menu
                return True
            return False


class _Search:
    """One worker's depth-first search state over the collapsed space."""

    def __init__(self, model: MipModel, opts: SolverOptions, incumbent: _Incumbent,
                 deadline: float, stop: threading.Event,
                 shared: "_Shared | None" = None):
        m = self.m = model
        self.opts = opts
        self.tol = opts.tolerance
        self.inc = incumbent
        self.deadline = deadline
        self.stop = stop
        self.nodes = 0
        self.leaves = 0

        self.shared = shared if shared is not None else _Shared(model, opts)
        sh = self.shared
        self.order = sh.order
        self.prev_same = sh.prev_same
        self.wu, self.wc, self.wt = m.weights.effective()
        self.balance = m.weights.mode == "balance"

        self.ncons = len(m.check_cons)
        self.con_rhs = sh.con_rhs
        self.fi_cons = sh.fi_cons
        self.con_of_menu = sh.con_of_menu

        # mutable state
        F = m.F
        self.choice_val: list[tuple[tuple[int, int], ...] | None] = [None] * F
        self.chains: dict[int, list[int]] = {I: [] for I in range(m.noc, m.H)}
        self.con_lhs = [0.0] * self.ncons
        self.static_sum = 0.0
        self.comp_sum = 0.0
        self.dl_sum = 0.0
        self.t_stack = [0.0]

    # -- helpers -------------------------------------------------------

    def timed_out(self) -> bool:
        if self.stop.is_set():
            return True
        if self.nodes % 512 == 0 and time.perf_counter() > self.deadline:
            self.stop.set()
            return True
        return False

    def _chain_profile(self):
        """O(1)-per-insertion traffic deltas for the current chains.

        Returns (level offsets into the flattened order, cumulative lg
        sums, per-tensor first-trigger index or None)."""
        m = self.m
        offsets = {}
        seq_lg = []
        trig_at = []
        n = 0
        for I in range(m.noc, m.H):
            offsets[I] = n
            stores = [m.arch.B.stores(I, v) for v in range(3)]
            for fi in self.chains[I]:
                f = m.factors[fi]
                seq_lg.append(f.lg)
                trig_at.append(
                    tuple(stores[v] and m.arch.A.related(f.j, v) for v in range(3))
                )
                n += 1
        cum = [0.0] * (n + 1)
        for i in range(n):
            cum[i + 1] = cum[i] + seq_lg[i]
        first = [None, None, None]
        for i in range(n):
            for v in range(3):
                if first[v] is None and trig_at[i][v]:
                    first[v] = i
        return offsets, cum, first

    def _t_delta(self, profile, I: int, q: int, fi: int) -> float:
        """Traffic increase from inserting factor fi at chain position q."""
        offsets, cum, first = profile
        m = self.m
        f = m.factors[fi]
        p = offsets[I] + q
        n = len(cum) - 1
        d = 0.0
        for v in range(3):
            g = first[v]
            if g is not None and p > g:
                d += f.lg
            elif m.arch.A.related(f.j, v) and m.arch.B.stores(I, v):
                upto = g if g is not None else n
                d += f.lg + (cum[upto] - cum[p])
        return d

    def _min_menu_bytes(self, deltas: dict | None) -> int:
        """Cheapest admissible partition total given current buffer sums."""
        m = self.m
        total = 0
        for mi, menu in enumerate(m.menus):
            ci = self.con_of_menu[mi]
            lo = self.con_lhs[ci] + m.check_cons[ci].pad
            if deltas is not None and ci in deltas:
                lo += deltas[ci]
            pick = None
            for ent in menu.entries:
                if ent.e + self.tol >= lo:
                    pick = ent
                    break
            if pick is None:
                return 1 << 62
            total += pick.nbytes
        return total

    def _knap_bound(self, base: float, pos: int, deltas: dict,
                    threshold: float) -> float:
        """Max over single-constraint relaxations of the node lower bound;
        returns early once the threshold is exceeded (caller prunes).
        Assignment always follows branch order, so the unassigned tail at
        depth `pos` is a precomputed suffix."""
        sh = self.shared
        best = -INF
        nxt = pos + 1
        con_lhs = self.con_lhs
        con_rhs = self.con_rhs
        for ci in sh.kn_order:
            slack = con_rhs[ci] - con_lhs[ci] - deltas.get(ci, 0.0)
            if slack >= sh.kn_w_suffix[ci][nxt]:
                continue  # constraint cannot bind: no better than the plain bound
            gain = 0.0
            if slack > 0.0:
                for density, dw in sh.kn_segs_at[ci][nxt]:
                    if dw >= slack:
                        gain += density * slack
                        break
                    gain += density * dw
                    slack -= dw
            b = base + sh.kn_cost0_suffix[ci][nxt] - gain
            if b > best:
                best = b
                if b > threshold:
                    return b
        return best

    def _lagr_bound(self, base: float, pos: int, deltas: dict) -> float:
        """Root Lagrangian relaxation evaluated with the current slacks."""
        sh = self.shared
        b = base + sh.lagr_suffix[pos + 1]
        for ci, lam in sh.lam_active:
            b -= lam * (self.con_rhs[ci] - self.con_lhs[ci] - deltas.get(ci, 0.0))
        return b

    def _children(self, pos: int, dive: bool = False):
        m = self.m
        sh = self.shared
        fi = self.order[pos]
        prev = self.prev_same[fi]
        limit = None
        if prev is not None and self.choice_val[prev] is not None:
            limit = sh.class_rep[fi][self.choice_val[prev]]
        inc_obj = self.inc.obj
        t_cur = self.t_stack[-1]
        profile = None
        out = []
        for cc in m.choice_classes[fi]:
            if limit is not None and sh.class_rep[fi][cc] > limit:
                continue
            I, k = cc[0]
            deltas, delta_items = sh.class_deltas[fi][cc]
            ok = True
            for ci, add in delta_items:
                if self.con_lhs[ci] + add > self.con_rhs[ci] + self.tol:
                    ok = False
                    break
            if not ok:
                continue
            if m.menus and self._min_menu_bytes(deltas) > m.budget_bytes:
                continue
            if k == TEMPORAL and I >= m.noc:
                if profile is None:
                    profile = self._chain_profile()
                chain = self.chains[I]
                lo_q = 0
                if prev is not None and self.choice_val[prev] == cc:
                    # identical member already in this chain: insert outward
                    for qpos in range(len(chain) - 1, -1, -1):
                        if m.factors[chain[qpos]].cls == m.factors[fi].cls:
                            lo_q = qpos + 1
                            break
                for q in range(lo_q, len(chain) + 1):
                    t_after = t_cur + self._t_delta(profile, I, q, fi)
                    b = self._node_bound(pos, fi, (I, k), t_after, deltas)
                    if b is None:
                        continue
                    order_key = self._order_key(dive, b, fi, (I, k), t_after, deltas)
                    out.append((b, order_key, cc, I, k, q, deltas, t_after))
            else:
                b = self._node_bound(pos, fi, (I, k), t_cur, deltas)
                if b is None:
                    continue
                order_key = self._order_key(dive, b, fi, (I, k), t_cur, deltas)
                out.append((b, order_key, cc, I, k, None, deltas, t_cur))
        out.sort(key=lambda ch: (ch[1], ch[3], ch[4], -1 if ch[5] is None else ch[5]))
        return out

    def _node_bound(self, pos, fi, ck, t_after, deltas) -> float | None:
        """Admissible lower bound for the child, or None when prunable."""
        inc_obj = self.inc.obj
        m = self.m
        sh = self.shared
        if not self.balance:
            base = self.static_sum + m.static_obj[fi][ck] + self.wt * t_after
            thresh = inc_obj + EPS_PRUNE
            b = base + sh.suffix_min[pos + 1]
            if b > thresh:
                return None
            b2 = self._lagr_bound(base, pos, deltas)
            if b2 > b:
                b = b2
                if b > thresh:
                    return None
            b3 = self._knap_bound(base, pos, deltas, thresh)
            if b3 > b:
                b = b3
                if b > thresh:
                    return None
            return b
        comp = m.comp_coef[fi][ck]
        dl = m.dl_coef[fi][ck]
        comp_lo = self.comp_sum + comp + sh.suffix_comp_lo[pos + 1]
        comp_hi = self.comp_sum + comp + sh.suffix_comp_hi[pos + 1]
        traf_lo = self.dl_sum + dl + t_after + sh.suffix_traf_lo[pos + 1]
        traf_hi = sh.traf_hi_const
        a_lo, a_hi = m.weights.w_t * traf_lo, m.weights.w_t * traf_hi
        b_lo, b_hi = m.weights.w_c * comp_lo, m.weights.w_c * comp_hi
        if a_lo > b_hi:
            b = a_lo - b_hi
        elif b_lo > a_hi:
            b = b_lo - a_hi
        else:
            b = 0.0
        if b > inc_obj + EPS_PRUNE:
            return None
        return b

    def _order_key(self, dive, bound, fi, ck, t_after, deltas):
        if not dive:
            return bound
        # capacity-aware myopic cost steers the first descent
        m = self.m
        cost = m.static_obj[fi][ck] + self.wt * t_after
        for ci, lam in self.shared.lam_active:
            cost += lam * deltas.get(ci, 0.0)
        return cost

    def _apply(self, pos, child):
        b, okey, cc, I, k, q, deltas, t_after = child
        fi = self.order[pos]
        self.choice_val[fi] = cc
        for ci, add in deltas.items():
            self.con_lhs[ci] += add
        m = self.m
        if not self.balance:
            self.static_sum += m.static_obj[fi][(I, k)]
        else:
            self.comp_sum += m.comp_coef[fi][(I, k)]
            self.dl_sum += m.dl_coef[fi][(I, k)]
        if q is not None:
            self.chains[I].insert(q, fi)
        self.t_stack.append(t_after)

    def _undo(self, pos, child):
        b, okey, cc, I, k, q, deltas, t_after = child
        fi = self.order[pos]
        self.choice_val[fi] = None
        for ci, add in deltas.items():
            self.con_lhs[ci] -= add
        m = self.m
        if not self.balance:
            self.static_sum -= m.static_obj[fi][(I, k)]
        else:
            self.comp_sum -= m.comp_coef[fi][(I, k)]
            self.dl_sum -= m.dl_coef[fi][(I, k)]
        if q is not None:
            del self.chains[I][q]
        self.t_stack.pop()

    def _derive_menus(self) -> tuple[int, ...] | None:
        m = self.m
        if not m.menus:
            return None
        los = []
        for mi in range(len(m.menus)):
            ci = self.con_of_menu[mi]
            los.append(self.con_lhs[ci] + m.check_cons[ci].pad)
        n = len(m.menus)
        min_bytes = []
        for mi, menu in enumerate(m.menus):
            pick = None
            for ent in menu.entries:
                if ent.e + self.tol >= los[mi]:
                    pick = ent.nbytes
                    break
            if pick is None:
                return None
            min_bytes.append(pick)
        suffix = [0] * (n + 1)
        for mi in range(n - 1, -1, -1):
            suffix[mi] = suffix[mi + 1] + min_bytes[mi]
        sel = []
        used = 0
        for mi, menu in enumerate(m.menus):
            chosen = None
            for ei in range(len(menu.entries) - 1, -1, -1):
                ent = menu.entries[ei]
                if ent.e + self.tol < los[mi]:
                    break
                if used + ent.nbytes + suffix[mi + 1] <= m.budget_bytes:
                    chosen = ei
                    used += ent.nbytes
                    break
            if chosen is None:
                return None
            sel.append(chosen)
        return tuple(sel)

    def _leaf(self) -> bool:
        self.leaves += 1
        m = self.m
        menu_sel = self._derive_menus()
        if m.menus and menu_sel is None:
            return False
        if not self.balance:
            est = self.static_sum + self.wt * self.t_stack[-1]
        else:
            est = abs(
                m.weights.w_t * (self.dl_sum + self.t_stack[-1])
                - m.weights.w_c * self.comp_sum
            )
        if est > self.inc.obj + EPS_PRUNE:
            return False
        x = canonical_assignment(m, self.choice_val, self.chains)
        obj = m.objective_of(x, menu_sel)
        key = m.lex_key(x, menu_sel)
        if not self.inc.beats(obj, key):
            return False
        if m.constraint_violations(x, menu_sel, self.tol):
            return False  # defensive: never accept an infeasible leaf
        self.inc.offer(obj, key, x, menu_sel)
        return True

    def dfs(self, pos: int):
        if self.timed_out():
            return
        self.nodes += 1
        if pos == self.m.F:
            self._leaf()
            return
        for child in self._children(pos):
            if child[0] > self.inc.obj + EPS_PRUNE:
                continue
            self._apply(pos, child)
            self.dfs(pos + 1)
            self._undo(pos, child)
            if self.stop.is_set():
                return

    def dive(self, pos: int) -> bool:
        """First feasible leaf along capacity-aware greedy descent."""
        if self.timed_out():
            return True
        self.nodes += 1
        if pos == self.m.F:
            return self._leaf()
        for child in self._children(pos, dive=True):
            self._apply(pos, child)
            done = self.dive(pos + 1)
            self._undo(pos, child)
            if done:
                return True
        return False

    def lds(self, pos: int, budget: int):
        """Limited-discrepancy sweep: deviate from the best-bound child at
        most `budget` times along any path; primes the incumbent."""
        if self.timed_out():
            return
        self.nodes += 1
        if pos == self.m.F:
            self._leaf()
            return
        for idx, child in enumerate(self._children(pos)):
            if idx > budget:
                break
            if child[0] > self.inc.obj + EPS_PRUNE:
                continue
            self._apply(pos, child)
            self.lds(pos + 1, budget - (1 if idx > 0 else 0))
            self._undo(pos, child)


class _Shared:
    """Model-derived tables shared by every worker (read-only after init)."""

    def __init__(self, model: MipModel, opts: SolverOptions):
        m = model
        F = m.F
        self.ncons = len(m.check_cons)
        self.con_rhs = [c.rhs for c in m.check_cons]

        # largest log-factor first; bigger identical classes ahead on ties
        # (filling capacity early tightens the relaxation bounds sooner)
        cls_size: dict[int, int] = {}
        for f in m.factors:
            cls_size[f.cls] = cls_size.get(f.cls, 0) + 1
        key = lambda fi: (
            -m.factors[fi].lg,
            -cls_size[m.factors[fi].cls],
            m.factors[fi].j,
            m.factors[fi].n,
        )
        self.order = sorted(range(F), key=key)
        self.prev_same: list[int | None] = [None] * F
        last: dict[int, int] = {}
        for fi in self.order:
            cls = m.factors[fi].cls
            self.prev_same[fi] = last.get(cls)
            last[cls] = fi

        # total order on a factor's choice classes for the multiset dedup
        self.class_rep: list[dict[tuple, tuple[int, int]]] = [
            {cc: max(cc) for cc in m.choice_classes[fi]} for fi in range(F)
        ]

        self.fi_cons: list[list[tuple[int, dict]]] = []
        for fi in range(F):
            self.fi_cons.append(
                [
                    (ci, m.con_contrib[ci][fi])
                    for ci in range(self.ncons)
                    if m.con_contrib[ci][fi]
                ]
            )
        # per (factor, choice class): constraint contributions, precomputed
        self.class_deltas: list[dict[tuple, tuple[dict, tuple]]] = []
        for fi in range(F):
            per = {}
            for cc in m.choice_classes[fi]:
                c0 = cc[0]
                d = {
                    ci: contrib[c0]
                    for ci, contrib in self.fi_cons[fi]
                    if contrib.get(c0)
                }
                per[cc] = (d, tuple(d.items()))
            self.class_deltas.append(per)
        self.con_of_menu = {
            m.check_cons[ci].menu: ci
            for ci in range(self.ncons)
            if m.check_cons[ci].menu is not None
        }

        wu, wc, wt = m.weights.effective()
        self.balance = m.weights.mode == "balance"
        if self.balance:
            self.min_comp = [
                min(m.comp_coef[fi][c] for c in m.collapsed[fi]) for fi in range(F)
            ]
            self.max_comp = [
                max(m.comp_coef[fi][c] for c in m.collapsed[fi]) for fi in range(F)
            ]
            self.min_traf = [
                min(m.dl_coef[fi][c] + m.self_t_coef[fi][c] for c in m.collapsed[fi])
                for fi in range(F)
            ]
            total_lg = sum(f.lg for f in m.factors)
            self.traf_hi_const = (
                sum(max(m.dl_coef[fi][c] for c in m.collapsed[fi]) for fi in range(F))
                + 3.0 * total_lg
            )
            self.suffix_comp_lo = [0.0] * (F + 1)
            self.suffix_comp_hi = [0.0] * (F + 1)
            self.suffix_traf_lo = [0.0] * (F + 1)
            for idx in range(F - 1, -1, -1):
                fi = self.order[idx]
                self.suffix_comp_lo[idx] = self.suffix_comp_lo[idx + 1] + self.min_comp[fi]
                self.suffix_comp_hi[idx] = self.suffix_comp_hi[idx + 1] + self.max_comp[fi]
                self.suffix_traf_lo[idx] = self.suffix_traf_lo[idx + 1] + self.min_traf[fi]
            self.lam_active = []
            return

        # per-choice full cost (static plus guaranteed self-trigger traffic)
        self.choice_cost: list[dict[tuple[int, int], float]] = [
            {
                c: m.static_obj[fi][c] + wt * m.self_t_coef[fi][c]
                for c in m.collapsed[fi]
            }
            for fi in range(F)
        ]
        self.min_static = [min(self.choice_cost[fi].values()) for fi in range(F)]
        self.suffix_min = [0.0] * (F + 1)
        for idx in range(F - 1, -1, -1):
            self.suffix_min[idx] = self.suffix_min[idx + 1] + self.min_static[self.order[idx]]


def _build_knapsack(sh: _Shared, m: MipModel):
    F = m.F
    sh.kn_cost0_suffix = []
    sh.kn_w_suffix = []
    sh.kn_segs_at = []
    total_w = []
    for ci in range(sh.ncons):
        cost0_row = []
        seg_w_row = [0.0] * F
        per_factor_segs: list[list[tuple[float, float]]] = []
        for fi in range(F):
            contrib = m.con_contrib[ci][fi]
            pts = []
            zero_costs = []
            for c in m.collapsed[fi]:
                cost = sh.choice_cost[fi][c]
                w = contrib.get(c, 0.0)
                if w > 0.0:
                    pts.append((w, cost))
                else:
                    zero_costs.append(cost)
            c0 = min(zero_costs)
            cost0_row.append(c0)
            dedup: dict[float, float] = {}
            for w, cost in pts:
                g = c0 - cost
                if g > 0.0 and g > dedup.get(w, 0.0):
                    dedup[w] = g
            gains = sorted(dedup.items())
            segs: list[tuple[float, float]] = []
            if gains:
                # concave gain frontier anchored at (0, 0): increasing
                # gain, decreasing incremental density
                hull: list[tuple[float, float]] = [(0.0, 0.0)]
                for w, g in gains:
                    if g <= hull[-1][1]:
                        continue  # dominated by a lighter point
                    hull.append((w, g))
                    while len(hull) >= 3:
                        (w1, g1), (w2, g2), (w3, g3) = hull[-3:]
                        if (g2 - g1) * (w3 - w2) <= (g3 - g2) * (w2 - w1):
                            hull.pop(-2)
                        else:
                            break
                for (pw, pg), (w, g) in zip(hull, hull[1:]):
                    segs.append(((g - pg) / (w - pw), w - pw))
                    seg_w_row[fi] += w - pw
            per_factor_segs.append(segs)

        # assignment follows branch order: precompute, per depth, the
        # unassigned tail's zero-weight costs, total weights, and the
        # density-sorted segment pool
        cost0_suffix = [0.0] * (F + 1)
        w_suffix = [0.0] * (F + 1)
        segs_at: list[list[tuple[float, float]]] = [[] for _ in range(F + 1)]
        pool: list[tuple[float, int, float]] = []
        for idx in range(F - 1, -1, -1):
            fi = sh.order[idx]
            cost0_suffix[idx] = cost0_suffix[idx + 1] + cost0_row[fi]
            w_suffix[idx] = w_suffix[idx + 1] + seg_w_row[fi]
            pool = sorted(
                pool + [(d, idx, w) for d, w in per_factor_segs[fi]],
                key=lambda s: (-s[0], s[1], s[2]),
            )
            segs_at[idx] = [(d, w) for d, _i, w in pool]
        sh.kn_cost0_suffix.append(cost0_suffix)
        sh.kn_w_suffix.append(w_suffix)
        sh.kn_segs_at.append(segs_at)
        total_w.append(w_suffix[0])

    # evaluate tightest constraints first so pruning exits early
    def tightness(ci):
        rhs = sh.con_rhs[ci]
        w = total_w[ci]
        if w <= 0.0 or math.isinf(rhs):
            return INF
        return rhs / w

    sh.kn_order = sorted(
        (ci for ci in range(sh.ncons) if total_w[ci] > 0.0), key=tightness
    )


def _build_lagrangian(sh: _Shared, m: MipModel, upper: float | None = None,
                      iters: int = 240):
    """Projected subgradient ascent on the capacity-relaxed dual at the
    root; the resulting fixed multipliers give a cheap per-node bound.
    With a known incumbent value, Polyak steps are used."""
    F = m.F
    ncons = sh.ncons
    finite = [ci for ci in range(ncons) if not math.isinf(sh.con_rhs[ci])]
    lam = [0.0] * ncons
    best_lam = list(lam)
    best_val = -INF
    if F and finite:
        per_factor = []
        for fi in range(F):
            rows = []
            for c in m.collapsed[fi]:
                ws = [
                    (ci, d.get(c, 0.0))
                    for ci, d in sh.fi_cons[fi]
                    if d.get(c, 0.0) and not math.isinf(sh.con_rhs[ci])
                ]
                rows.append((sh.choice_cost[fi][c], ws))
            per_factor.append(rows)
        scale = max(abs(x) for x in (sh.min_static + [1.0]))
        beta = 1.2
        stall = 0
        for it in range(iters):
            val = 0.0
            usage = [0.0] * ncons
            for fi in range(F):
                bc, bw = INF, ()
                for cost, ws in per_factor[fi]:
                    t = cost
                    for ci, w in ws:
                        t += lam[ci] * w
                    if t < bc:
                        bc, bw = t, ws
                val += bc
                for ci, w in bw:
                    usage[ci] += w
            for ci in finite:
                val -= lam[ci] * sh.con_rhs[ci]
            if val > best_val + 1e-12:
                best_val = val
                best_lam = list(lam)
                stall = 0
            else:
                stall += 1
                if stall >= 10:
                    beta *= 0.6
                    stall = 0
                    if beta < 1e-3:
                        break
            g = [usage[ci] - sh.con_rhs[ci] for ci in finite]
            norm2 = sum(x * x for x in g)
            if norm2 <= 1e-18:
                break
            if upper is not None and upper > val:
                step = beta * (upper - val) / norm2
            else:
                step = 0.4 * scale / ((1.0 + 0.15 * it) * math.sqrt(norm2))
            for gi, ci in enumerate(finite):
                lam[ci] = max(0.0, lam[ci] + step * g[gi])
    sh.lam = best_lam
    sh.lam_active = [(ci, l) for ci, l in enumerate(best_lam) if l > 1e-12]
    sh.lagr_min = []
    for fi in range(F):
        best = INF
        for c in m.collapsed[fi]:
            t = sh.choice_cost[fi][c]
            for ci, d in sh.fi_cons[fi]:
                w = d.get(c, 0.0)
                if w and best_lam[ci]:
                    t += best_lam[ci] * w
            if t < best:
                best = t
        sh.lagr_min.append(best)
    sh.lagr_suffix = [0.0] * (F + 1)
    for idx in range(F - 1, -1, -1):
        sh.lagr_suffix[idx] = sh.lagr_suffix[idx + 1] + sh.lagr_min[sh.order[idx]]


def _make_shared(model: MipModel, opts: SolverOptions) -> _Shared:
    sh = _Shared(model, opts)
    if not sh.balance:
        _build_knapsack(sh, model)
        _build_lagrangian(sh, model)
    return sh


def _root_witness(model: MipModel, opts: SolverOptions) -> tuple[str, ...] | None:
    """Best-effort irreducible cause when no feasible leaf exists."""
    names = []
    for fi in range(model.F):
        blocking = set()
        any_ok = False
        for c in model.collapsed[fi]:
            bad = [
                model.check_cons[ci].name
                for ci in range(len(model.check_cons))
                if model.con_contrib[ci][fi].get(c, 0.0)
                > model.check_cons[ci].rhs + opts.tolerance
            ]
            if bad:
                blocking.update(bad)
            else:
                any_ok = True
        if not any_ok:
            names.extend(sorted(blocking))
    if model.menus:
        floor_bytes = sum(menu.entries[0].nbytes for menu in model.menus)
        if floor_bytes > model.budget_bytes:
            names.append("budget")
    return tuple(names) or None


def solve(model: MipModel, opts: SolverOptions = SolverOptions()) -> Solution:
    """Proven-optimal solve with the deterministic branch-and-bound."""
    t0 = time.perf_counter()
    deadline = t0 + opts.time_limit_s
    stop = threading.Event()
    inc = _Incumbent()
    stats = SolveStats()
    shared = _make_shared(model, opts)

    if model.F == 0:
        seed = _Search(model, opts, inc, deadline, stop, shared)
        seed._leaf()
        stats.leaves = 1
        stats.wall_time_s = time.perf_counter() - t0
        if inc.x is None:
            return Solution("infeasible", None, None, None, stats,
                            witness=_root_witness(model, opts))
        return Solution("optimal", inc.obj, inc.x, inc.menu, stats)

    dive_search = _Search(model, opts, inc, deadline, stop, shared)
    dive_search.dive(0)
    stats.nodes += dive_search.nodes
    stats.leaves += dive_search.leaves
    if inc.x is not None and not shared.balance:
        # re-optimize the dual with Polyak steps against the incumbent,
        # sharpen the incumbent with a limited-discrepancy sweep, repeat
        _build_lagrangian(shared, model, upper=inc.obj)
        lds_search = _Search(model, opts, inc, deadline, stop, shared)
        lds_search.lds(0, 1)
        stats.nodes += lds_search.nodes
        stats.leaves += lds_search.leaves
        _build_lagrangian(shared, model, upper=inc.obj)

    root = _Search(model, opts, inc, deadline, stop, shared)
    top = root._children(0)
    workers = max(1, min(opts.threads, len(top))) if top else 1

    def run_shard(shard) -> tuple[int, int]:
        s = _Search(model, opts, inc, deadline, stop, shared)
        for child in shard:
            if child[0] > inc.obj + EPS_PRUNE:
                continue
            s._apply(0, child)
            s.dfs(1)
            s._undo(0, child)
            if stop.is_set():
                break
        return s.nodes, s.leaves

    if workers <= 1:
        n, l = run_shard(top)
        stats.nodes += n
        stats.leaves += l
    else:
        shards = [top[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for n, l in pool.map(run_shard, shards):
                stats.nodes += n
                stats.leaves += l

    stats.wall_time_s = time.perf_counter() - t0
    timed_out = stop.is_set()
    if inc.x is None:
        if timed_out:
            return Solution("timeout", None, None, None, stats)
        return Solution(
            "infeasible", None, None, None, stats, witness=_root_witness(model, opts)
        )
    status = "timeout" if timed_out else "optimal"
    return Solution(status, inc.obj, inc.x, inc.menu, stats)


# ----------------------------------------------------------------------
# exhaustive oracle
# ----------------------------------------------------------------------


def assignment_space_size(model: MipModel) -> int:
    size = 1
    for fi in range(model.F):
        size *= len(model.choices[fi])
    for menu in model.menus:
        size *= len(menu.entries)
    return size


def exhaustive_solve(
    model: MipModel,
    opts: SolverOptions = SolverOptions(),
    space_limit: int = EXHAUSTIVE_SPACE_LIMIT,
) -> Solution:
    """Enumerate every assignment with the exactly-one structure, filter by
    the constraints, and return the global optimum under the same
    tie-break as `solve`.  Guarded by `space_limit`."""
    size = assignment_space_size(model)
    if size > space_limit:
        raise SpaceTooLarge(f"assignment space {size} exceeds limit {space_limit}")
    t0 = time.perf_counter()
    m = model
    tol = opts.tolerance
    F = m.F
    ncons = len(m.check_cons)
    rhs = [c.rhs for c in m.check_cons]
    pads = [c.pad for c in m.check_cons]
    con_of_menu = {c.menu: ci for ci, c in enumerate(m.check_cons) if c.menu is not None}

    fi_cons = []
    for fi in range(F):
        fi_cons.append(
            [(ci, m.con_contrib[ci][fi]) for ci in range(ncons) if m.con_contrib[ci][fi]]
        )

    best_obj = INF
    best_key = None
    best_x = None
    best_menu = None
    x: dict[int, tuple[int, int, int]] = {}
    occupied: set[tuple[int, int]] = set()
    lhs = [0.0] * ncons
    stats = SolveStats()

    def leaf(menu_sel):
        nonlocal best_obj, best_key, best_x, best_menu
        stats.leaves += 1
        obj = m.objective_of(x, menu_sel)
        key = m.lex_key(x, menu_sel)
        if best_x is None or (obj, key) < (best_obj, best_key):
            best_obj, best_key, best_x, best_menu = obj, key, dict(x), menu_sel

    def menu_rec(mi: int, used: int, sel: list[int]):
        if mi == len(m.menus):
            leaf(tuple(sel))
            return
        ci = con_of_menu[mi]
        for ei, ent in enumerate(m.menus[mi].entries):
            if lhs[ci] + pads[ci] > ent.e + tol:
                continue
            if used + ent.nbytes > m.budget_bytes:
                continue
            sel.append(ei)
            menu_rec(mi + 1, used + ent.nbytes, sel)
            sel.pop()

    def rec(fi: int):
        stats.nodes += 1
        if fi == F:
            if m.menus:
                menu_rec(0, 0, [])
            else:
                leaf(None)
            return
        for I, z, k in m.choices[fi]:
            if (I, z) in occupied:
                continue
            applied = []
            ok = True
            for ci, d in fi_cons[fi]:
                add = d.get((I, k))
                if add:
                    if lhs[ci] + add > rhs[ci] + tol:
                        ok = False
                        break
                    lhs[ci] += add
                    applied.append((ci, add))
            if ok:
                occupied.add((I, z))
                x[fi] = (I, z, k)
                rec(fi + 1)
                del x[fi]
                occupied.discard((I, z))
            for ci, add in applied:
                lhs[ci] -= add

    rec(0)
    stats.wall_time_s = time.perf_counter() - t0
    if best_x is None:
        return Solution("infeasible", None, None, None, stats)
    return Solution("optimal", best_obj, best_x, best_menu, stats)


# ----------------------------------------------------------------------
# LP-style dump
# ----------------------------------------------------------------------


def dump_lp(model: MipModel) -> str:
    """Textual LP-format model for cross-checking with external solvers."""
    raw = model.raw()

    def expr(terms) -> str:
        parts = []
        for vid, coef in terms:
            sign = "+" if coef >= 0 else "-"
            parts.append(f"{sign} {abs(coef):.12g} {raw.var_names[vid]}")
        return " ".join(parts) if parts else "0"

    lines = ["Minimize", " obj: " + expr(sorted(raw.objective.items()))]
    lines.append("Subject To")
    for con in raw.constraints:
        op = {"<=": "<=", ">=": ">=", "==": "="}[con.sense]
        lines.append(f" {con.name}: {expr(con.terms)} {op} {con.rhs:.12g}")
    binaries = [
        raw.var_names[vid]
        for vid, kind in enumerate(raw.var_kinds)
        if kind in ("x", "part", "y", "prod")
    ]
    if binaries:
        lines.append("Binary")
        for name in binaries:
            lines.append(f" {name}")
    if raw.d_id is not None:
        lines.append("Bounds")
        lines.append(f" 0 <= {raw.var_names[raw.d_id]}")
    lines.append("End")
    return "\n".join(lines) + "\n"
