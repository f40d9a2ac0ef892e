"""Network families: series-parallel DP, DAG connectivity, spanning-tree LP rounding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exact import _DisjointSets, _out_adjacency
from .lp import LpError, LpProblem, bisect_budget, budget_tolerance, lp_solve, refine_budget
from .model import (
    Bipartite,
    Digraph,
    InstanceError,
    TwoStageInstance,
    TwoStagePlan,
    SolveReport,
    UndirectedGraph,
    failure_report,
    make_report,
)
from .risk import Objective
from .rng import SplitMix64
from .selection import flip_coins

CUT_TOL = 1e-6
CUT_ROUNDS_PER_EDGE = 10


# --------------------------------------------------------------------------- series-parallel decomposition


@dataclass(frozen=True)
class Leaf:
    arc: int
    source: int
    sink: int


@dataclass(frozen=True)
class Series:
    left: "SpNode"
    right: "SpNode"
    source: int
    sink: int


@dataclass(frozen=True)
class Parallel:
    left: "SpNode"
    right: "SpNode"
    source: int
    sink: int


SpNode = Union[Leaf, Series, Parallel]


class NotSeriesParallel(ValueError):
    def __init__(self, kernel):
        super().__init__(f"not series-parallel (irreducible kernel: {sorted(kernel)})")
        self.kernel = tuple(sorted(kernel))


@dataclass(frozen=True)
class SpDecomposition:
    root: SpNode

    def leaves(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node.arc)
            else:
                stack += [node.right, node.left]
        return out


def sp_decompose(g: Digraph) -> SpDecomposition:
    """Decomposition tree of a two-terminal series-parallel digraph.

    Repeatedly merges parallel arcs and contracts inner nodes with one arc in
    and one arc out.  Whatever survives other than a single s -> t arc is the
    irreducible kernel, reported as a list of (tail, head) pairs.
    """
    s, t = g.source, g.sink
    if s == t:
        raise ValueError("source and sink coincide")
    if not g.arcs:
        raise NotSeriesParallel([])
    live: dict[int, tuple[int, int, SpNode]] = {
        a: (u, v, Leaf(a, u, v)) for a, (u, v) in enumerate(g.arcs)
    }
    next_id = len(g.arcs)
    changed = True
    while changed and len(live) > 1:
        changed = False
        by_ends: dict[tuple[int, int], int] = {}
        for k in sorted(live):
            u, v, node = live[k]
            other = by_ends.get((u, v))
            if other is None:
                by_ends[(u, v)] = k
                continue
            merged = Parallel(live[other][2], node, u, v)
            del live[k], live[other]
            live[next_id] = (u, v, merged)
            by_ends[(u, v)] = next_id
            next_id += 1
            changed = True
        ins: dict[int, list[int]] = {}
        outs: dict[int, list[int]] = {}
        for k, (u, v, _) in live.items():
            outs.setdefault(u, []).append(k)
            ins.setdefault(v, []).append(k)
        for w in sorted(set(ins) | set(outs)):
            if w in (s, t):
                continue
            a_in, a_out = ins.get(w, []), outs.get(w, [])
            if len(a_in) != 1 or len(a_out) != 1 or a_in[0] == a_out[0]:
                continue
            if a_in[0] not in live or a_out[0] not in live:
                continue
            u, _, left = live.pop(a_in[0])
            _, v, right = live.pop(a_out[0])
            live[next_id] = (u, v, Series(left, right, u, v))
            next_id += 1
            changed = True
            break
    if len(live) == 1:
        u, v, node = next(iter(live.values()))
        if (u, v) == (s, t):
            return SpDecomposition(node)
    raise NotSeriesParallel([(u, v) for u, v, _ in live.values()])


@dataclass
class _DpEntry:
    mixed: float
    defer: np.ndarray
    choice: str


def sp_dp_expectation(inst: TwoStageInstance) -> SolveReport:
    """Exact two-stage expected-cost shortest path on a series-parallel digraph."""
    if inst.family != "shortest-path":
        raise InstanceError("sp_dp_expectation needs a shortest-path instance")
    if not inst.exact:
        raise InstanceError("sp_dp_expectation supports feasible_mode 'exact' only")
    tree = sp_decompose(inst.structure)
    C, c, p = inst.first_stage_costs, inst.scenario_costs, inst.probabilities
    table: dict[int, _DpEntry] = {}

    def solve(node: SpNode) -> _DpEntry:
        if isinstance(node, Leaf):
            a = node.arc
            defer = c[:, a].astype(float)
            expected = float(p @ defer)
            entry = _DpEntry(min(C[a], expected), defer, "buy" if C[a] < expected else "defer")
        elif isinstance(node, Series):
            L, R = solve(node.left), solve(node.right)
            entry = _DpEntry(L.mixed + R.mixed, L.defer + R.defer, "both")
        else:
            L, R = solve(node.left), solve(node.right)
            defer = np.minimum(L.defer, R.defer)
            options = [(float(p @ defer), "defer"), (L.mixed, "left"), (R.mixed, "right")]
            value, choice = min(options, key=lambda o: o[0])
            entry = _DpEntry(value, defer, choice)
        table[id(node)] = entry
        return entry

    root = solve(tree.root)
    x = np.zeros(inst.n, dtype=np.int8)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        choice = table[id(node)].choice
        if isinstance(node, Leaf):
            if choice == "buy":
                x[node.arc] = 1
        elif isinstance(node, Series):
            stack += [node.left, node.right]
        elif choice == "left":
            stack.append(node.left)
        elif choice == "right":
            stack.append(node.right)
    return make_report(inst, x, Objective.expectation(), "sp-dp", trace={"dp_value": root.mixed})


# --------------------------------------------------------------------------- DAG connectivity


def topological_order(g: Digraph) -> Optional[list[int]]:
    """Kahn order of the nodes, or None if the digraph has a cycle."""
    indeg = [0] * g.node_count
    for _, v in g.arcs:
        indeg[v] += 1
    adj = _out_adjacency(g)
    ready = [v for v in range(g.node_count) if indeg[v] == 0]
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for _, v in adj[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order if len(order) == g.node_count else None


def _dag_paths_from(g: Digraph, order, weights, start):
    dist = np.full(g.node_count, math.inf)
    pred = [-1] * g.node_count
    dist[start] = 0.0
    adj = _out_adjacency(g)
    for u in order:
        if not math.isfinite(dist[u]):
            continue
        for a, v in adj[u]:
            d = dist[u] + weights[a]
            if d < dist[v]:
                dist[v], pred[v] = d, a
    return dist, pred


def _dag_paths_to(g: Digraph, order, weights, stop):
    dist = np.full(g.node_count, math.inf)
    succ = [-1] * g.node_count
    dist[stop] = 0.0
    adj = _out_adjacency(g)
    for u in reversed(order):
        for a, v in adj[u]:
            d = weights[a] + dist[v]
            if d < dist[u]:
                dist[u], succ[u] = d, a
    return dist, succ


def connectivity_solve(inst: TwoStageInstance, objective: Union[Objective, float, None] = None) -> SolveReport:
    """Connectivity variant on a DAG: the first stage is an s -> v path, the rest is bought per scenario.

    ``objective`` may be an Objective or a CVaR level alpha (0 by default,
    which is the expectation).
    """
    if inst.family != "shortest-path":
        raise InstanceError("connectivity_solve needs a shortest-path instance")
    if objective is None:
        objective = Objective.cvar(0.0)
    elif not isinstance(objective, Objective):
        objective = Objective.cvar(float(objective))
    g = inst.structure
    order = topological_order(g)
    if order is None:
        raise InstanceError("connectivity_solve needs an acyclic digraph")
    C, c = inst.first_stage_costs, inst.scenario_costs
    head_dist, pred = _dag_paths_from(g, order, C, g.source)
    tails = [_dag_paths_to(g, order, c[j], g.sink) for j in range(inst.K)]
    tail_dist = np.array([d for d, _ in tails])  # (K, nodes)
    best_v, best_val = -1, math.inf
    for v in range(g.node_count):
        if not math.isfinite(head_dist[v]) or not np.all(np.isfinite(tail_dist[:, v])):
            continue
        val = head_dist[v] + float(objective.rows([tail_dist[:, v]], inst.probabilities)[0])
        if best_v < 0 or val < best_val - 1e-12 * max(1.0, abs(best_val)):
            best_v, best_val = v, val
    if best_v < 0:
        raise InstanceError("sink is unreachable from source")
    x = np.zeros(inst.n, dtype=np.int8)
    u = best_v
    while u != g.source:
        a = pred[u]
        x[a] = 1
        u = g.arcs[a][0]
    recourse = []
    for j in range(inst.K):
        y = np.zeros(inst.n, dtype=np.int8)
        u = best_v
        succ = tails[j][1]
        while u != g.sink:
            a = succ[u]
            y[a] = 1
            u = g.arcs[a][1]
        recourse.append(tuple(int(v) for v in y))
    costs = tuple(float(v) for v in tail_dist[:, best_v])
    return SolveReport(
        objective=objective,
        value=float(best_val),
        plan=TwoStagePlan(tuple(int(v) for v in x), tuple(recourse)),
        per_scenario_cost=costs,
        algorithm="connectivity",
        trace={"node": best_v},
    )


# --------------------------------------------------------------------------- spanning tree: cut-set LP


def stoer_wagner_cuts(node_count: int, edges, weights) -> list[tuple[float, frozenset]]:
    """Every cut-of-the-phase of Stoer-Wagner; the minimum over them is the global min cut.

    Each cut is returned as (value, S) with S the side not holding node 0.
    """
    W = np.zeros((node_count, node_count))
    for (u, v), w in zip(edges, weights):
        if u != v:
            W[u, v] += w
            W[v, u] += w
    groups = [{v} for v in range(node_count)]
    active = list(range(node_count))
    everyone = frozenset(range(node_count))
    cuts = []
    while len(active) > 1:
        sub = W[np.ix_(active, active)]
        added = np.zeros(len(active), dtype=bool)
        added[0] = True
        conn = sub[0].copy()
        prev = last = 0
        value = 0.0
        for _ in range(len(active) - 1):
            k = int(np.argmax(np.where(added, -np.inf, conn)))
            value = float(conn[k])
            added[k] = True
            conn += sub[k]
            prev, last = last, k
        s_node, t_node = active[prev], active[last]
        side = frozenset(groups[t_node])
        if 0 in side:
            side = everyone - side
        cuts.append((value, side))
        W[s_node] += W[t_node]
        W[:, s_node] += W[:, t_node]
        W[s_node, s_node] = 0.0
        groups[s_node] |= groups[t_node]
        active.remove(t_node)
    return cuts


def cut_value(edges, weights, S) -> float:
    return float(sum(w for (u, v), w in zip(edges, weights) if (u in S) != (v in S)))


@dataclass
class CutSetLpState:
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    cuts: list = field(default_factory=list)
    iterations: int = 0

    def __post_init__(self):
        self._seen = set(self.cuts)

    def add(self, cut) -> bool:
        if cut in self._seen:
            return False
        self._seen.add(cut)
        self.cuts.append(cut)
        return True


@dataclass(frozen=True)
class MstBudgetSolution:
    variant: str
    L_star: float
    x: np.ndarray
    y: np.ndarray  # (K, |E|)
    first_filter: np.ndarray
    second_filter: np.ndarray
    state: CutSetLpState


def _require_tree_instance(inst: TwoStageInstance) -> UndirectedGraph:
    if inst.family != "spanning-tree":
        raise InstanceError("needs a spanning-tree instance")
    g = inst.structure
    ds = _DisjointSets(g.node_count)
    for u, v in g.edges:
        ds.union(u, v)
    if len({ds.find(v) for v in range(g.node_count)}) > 1:
        raise InstanceError("graph is not connected")
    return g


def _scenario_weights(inst: TwoStageInstance, variant: str) -> np.ndarray:
    if variant == "robust":
        return inst.scenario_costs
    if variant == "expectation":
        return inst.probabilities[:, None] * inst.scenario_costs
    raise ValueError(f"unknown variant {variant!r}")


def _mst_lp(inst, variant, L, cuts, minimize):
    g = inst.structure
    m, K = inst.n, inst.K
    C = inst.first_stage_costs
    w = _scenario_weights(inst, variant)
    lp = LpProblem()
    x = [lp.add_variable(0.0, 0.0, 1.0 if C[e] <= L else 0.0) for e in range(m)]
    y = [[lp.add_variable(0.0, 0.0, 1.0 if w[j, e] <= L else 0.0) for e in range(m)] for j in range(K)]
    first = {x[e]: C[e] for e in range(m) if C[e]}
    if variant == "robust":
        t = lp.add_variable(1.0 if minimize else 0.0, 0.0)
        for j in range(K):
            row = dict(first)
            row.update({y[j][e]: w[j, e] for e in range(m) if w[j, e]})
            if minimize:
                row[t] = -1.0
                lp.add_row(row, "<=", 0.0)
            else:
                lp.add_row(row, "<=", L)
    else:
        row = dict(first)
        for j in range(K):
            row.update({y[j][e]: w[j, e] for e in range(m) if w[j, e]})
        if minimize:
            for k, v in row.items():
                lp.objective[k] = v
        else:
            lp.add_row(row, "<=", L)
    for j, S in cuts:
        row = {}
        for e, (u, v) in enumerate(g.edges):
            if (u in S) != (v in S):
                row[x[e]] = 1.0
                row[y[j][e]] = 1.0
        lp.add_row(row, ">=", 1.0)
    return lp


def _separate(inst, state: CutSetLpState, values) -> int:
    g = inst.structure
    m, K = inst.n, inst.K
    xv = values[:m]
    yv = values[m : m + K * m].reshape(K, m)
    found = []
    for j in range(K):
        for value, S in stoer_wagner_cuts(g.node_count, g.edges, xv + yv[j]):
            if value < 1.0 - CUT_TOL:
                found.append((j, S))
    found.sort(key=lambda cut: (cut[0], sorted(cut[1])))
    return sum(state.add(cut) for cut in found)


def _solve_with_cuts(inst, variant, L, state: CutSetLpState, minimize: bool):
    cap = CUT_ROUNDS_PER_EDGE * inst.n * inst.K
    rounds = 0
    while True:
        out = lp_solve(_mst_lp(inst, variant, L, state.cuts, minimize))
        if not out.optimal:
            return None
        if _separate(inst, state, out.values) == 0:
            return out
        rounds += 1
        state.iterations += 1
        if rounds > cap:
            raise LpError(f"cut generation did not converge within {cap} rounds")


def mst_cutset_lp(inst: TwoStageInstance, variant: str = "robust") -> MstBudgetSolution:
    """Smallest budget L* with a feasible filtered cut-set relaxation, by delayed cut generation."""
    g = _require_tree_instance(inst)
    m, K = inst.n, inst.K
    C = inst.first_stage_costs
    w = _scenario_weights(inst, variant)
    if variant == "robust":
        hi = float(C.sum() + w.sum(axis=1).max())
    else:
        hi = float(C.sum() + w.sum())
    state = CutSetLpState()
    if g.node_count > 1:
        for j in range(K):
            state.add((j, frozenset({0})))

    def probe(L):
        return _solve_with_cuts(inst, variant, L, state, False)

    L_hi, witness = bisect_budget(probe, 0.0, hi)

    def min_cost(L):
        out = _solve_with_cuts(inst, variant, L, state, True)
        return (out.objective_value, out) if out is not None else None

    breaks = np.r_[C, w.ravel()]
    refined = refine_budget(min_cost, breaks, L_hi - budget_tolerance(hi), L_hi)
    L_star = L_hi
    if refined is not None and refined[0] <= L_hi:
        L_star, witness = refined
    vals = witness.values
    x = np.clip(vals[:m], 0.0, 1.0)
    y = np.clip(vals[m : m + K * m].reshape(K, m), 0.0, 1.0)
    state.x, state.y = x, y
    return MstBudgetSolution(
        variant=variant,
        L_star=float(L_star),
        x=x,
        y=y,
        first_filter=C <= L_star,
        second_filter=w <= L_star,
        state=state,
    )


# --------------------------------------------------------------------------- spanning tree: rounding


def k_hat_mst(n: int, K: int) -> int:
    return math.ceil(40 * math.log(n) + 16 * math.log(K))


def mst_cost_envelope(n: int, K: int, variant: str = "robust") -> float:
    """Normalized (L* = 1) cost level for the rounded sets; exceeded with small probability."""
    k = k_hat_mst(n, K)
    if variant == "robust":
        log_term = math.log(2 * (n * K) ** 2)
    else:
        log_term = math.log(2 * K * n * n)
    return k + (math.e - 1) * math.sqrt(k * log_term)


def _components(node_count, edges, chosen) -> _DisjointSets:
    ds = _DisjointSets(node_count)
    for e in chosen:
        ds.union(*edges[e])
    return ds


def _connected(node_count, edges, chosen) -> bool:
    ds = _components(node_count, edges, chosen)
    return len({ds.find(v) for v in range(node_count)}) <= 1


def mst_repair(inst, sol: MstBudgetSolution, F: set, Fj: list[set]) -> tuple[bool, list]:
    """Greedy repair in place: add the cheapest pool edge that joins two components of a broken T^j."""
    g = inst.structure
    C, c = inst.first_stage_costs, inst.scenario_costs
    used = set(F).union(*Fj)
    pool = {e for e in range(inst.n) if sol.first_filter[e] or sol.second_filter[:, e].any()} - used
    added = []
    while True:
        sets = [_components(g.node_count, g.edges, F | Fj[j]) for j in range(inst.K)]
        broken = [j for j in range(inst.K) if len({sets[j].find(v) for v in range(g.node_count)}) > 1]
        if not broken:
            return True, added
        options = []
        for e in pool:
            u, v = g.edges[e]
            joins = [j for j in broken if sets[j].find(u) != sets[j].find(v)]
            if not joins:
                continue
            if sol.first_filter[e]:
                options.append((C[e], e, -1))
            for j in joins:
                if sol.second_filter[j, e]:
                    options.append((c[j, e], e, j))
        if not options:
            return False, added
        cost, e, j = min(options)
        pool.discard(e)
        if j < 0:
            F.add(e)
        else:
            Fj[j].add(e)
        added.append({"edge": int(e), "scenario": None if j < 0 else int(j), "cost": float(cost)})


def mst_prune(inst, F: set, Fj: list[set]) -> TwoStagePlan:
    """Cut F to a forest and each F u F^j to a spanning tree, dropping the costliest redundant edges."""
    g = inst.structure
    C, c = inst.first_stage_costs, inst.scenario_costs
    ds = _DisjointSets(g.node_count)
    keep = []
    for e in sorted(F, key=lambda e: (C[e], e)):
        if ds.union(*g.edges[e]):
            keep.append(e)
    x = np.zeros(inst.n, dtype=np.int8)
    x[keep] = 1
    rec = []
    for j in range(inst.K):
        dj = _DisjointSets(g.node_count)
        for e in keep:
            dj.union(*g.edges[e])
        y = np.zeros(inst.n, dtype=np.int8)
        for e in sorted(Fj[j] - set(keep), key=lambda e: (c[j, e], e)):
            if dj.union(*g.edges[e]):
                y[e] = 1
        rec.append(tuple(int(v) for v in y))
    return TwoStagePlan(tuple(int(v) for v in x), tuple(rec))


def mst_randomized_rounding(
    inst: TwoStageInstance, seed: int, variant: str = "robust", budget: Optional[MstBudgetSolution] = None
) -> SolveReport:
    """Round the cut-set relaxation by repeated coin flips; repair greedily if a scenario graph is disconnected."""
    g = _require_tree_instance(inst)
    sol = budget if budget is not None else mst_cutset_lp(inst, variant)
    if sol.variant != variant:
        raise ValueError("budget solution was computed for another variant")
    K = inst.K
    k = k_hat_mst(g.node_count, K)
    stream = SplitMix64(seed)
    first = np.flatnonzero(sol.first_filter)
    F = {int(e) for e in first[flip_coins(stream, sol.x[first], k)]}
    Fj = []
    for j in range(K):
        edges = np.flatnonzero(sol.second_filter[j])
        Fj.append({int(e) for e in edges[flip_coins(stream, sol.y[j, edges], k)]})
    C, c, prob = inst.first_stage_costs, inst.scenario_costs, inst.probabilities
    base = float(sum(C[e] for e in F))
    scen = [float(sum(c[j, e] for e in Fj[j])) for j in range(K)]
    if variant == "robust":
        rounded = [base + s for s in scen]
    else:
        rounded = [base + float(prob @ np.array(scen))]
    connected = all(_connected(g.node_count, g.edges, F | Fj[j]) for j in range(K))
    info = {
        "seed": int(seed),
        "k_hat": k,
        "L_star": sol.L_star,
        "F": sorted(F),
        "F_j": [sorted(s) for s in Fj],
        "rounded_cost": rounded,
        "connected": connected,
        "repaired": False,
        "repair_added": [],
        "cuts": len(sol.state.cuts),
    }
    objective = Objective.robust() if variant == "robust" else Objective.expectation()
    algorithm = f"mst-rr-{variant}"
    if not connected:
        ok, added = mst_repair(inst, sol, F, Fj)
        info["repaired"] = True
        info["repair_added"] = added
        if not ok:
            return failure_report(objective, algorithm, K, seed=int(seed), trace=info, lower_bound=sol.L_star)
    plan = mst_prune(inst, F, Fj)
    costs = tuple(float(c[j] @ np.array(plan.recourse[j])) for j in range(K))
    value = float(C @ np.array(plan.x)) + float(objective.rows([costs], prob)[0])
    return SolveReport(
        objective=objective,
        value=value,
        plan=plan,
        per_scenario_cost=costs,
        algorithm=algorithm,
        lower_bound=sol.L_star,
        seed=int(seed),
        trace=info,
    )


# --------------------------------------------------------------------------- path to assignment


def sp_to_assignment(inst: TwoStageInstance) -> TwoStageInstance:
    """Split every node into a left and right copy; s -> t paths become perfect matchings.

    Internal nodes get a dummy edge {i, i'} that is free in every scenario but
    costs M = |A| * c_max in the first stage.  Arcs entering s or leaving t
    have no counterpart (no s' or t on the respective side) and are dropped.
    """
    if inst.family != "shortest-path":
        raise InstanceError("sp_to_assignment needs a shortest-path instance")
    g = inst.structure
    s, t = g.source, g.sink
    internal = [v for v in range(g.node_count) if v not in (s, t)]
    left = {s: 0}
    right = {t: 0}
    for k, v in enumerate(internal, start=1):
        left[v] = k
        right[v] = k
    kept = [a for a, (u, v) in enumerate(g.arcs) if u in left and v in right]
    edges = [(left[g.arcs[a][0]], right[g.arcs[a][1]]) for a in kept]
    c_max = float(max(inst.first_stage_costs.max(), inst.scenario_costs.max()))
    M = len(g.arcs) * c_max
    edges += [(k, k) for k in range(1, len(internal) + 1)]
    d = len(internal)
    C = np.r_[inst.first_stage_costs[kept], np.full(d, M)]
    c = np.hstack([inst.scenario_costs[:, kept], np.zeros((inst.K, d))])
    return TwoStageInstance(
        family="assignment",
        first_stage_costs=C,
        scenario_costs=c,
        probabilities=inst.probabilities,
        structure=Bipartite(len(internal) + 1, len(internal) + 1, tuple(edges)),
        feasible_mode=inst.feasible_mode,
        alpha=inst.alpha,
    )
