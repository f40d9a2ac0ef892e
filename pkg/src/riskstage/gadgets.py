"""Instance generators: hardness gadgets and seeded random instances.

Each gadget turns a combinatorial question (set cover, Hamiltonian path,
satisfiability) into a two-stage instance whose optimum encodes the answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import (
    Bipartite,
    Digraph,
    InstanceError,
    RsPartition,
    SelectionCardinality,
    TwoStageInstance,
    UndirectedGraph,
    canonical_family,
)


@dataclass(frozen=True)
class SetCoverInput:
    """Universe {0..universe-1} and a list of subsets; every element must be covered."""

    universe: int
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sets = tuple(tuple(sorted(set(int(u) for u in s))) for s in self.sets)
        object.__setattr__(self, "sets", sets)
        if self.universe < 1 or not sets:
            raise InstanceError("set cover needs a nonempty universe and at least one set")
        covered = set()
        for s in sets:
            for u in s:
                if not (0 <= u < self.universe):
                    raise InstanceError(f"set element {u} outside the universe")
            covered.update(s)
        missing = sorted(set(range(self.universe)) - covered)
        if missing:
            raise InstanceError(f"elements {missing} belong to no set")

    def min_cover_size(self) -> int:
        """Exhaustive minimum cover (small inputs only)."""
        m = len(self.sets)
        masks = [sum(1 << u for u in s) for s in self.sets]
        full = (1 << self.universe) - 1
        best = m
        for sub in range(1, 1 << m):
            size = bin(sub).count("1")
            if size >= best:
                continue
            got = 0
            for i in range(m):
                if sub >> i & 1:
                    got |= masks[i]
            if got == full:
                best = size
        return best


@dataclass(frozen=True)
class CnfInput:
    """Clauses over variables 1..variables; literal +i is x_i, -i its negation."""

    variables: int
    clauses: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        clauses = tuple(tuple(int(l) for l in c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        if not clauses:
            raise InstanceError("formula needs at least one clause")
        for c in clauses:
            if not c:
                raise InstanceError("empty clause")
            for lit in c:
                if lit == 0 or abs(lit) > self.variables:
                    raise InstanceError(f"literal {lit} out of range")

    def satisfiable(self) -> bool:
        for bits in range(1 << self.variables):
            if all(any((bits >> (abs(l) - 1) & 1) == (l > 0) for l in c) for c in self.clauses):
                return True
        return False


# worked examples
SEVEN_ELEMENT_COVER = SetCoverInput(7, ((1, 3, 2), (0,), (2, 6), (0, 3, 5, 6), (1, 4, 5), (0, 5)))
SIX_ELEMENT_COVER = SetCoverInput(6, ((0, 4, 5), (1, 5), (2, 3, 4), (2, 4)))


def _uniform(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)


def gen_rs_setcover(sc: SetCoverInput) -> TwoStageInstance:
    """Robust RS instance whose optimum is (m+1)M + (minimum cover size), M = universe + 1.

    One singleton-group tool per set (first-stage M) plus an extra tool at 2M;
    one scenario per element (0 for tools covering it, M otherwise, 2M for the
    extra tool) and a last scenario with M+1 per set tool and M for the extra.
    """
    m, nu = len(sc.sets), sc.universe
    M = nu + 1
    C = np.r_[np.full(m, float(M)), 2.0 * M]
    rows = []
    for u in range(nu):
        rows.append([0.0 if u in s else float(M) for s in sc.sets] + [2.0 * M])
    rows.append([M + 1.0] * m + [float(M)])
    return TwoStageInstance(
        family="rs",
        first_stage_costs=C,
        scenario_costs=np.array(rows),
        probabilities=_uniform(nu + 1),
        structure=RsPartition(tuple((i,) for i in range(m + 1))),
        feasible_mode="exact",
    )


def gen_sp_setcover(sc: SetCoverInput) -> TwoStageInstance:
    """Superset-mode shortest path: one two-arc s-t route per set.

    Route j is a_j then a'_j.  First stage: a_j costs 1, a'_j costs m+1.  Under
    the scenario of element u, a_j costs m+1 and a'_j costs 0 iff u is in set j.
    """
    m = len(sc.sets)
    big = float(m + 1)
    arcs, C = [], []
    for j in range(m):
        mid = 2 + j
        arcs += [(0, mid), (mid, 1)]
        C += [1.0, big]
    rows = []
    for u in range(sc.universe):
        row = []
        for s in sc.sets:
            row += [big, 0.0 if u in s else big]
        rows.append(row)
    return TwoStageInstance(
        family="shortest-path",
        first_stage_costs=C,
        scenario_costs=np.array(rows),
        probabilities=_uniform(sc.universe),
        structure=Digraph(m + 2, tuple(arcs), 0, 1),
        feasible_mode="superset",
    )


def gen_sp_hamiltonian(node_count: int, arcs: Sequence[tuple[int, int]], start: int = 0,
                       end: Optional[int] = None) -> TwoStageInstance:
    """Exact-mode shortest path with optimum 0 iff ``start -> end`` has a Hamiltonian path.

    Every node v becomes v -> v' (forward, first stage 0); every ordered pair
    v != w gets a backward arc v' -> w (first stage 1).  Scenario 1 makes the
    backward arcs of a fixed node order free, scenario 2 the ones mirroring the
    input arcs.  The path runs from start to end'.
    """
    nv = int(node_count)
    end = nv - 1 if end is None else end
    if nv < 1 or not (0 <= start < nv and 0 <= end < nv) or (nv > 1 and start == end):
        raise InstanceError("bad Hamiltonian endpoints")
    order = [start] + [v for v in range(nv) if v not in (start, end)] + ([end] if nv > 1 else [])
    succ = {order[k]: order[k + 1] for k in range(nv - 1)}
    given = {(int(u), int(v)) for u, v in arcs if u != v}
    a_list, C, c1, c2 = [], [], [], []
    for v in range(nv):
        a_list.append((2 * v, 2 * v + 1))
        C.append(0.0)
        c1.append(1.0)
        c2.append(1.0)
    for v in range(nv):
        for w in range(nv):
            if v == w:
                continue
            a_list.append((2 * v + 1, 2 * w))
            C.append(1.0)
            c1.append(0.0 if succ.get(v) == w else 1.0)
            c2.append(0.0 if (v, w) in given else 1.0)
    return TwoStageInstance(
        family="shortest-path",
        first_stage_costs=C,
        scenario_costs=np.array([c1, c2]),
        probabilities=np.array([0.5, 0.5]),
        structure=Digraph(2 * nv, tuple(a_list), 2 * start, 2 * end + 1),
        feasible_mode="exact",
    )


def has_hamiltonian_path(node_count: int, arcs, start: int = 0, end: Optional[int] = None) -> bool:
    end = node_count - 1 if end is None else end
    adj = {v: set() for v in range(node_count)}
    for u, v in arcs:
        if u != v:
            adj[u].add(v)

    def extend(u, seen):
        if len(seen) == node_count:
            return u == end
        return any(extend(w, seen | {w}) for w in adj[u] if w not in seen)

    return extend(start, {start})


@dataclass(frozen=True)
class SatLayout:
    """Arc indices of the satisfiability gadget, per role."""

    a: tuple[tuple[int, ...], ...]
    b: tuple[tuple[int, ...], ...]
    dashed: tuple[int, ...]
    clause: tuple[int, ...]


def gen_sp_sat(f: CnfInput, with_layout: bool = False):
    """Superset-mode shortest path with optimum <= m*n iff ``f`` is satisfiable.

    Variable i gets two parallel chains between s_i and t_i: the upper one
    alternates dashed arcs with a_i1..a_im, the lower one with b_i1..b_im.
    Clause j is a detour v_ja -> a_ij (or b_ij) -> v_jb for each literal, and the
    clause detours are chained from s to t.  a/b arcs cost 1 in the first stage,
    all other arcs M = 2nm + 2.  Scenario 1 frees the dashed arcs, scenario 2
    the clause arcs; everything else costs M.
    """
    n, m = f.variables, len(f.clauses)
    M = float(2 * n * m + 2)
    arcs: list[tuple[int, int]] = []
    role: list[str] = []
    nodes = 1  # node 0 is s = s_1
    a_idx = [[0] * m for _ in range(n)]
    b_idx = [[0] * m for _ in range(n)]
    comp_start = 0
    for i in range(n):
        comp_end = nodes
        nodes += 1
        for side, store in ((0, a_idx), (1, b_idx)):
            prev = comp_start
            for j in range(m):
                tail, head = nodes, nodes + 1
                nodes += 2
                arcs.append((prev, tail))
                role.append("dashed")
                store[i][j] = len(arcs)
                arcs.append((tail, head))
                role.append("ab")
                prev = head
            arcs.append((prev, comp_end))
            role.append("dashed")
        comp_start = comp_end
    s, t = 0, comp_start
    va = [nodes + 2 * j for j in range(m)]
    vb = [nodes + 2 * j + 1 for j in range(m)]
    nodes += 2 * m

    def add_clause_arc(u, v):
        arcs.append((u, v))
        role.append("clause")

    add_clause_arc(s, va[0])
    for j, clause in enumerate(f.clauses):
        for lit in clause:
            i = abs(lit) - 1
            e = a_idx[i][j] if lit > 0 else b_idx[i][j]
            tail, head = arcs[e]
            add_clause_arc(va[j], tail)
            add_clause_arc(head, vb[j])
        if j + 1 < m:
            add_clause_arc(vb[j], va[j + 1])
    add_clause_arc(vb[m - 1], t)

    C = np.array([1.0 if r == "ab" else M for r in role])
    c1 = np.array([0.0 if r == "dashed" else M for r in role])
    c2 = np.array([0.0 if r == "clause" else M for r in role])
    inst = TwoStageInstance(
        family="shortest-path",
        first_stage_costs=C,
        scenario_costs=np.vstack([c1, c2]),
        probabilities=np.array([0.5, 0.5]),
        structure=Digraph(nodes, tuple(arcs), s, t),
        feasible_mode="superset",
    )
    if not with_layout:
        return inst
    layout = SatLayout(
        tuple(tuple(r) for r in a_idx),
        tuple(tuple(r) for r in b_idx),
        tuple(k for k, r in enumerate(role) if r == "dashed"),
        tuple(k for k, r in enumerate(role) if r == "clause"),
    )
    return inst, layout


def gen_chain(rs_inst: TwoStageInstance, family: str = "shortest-path") -> TwoStageInstance:
    """Path graph with one arc (or edge) per tool of a singleton-group RS instance."""
    if rs_inst.family != "rs":
        raise InstanceError("gen_chain needs an rs instance")
    if any(len(g) != 1 for g in rs_inst.structure.groups):
        raise InstanceError("gen_chain needs singleton groups (normalize first)")
    family = canonical_family(family)
    order = [g[0] for g in rs_inst.structure.groups]
    k = len(order)
    links = tuple((v, v + 1) for v in range(k))
    if family == "shortest-path":
        structure = Digraph(k + 1, links, 0, k)
    elif family == "spanning-tree":
        structure = UndirectedGraph(k + 1, links)
    else:
        raise InstanceError("chains exist for shortest-path and spanning-tree only")
    return TwoStageInstance(
        family=family,
        first_stage_costs=rs_inst.first_stage_costs[order],
        scenario_costs=rs_inst.scenario_costs[:, order],
        probabilities=rs_inst.probabilities,
        structure=structure,
        feasible_mode="exact",
    )


# --------------------------------------------------------------------------- random instances


def _random_dag(rng, nodes: int, density: float):
    arcs = set()
    for u in range(nodes - 1):
        arcs.add((u, int(rng.integers(u + 1, nodes))))
        for v in range(u + 1, nodes):
            if rng.random() < density:
                arcs.add((u, v))
    return sorted(arcs)


def _random_digraph(rng, nodes: int, density: float):
    arcs = set()
    perm = [0] + list(rng.permutation(np.arange(1, nodes - 1)) if nodes > 2 else []) + [nodes - 1]
    for u, v in zip(perm, perm[1:]):
        arcs.add((int(u), int(v)))
    for u in range(nodes):
        for v in range(nodes):
            if u != v and rng.random() < density:
                arcs.add((u, v))
    return sorted(arcs)


def _random_sp(rng, arc_count: int):
    """Grow a series-parallel graph by repeatedly splitting or doubling a random arc."""
    arcs = [(0, 1)]
    nodes = 2
    while len(arcs) < arc_count:
        k = int(rng.integers(len(arcs)))
        u, v = arcs[k]
        if rng.random() < 0.5:
            w = nodes
            nodes += 1
            arcs[k] = (u, w)
            arcs.insert(k + 1, (w, v))
        else:
            arcs.insert(k + 1, (u, v))
    return nodes, arcs


def _random_connected(rng, nodes: int, density: float):
    edges = set()
    for v in range(1, nodes):
        u = int(rng.integers(v))
        edges.add((u, v))
    for u in range(nodes):
        for v in range(u + 1, nodes):
            if rng.random() < density:
                edges.add((u, v))
    return sorted(edges)


def _random_bipartite(rng, side: int, density: float):
    edges = set()
    for l, r in enumerate(rng.permutation(side)):
        edges.add((l, int(r)))
    for l in range(side):
        for r in range(side):
            if rng.random() < density:
                edges.add((l, r))
    return sorted(edges)


def gen_random(
    family: str,
    n: int,
    K: int,
    seed: int,
    cost_range: tuple[float, float] = (0, 10),
    *,
    feasible_mode: str = "exact",
    graph: str = "dag",
    density: float = 0.3,
    p: Optional[int] = None,
    max_group: int = 3,
    first_stage_range: Optional[tuple[float, float]] = None,
) -> TwoStageInstance:
    """Seeded random instance with uniform integer costs.

    ``n`` counts elements for rs and selection, nodes for graph families
    (arcs when ``graph='series_parallel'``), and the side size for assignment.
    Structures are feasible by construction.
    """
    family = canonical_family(family)
    lo, hi = cost_range
    if lo < 0 or hi < lo:
        raise InstanceError(f"bad cost range {cost_range}")
    if n < 1 or K < 1:
        raise InstanceError("n and K must be positive")
    rng = np.random.default_rng(seed)
    if family == "rs":
        perm = [int(v) for v in rng.permutation(n)]
        groups, k = [], 0
        while k < n:
            size = int(rng.integers(1, max_group + 1))
            groups.append(tuple(sorted(perm[k : k + size])))
            k += size
        structure = RsPartition(tuple(groups))
        m = n
    elif family == "selection":
        if p is None:
            p = int(rng.integers(1, n + 1))
        structure = SelectionCardinality(int(p))
        m = n
    elif family == "shortest-path":
        if graph == "series_parallel":
            nodes, arcs = _random_sp(rng, n)
            structure = Digraph(nodes, tuple(arcs), 0, 1)
        else:
            if n < 2:
                raise InstanceError("shortest-path needs at least two nodes")
            arcs = _random_dag(rng, n, density) if graph == "dag" else _random_digraph(rng, n, density)
            structure = Digraph(n, tuple(arcs), 0, n - 1)
        m = len(structure.arcs)
    elif family == "spanning-tree":
        if n < 2:
            raise InstanceError("spanning-tree needs at least two nodes")
        structure = UndirectedGraph(n, tuple(_random_connected(rng, n, density)))
        m = len(structure.edges)
    else:
        structure = Bipartite(n, n, tuple(_random_bipartite(rng, n, density)))
        m = len(structure.edges)
    flo, fhi = first_stage_range if first_stage_range is not None else (lo, hi)
    C = rng.integers(int(flo), int(fhi) + 1, size=m).astype(float)
    c = rng.integers(int(lo), int(hi) + 1, size=(K, m)).astype(float)
    w = rng.integers(1, 10, size=K).astype(float)
    probs = w / w.sum()
    return TwoStageInstance(
        family=family,
        first_stage_costs=C,
        scenario_costs=c,
        probabilities=probs,
        structure=structure,
        feasible_mode=feasible_mode,
    )
