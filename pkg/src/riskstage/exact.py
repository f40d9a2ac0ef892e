"""Exhaustive oracles: feasible-set catalogs, exact recourse and exact optima.

Everything here is deliberately simple and loud about its limits; the
approximation algorithms are tested against these functions.
"""

from __future__ import annotations

import heapq
import itertools
import os
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import (
    Bipartite,
    Digraph,
    InfeasibleFirstStage,
    NonCanonicalFirstStage,
    RsPartition,
    SelectionCardinality,
    SolveReport,
    TwoStageInstance,
    TwoStagePlan,
    UndirectedGraph,
    as_vector,
    make_report,
)
from .risk import Objective

ELEMENT_GUARD = 24
CATALOG_GUARD = 10**6
TIE_TOL = 1e-9


class GuardExceeded(RuntimeError):
    """An enumeration would exceed its size guard."""


def element_guard(override: Optional[int] = None) -> int:
    if override is not None:
        return int(override)
    env = os.environ.get("RISKSTAGE_GUARD_OVERRIDE")
    return int(env) if env else ELEMENT_GUARD


def catalog_guard() -> int:
    env = os.environ.get("RISKSTAGE_GUARD_OVERRIDE")
    return max(CATALOG_GUARD, 2 ** int(env)) if env else CATALOG_GUARD


def _tol(v: float) -> float:
    return TIE_TOL * max(1.0, abs(v))


# --------------------------------------------------------------------------- small graph helpers


class _DisjointSets:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def is_forest(edges, node_count: int) -> bool:
    ds = _DisjointSets(node_count)
    return all(ds.union(u, v) for u, v in edges)


def reachable(node_count: int, arcs, start: int, reverse: bool = False) -> np.ndarray:
    adj: list[list[int]] = [[] for _ in range(node_count)]
    for u, v in arcs:
        if reverse:
            u, v = v, u
        adj[u].append(v)
    seen = np.zeros(node_count, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def _dijkstra(g: Digraph, weights: np.ndarray, allowed: np.ndarray) -> float:
    adj = _out_adjacency(g)
    dist = [np.inf] * g.node_count
    dist[g.source] = 0.0
    heap = [(0.0, g.source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == g.sink:
            return d
        for a, v in adj[u]:
            if allowed[a]:
                nd = d + weights[a]
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
    return float(dist[g.sink])


_ADJ_CACHE: dict = {}


def _out_adjacency(g: Digraph):
    adj = _ADJ_CACHE.get(g)
    if adj is None:
        adj = [[] for _ in range(g.node_count)]
        for a, (u, v) in enumerate(g.arcs):
            adj[u].append((a, v))
        if len(_ADJ_CACHE) > 4096:
            _ADJ_CACHE.clear()
        _ADJ_CACHE[g] = adj
    return adj


def _kruskal(g: UndirectedGraph, weights: np.ndarray, allowed: np.ndarray) -> float:
    ds = _DisjointSets(g.node_count)
    total, joined = 0.0, 0
    for e in sorted(np.flatnonzero(allowed), key=lambda e: (weights[e], e)):
        u, v = g.edges[e]
        if ds.union(u, v):
            total += weights[e]
            joined += 1
    return total if joined == g.node_count - 1 else np.inf


def _matching(b: Bipartite, weights: np.ndarray, allowed: np.ndarray) -> float:
    if b.left_count != b.right_count:
        return np.inf
    M = np.full((b.left_count, b.right_count), np.inf)
    for e in np.flatnonzero(allowed):
        l, r = b.edges[e]
        if weights[e] < M[l, r]:
            M[l, r] = weights[e]
    try:
        rows, cols = linear_sum_assignment(M)
    except ValueError:
        return np.inf
    total = M[rows, cols].sum()
    return float(total)


# --------------------------------------------------------------------------- catalogs


@dataclass(frozen=True)
class FeasibleCatalog:
    """All members of X as rows of a boolean matrix."""

    members: np.ndarray

    def __len__(self) -> int:
        return len(self.members)

    def vectors(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.members]


def _paths(g: Digraph) -> Iterator[list[int]]:
    adj = _out_adjacency(g)
    on_path = [False] * g.node_count
    on_path[g.source] = True
    arcs: list[int] = []

    def walk(u):
        if u == g.sink:
            yield list(arcs)
            return
        for a, v in adj[u]:
            if not on_path[v]:
                on_path[v] = True
                arcs.append(a)
                yield from walk(v)
                arcs.pop()
                on_path[v] = False

    yield from walk(g.source)


def _trees(g: UndirectedGraph) -> Iterator[list[int]]:
    need = g.node_count - 1
    m = len(g.edges)

    def grow(k, parent, chosen):
        if len(chosen) == need:
            yield list(chosen)
            return
        if m - k < need - len(chosen):
            return
        u, v = g.edges[k]
        ds = _DisjointSets(0)
        ds.parent = list(parent)
        # contract edge k ...
        if ds.union(u, v):
            chosen.append(k)
            yield from grow(k + 1, ds.parent, chosen)
            chosen.pop()
        # ... or delete it
        yield from grow(k + 1, parent, chosen)

    if g.node_count == 1:
        yield []
        return
    yield from grow(0, list(range(g.node_count)), [])


def _matchings(b: Bipartite) -> Iterator[list[int]]:
    if b.left_count != b.right_count:
        return
    by_left: list[list[int]] = [[] for _ in range(b.left_count)]
    for e, (l, _) in enumerate(b.edges):
        by_left[l].append(e)
    used = [False] * b.right_count
    chosen: list[int] = []

    def place(l):
        if l == b.left_count:
            yield list(chosen)
            return
        for e in by_left[l]:
            r = b.edges[e][1]
            if not used[r]:
                used[r] = True
                chosen.append(e)
                yield from place(l + 1)
                chosen.pop()
                used[r] = False

    yield from place(0)


def _supports(inst: TwoStageInstance) -> Iterator:
    s = inst.structure
    if isinstance(s, SelectionCardinality):
        return itertools.combinations(range(inst.n), s.p)
    if isinstance(s, RsPartition):
        return itertools.product(*s.groups)
    if isinstance(s, Digraph):
        return _paths(s)
    if isinstance(s, UndirectedGraph):
        return _trees(s)
    return _matchings(s)


_CATALOGS: dict = {}


def enumerate_feasible(inst: TwoStageInstance, guard: Optional[int] = None) -> FeasibleCatalog:
    """The complete set X, duplicate free, in generation order."""
    key = (inst.structure, inst.n)
    limit = catalog_guard() if guard is None else guard
    if key in _CATALOGS:
        cat = _CATALOGS[key]
        if len(cat.members) > limit:
            raise GuardExceeded(f"feasible set has more than {limit} members")
        return cat
    rows = []
    for sup in _supports(inst):
        if len(rows) >= limit:
            raise GuardExceeded(f"feasible set has more than {limit} members")
        row = np.zeros(inst.n, dtype=bool)
        row[list(sup)] = True
        rows.append(row)
    members = np.array(rows, dtype=bool).reshape(len(rows), inst.n)
    cat = FeasibleCatalog(members)
    if len(_CATALOGS) > 256:
        _CATALOGS.clear()
    _CATALOGS[key] = cat
    return cat


# --------------------------------------------------------------------------- membership predicates


def is_member(inst: TwoStageInstance, z) -> bool:
    """z is (the characteristic vector of) a member of X."""
    z = as_vector(z, inst.n).astype(bool)
    s = inst.structure
    if isinstance(s, SelectionCardinality):
        return int(z.sum()) == s.p
    if isinstance(s, RsPartition):
        return all(int(z[list(g)].sum()) == 1 for g in s.groups)
    if isinstance(s, Digraph):
        out: dict[int, int] = {}
        for a in np.flatnonzero(z):
            u = s.arcs[a][0]
            if u in out:
                return False
            out[u] = a
        u, seen, used = s.source, {s.source}, 0
        while u != s.sink:
            if u not in out:
                return False
            u = s.arcs[out[u]][1]
            used += 1
            if u in seen:
                return False
            seen.add(u)
        return used == int(z.sum())
    if isinstance(s, UndirectedGraph):
        chosen = [s.edges[e] for e in np.flatnonzero(z)]
        return len(chosen) == s.node_count - 1 and is_forest(chosen, s.node_count)
    if s.left_count != s.right_count or int(z.sum()) != s.left_count:
        return False
    ends = [s.edges[e] for e in np.flatnonzero(z)]
    return len({l for l, _ in ends}) == s.left_count and len({r for _, r in ends}) == s.right_count


def contains_member(inst: TwoStageInstance, z) -> bool:
    """z contains some member of X."""
    z = as_vector(z, inst.n).astype(bool)
    return bool(np.isfinite(_member_min(inst, np.zeros((1, inst.n)), z)[0]))


def is_completable(inst: TwoStageInstance, x) -> bool:
    """Membership of x in X' (the partial solutions)."""
    x = as_vector(x, inst.n).astype(bool)
    s = inst.structure
    if isinstance(s, UndirectedGraph):
        return is_forest([s.edges[e] for e in np.flatnonzero(x)], s.node_count) and contains_member(
            inst, np.ones(inst.n)
        )
    if not inst.exact:
        return contains_member(inst, np.ones(inst.n))
    if isinstance(s, SelectionCardinality):
        return int(x.sum()) <= s.p
    if isinstance(s, RsPartition):
        return all(int(x[list(g)].sum()) <= 1 for g in s.groups)
    members = enumerate_feasible(inst).members
    return bool(np.any(np.all(members[:, x], axis=1)))


def is_valid_completion(inst: TwoStageInstance, x, y) -> bool:
    x = as_vector(x, inst.n).astype(bool)
    y = as_vector(y, inst.n).astype(bool)
    if np.any(x & y):
        return False
    s = inst.structure
    if isinstance(s, UndirectedGraph):
        if not is_forest([s.edges[e] for e in np.flatnonzero(x)], s.node_count):
            return False
    z = x | y
    return is_member(inst, z) if inst.exact else contains_member(inst, z)


# --------------------------------------------------------------------------- recourse


def _member_min(inst: TwoStageInstance, prices: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Per row of ``prices``: min over members z of X inside ``allowed`` of the summed price."""
    s = inst.structure
    prices = np.atleast_2d(prices)
    out = np.empty(len(prices))
    if isinstance(s, SelectionCardinality):
        avail = np.flatnonzero(allowed)
        if len(avail) < s.p:
            out[:] = np.inf
            return out
        part = np.sort(prices[:, avail], axis=1)[:, : s.p]
        return part.sum(axis=1)
    if isinstance(s, RsPartition):
        out[:] = 0.0
        for g in s.groups:
            g = [i for i in g if allowed[i]]
            if not g:
                out[:] = np.inf
                return out
            out += prices[:, g].min(axis=1)
        return out
    for j, row in enumerate(prices):
        if isinstance(s, Digraph):
            out[j] = _dijkstra(s, row, allowed)
        elif isinstance(s, UndirectedGraph):
            out[j] = _kruskal(s, row, allowed)
        else:
            out[j] = _matching(s, row, allowed)
    return out


def _exact_min(inst: TwoStageInstance, x: np.ndarray, costs: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Per row of ``costs``: min c(y) over y with x + y in X and y inside ``allowed``."""
    s = inst.structure
    costs = np.atleast_2d(costs)
    out = np.empty(len(costs))
    if isinstance(s, SelectionCardinality):
        need = s.p - int(x.sum())
        avail = np.flatnonzero(allowed & ~x)
        if need < 0 or len(avail) < need:
            out[:] = np.inf
            return out
        return np.sort(costs[:, avail], axis=1)[:, :need].sum(axis=1)
    if isinstance(s, RsPartition):
        out[:] = 0.0
        for g in s.groups:
            g = list(g)
            held = int(x[g].sum())
            if held > 1:
                out[:] = np.inf
                return out
            if held == 0:
                cand = [i for i in g if allowed[i]]
                if not cand:
                    out[:] = np.inf
                    return out
                out += costs[:, cand].min(axis=1)
        return out
    members = enumerate_feasible(inst).members
    ok = np.all(members[:, x], axis=1) & ~np.any(members & ~(allowed | x), axis=1)
    if not ok.any():
        out[:] = np.inf
        return out
    rest = members[ok] & ~x
    return (rest.astype(float) @ costs.T).min(axis=0)


def _check_canonical(inst: TwoStageInstance, x: np.ndarray) -> None:
    s = inst.structure
    if isinstance(s, UndirectedGraph):
        if not is_forest([s.edges[e] for e in np.flatnonzero(x)], s.node_count):
            raise NonCanonicalFirstStage("first-stage edges contain a cycle; an acyclic subset is never worse")


def _recourse_min(inst, x: np.ndarray, rows: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    if inst.exact:
        return _exact_min(inst, x, rows, allowed)
    prices = np.where(x, 0.0, rows)
    return _member_min(inst, prices, allowed | x)


def recourse_values(inst: TwoStageInstance, x) -> np.ndarray:
    """Optimal recourse cost of ``x`` under every scenario."""
    x = as_vector(x, inst.n).astype(bool)
    _check_canonical(inst, x)
    vals = _recourse_min(inst, x, inst.scenario_costs, np.ones(inst.n, dtype=bool))
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise InfeasibleFirstStage(f"first stage cannot be completed under scenario {bad[0]}", scenario=int(bad[0]))
    return vals


def family_recourse(inst: TwoStageInstance, x, j: int) -> tuple[float, np.ndarray]:
    """(cost, y) of the optimal recourse under scenario j; ties go to the lexicographically smallest y."""
    x = as_vector(x, inst.n).astype(bool)
    _check_canonical(inst, x)
    row = inst.scenario_costs[j]
    allowed = np.ones(inst.n, dtype=bool)
    opt = float(_recourse_min(inst, x, row, allowed)[0])
    if not np.isfinite(opt):
        raise InfeasibleFirstStage(f"first stage cannot be completed under scenario {j}", scenario=j)
    tol = _tol(opt)
    if inst.exact and isinstance(inst.structure, (Digraph, Bipartite)):
        members = enumerate_feasible(inst).members
        ok = np.all(members[:, x], axis=1)
        rest = members[ok] & ~x
        vals = rest.astype(float) @ row
        best = rest[vals <= opt + tol]
        y = min(tuple(int(v) for v in r) for r in best)
        return opt, np.array(y, dtype=np.int8)
    # forbid elements in increasing index order whenever the optimum survives;
    # what is left is the lexicographically smallest optimal y
    for i in range(inst.n):
        if x[i]:
            continue
        allowed[i] = False
        if float(_recourse_min(inst, x, row, allowed)[0]) > opt + tol:
            allowed[i] = True
    y = (allowed & ~x).astype(np.int8)
    if not inst.exact:
        # keep only elements the chosen member actually needs
        y = _prune_superset(inst, x, y, row, opt, tol)
    return opt, y


def _prune_superset(inst, x, y, row, opt, tol):
    y = y.astype(bool)
    for i in np.flatnonzero(y):
        y[i] = False
        allowed = y | x
        val = float(_member_min(inst, np.where(x, 0.0, row), allowed)[0])
        if val > opt + tol:
            y[i] = True
    return y.astype(np.int8)


# --------------------------------------------------------------------------- brute-force optima


def _lex_first(rows: np.ndarray) -> np.ndarray:
    order = np.lexsort(rows[:, ::-1].T)
    return rows[order[0]]


def _submask_table(members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (submask, member) pairs; submasks are int64 bit codes."""
    n = members.shape[1]
    if n > 62:
        raise GuardExceeded("exact-mode enumeration supports at most 62 elements")
    weights = np.int64(1) << np.arange(n, dtype=np.int64)
    codes, owners = [], []
    for m, row in enumerate(members):
        idx = np.flatnonzero(row)
        k = len(idx)
        patterns = (np.arange(1 << k, dtype=np.int64)[:, None] >> np.arange(k, dtype=np.int64)) & 1
        codes.append(patterns @ weights[idx] if k else np.zeros(1, dtype=np.int64))
        owners.append(np.full(1 << k, m, dtype=np.int64))
    return np.concatenate(codes), np.concatenate(owners)


def _decode(codes: np.ndarray, n: int) -> np.ndarray:
    return ((codes[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def exhaustive_values(inst: TwoStageInstance, objective: Objective, guard: Optional[int] = None):
    """Exact-mode table: every x below some member with its objective value.

    Returns (xs as bool matrix, values).
    """
    members = enumerate_feasible(inst).members
    if len(members) == 0:
        raise InfeasibleFirstStage("the feasible set is empty")
    sizes = members.sum(axis=1)
    limit = 2 ** element_guard(guard)
    if int((2 ** sizes.astype(np.int64)).sum()) > max(limit, catalog_guard()):
        raise GuardExceeded("too many first-stage candidates")
    codes, owners = _submask_table(members)
    member_cost = members.astype(float) @ inst.scenario_costs.T  # (M, K)
    order = np.argsort(codes, kind="stable")
    codes, owners = codes[order], owners[order]
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    uniq = codes[starts]
    best = np.minimum.reduceat(member_cost[owners], starts, axis=0)  # (N, K)
    xs = _decode(uniq, inst.n)
    rec = best - xs.astype(float) @ inst.scenario_costs.T
    rec = np.maximum(rec, 0.0)
    values = xs.astype(float) @ inst.first_stage_costs + objective.rows(rec, inst.probabilities)
    return xs, values


def _superset_candidates(inst: TwoStageInstance) -> np.ndarray:
    s = inst.structure
    if isinstance(s, Digraph):
        fwd = reachable(s.node_count, s.arcs, s.source)
        bwd = reachable(s.node_count, s.arcs, s.sink, reverse=True)
        return np.array(
            [fwd[u] and bwd[v] and v != s.source and u != s.sink for u, v in s.arcs], dtype=bool
        )
    cand = np.zeros(inst.n, dtype=bool)
    if isinstance(s, (SelectionCardinality, RsPartition)):
        cand[:] = True
        return cand
    return enumerate_feasible(inst).members.any(axis=0)


def _superset_search(inst: TwoStageInstance, objective: Objective, guard: Optional[int]):
    C = inst.first_stage_costs
    c = inst.scenario_costs
    probs = inst.probabilities
    everything = np.ones(inst.n, dtype=bool)
    if not np.isfinite(_member_min(inst, np.zeros((1, inst.n)), everything)[0]):
        raise InfeasibleFirstStage("the feasible set is empty")
    cand = _superset_candidates(inst)
    # buying i with C_i >= c_ij for every j never helps (and is never lexicographically first)
    cand &= C < c.max(axis=0)
    order = sorted(np.flatnonzero(cand), key=lambda i: (-C[i], i))
    if len(order) > element_guard(guard):
        raise GuardExceeded(f"{len(order)} candidate elements exceed the guard of {element_guard(guard)}")

    def value_of(x):
        prices = np.where(x, 0.0, c)
        rec = _member_min(inst, prices, everything)
        return float(C @ x + objective.rows([rec], probs)[0])

    x0 = np.zeros(inst.n, dtype=bool)
    found = [(value_of(x0), x0)]
    stagewise = cand & (C <= probs @ c)
    found.append((value_of(stagewise), stagewise))
    best = min(v for v, _ in found)

    cheap = np.minimum(C, c)
    x = np.zeros(inst.n, dtype=bool)
    undecided = cand.copy()

    def visit(k, first_cost):
        nonlocal best
        prices = np.where(x, 0.0, np.where(undecided, cheap, c))
        bound = first_cost + float(objective.rows([_member_min(inst, prices, everything)], probs)[0])
        if bound > best + _tol(best):
            return
        if k == len(order):
            found.append((bound, x.copy()))
            best = min(best, bound)
            return
        i = order[k]
        undecided[i] = False
        visit(k + 1, first_cost)
        x[i] = True
        visit(k + 1, first_cost + C[i])
        x[i] = False
        undecided[i] = True

    visit(0, 0.0)
    xs = np.array([f[1] for f in found])
    values = np.array([f[0] for f in found])
    return xs, values


def brute_force_optimum(inst: TwoStageInstance, objective: Objective, guard: Optional[int] = None) -> SolveReport:
    """Global optimum of C x + F[Y^x]; ties go to the lexicographically smallest x."""
    if inst.exact or isinstance(inst.structure, UndirectedGraph):
        xs, values = exhaustive_values(inst, objective, guard)
        search = "submasks"
    else:
        xs, values = _superset_search(inst, objective, guard)
        search = "pruned-subsets"
    best = float(values.min())
    x = _lex_first(xs[values <= best + _tol(best)])
    rep = make_report(inst, x, objective, "brute", lower_bound=None, trace={"search": search, "visited": len(xs)})
    return rep


# --------------------------------------------------------------------------- connectivity oracle


def _simple_paths(g: Digraph, start: int, stop: Optional[int]) -> Iterator[list[int]]:
    """Simple paths from ``start``; to ``stop`` if given, else to every node (including the empty path)."""
    adj = _out_adjacency(g)
    seen = [False] * g.node_count
    seen[start] = True
    arcs: list[int] = []

    def walk(u):
        if stop is None or u == stop:
            yield u, list(arcs)
            if stop is not None:
                return
        for a, v in adj[u]:
            if not seen[v]:
                seen[v] = True
                arcs.append(a)
                yield from walk(v)
                arcs.pop()
                seen[v] = False

    yield from walk(start)


def brute_force_connectivity(inst: TwoStageInstance, objective: Objective) -> SolveReport:
    """Exhaustive optimum of the connectivity variant: the first stage is an s -> v path.

    Every node v and every s -> v path P are tried; each scenario then buys the
    cheapest v -> t path disjoint from P.
    """
    g = inst.structure
    if not isinstance(g, Digraph):
        raise ValueError("connectivity needs a shortest-path instance")
    C, c = inst.first_stage_costs, inst.scenario_costs
    best = None
    for v, P in _simple_paths(g, g.source, None):
        used = {g.source} | {g.arcs[a][1] for a in P}
        tails = []
        for _, Q in _simple_paths(g, v, g.sink):
            if any(g.arcs[a][1] in used and g.arcs[a][1] != v for a in Q):
                continue
            tails.append(Q)
        if not tails:
            continue
        Qmat = np.zeros((len(tails), inst.n))
        for r, Q in enumerate(tails):
            Qmat[r, Q] = 1.0
        qc = Qmat @ c.T  # (paths, K)
        pick = []
        for j in range(inst.K):
            m = qc[:, j].min()
            rows = Qmat[qc[:, j] <= m + _tol(m)].astype(np.int8)
            pick.append(_lex_first(rows))
        rec = np.array([qc[:, j].min() for j in range(inst.K)])
        value = float(C[P].sum() + objective.rows([rec], inst.probabilities)[0])
        x = np.zeros(inst.n, dtype=np.int8)
        x[P] = 1
        key = (value, tuple(x))
        if best is None or value < best[0][0] - _tol(best[0][0]) or (
            abs(value - best[0][0]) <= _tol(best[0][0]) and key[1] < best[0][1]
        ):
            best = (key, x, pick, rec)
    if best is None:
        raise InfeasibleFirstStage("sink is unreachable")
    (value, _), x, pick, rec = best
    plan = TwoStagePlan(tuple(int(v) for v in x), tuple(tuple(int(v) for v in y) for y in pick))
    return SolveReport(
        objective=objective,
        value=value,
        plan=plan,
        per_scenario_cost=tuple(float(v) for v in rec),
        algorithm="connectivity-brute",
    )
