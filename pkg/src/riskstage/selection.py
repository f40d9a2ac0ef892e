"""Representatives selection (RS) and cardinality-p selection algorithms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .lp import LpError, LpProblem, budget_tolerance, lp_solve, min_feasible_budget, refine_budget
from .model import (
    InstanceError,
    RsPartition,
    SelectionCardinality,
    SolveReport,
    TwoStageInstance,
    TwoStagePlan,
    failure_report,
    make_report,
)
from .risk import Objective
from .rng import SplitMix64

ROUND_THRESHOLD = 0.5
ROUND_SLACK = 1e-9
DP_MAX_SCENARIOS = 6


def _require(inst: TwoStageInstance, family: str) -> None:
    if inst.family != family:
        raise InstanceError(f"expected a {family} instance, got {inst.family}")


# --------------------------------------------------------------------------- representatives selection


def rs_normalize(inst: TwoStageInstance) -> TwoStageInstance:
    """Collapse every group to one tool priced at the group minimum (per stage and scenario)."""
    _require(inst, "rs")
    groups = inst.structure.groups
    if all(len(g) == 1 for g in groups) and [g[0] for g in groups] == list(range(inst.n)):
        return inst
    C = np.array([inst.first_stage_costs[list(g)].min() for g in groups])
    c = np.stack([inst.scenario_costs[:, list(g)].min(axis=1) for g in groups], axis=1)
    return inst.replace(
        first_stage_costs=C,
        scenario_costs=c,
        structure=RsPartition(tuple((k,) for k in range(len(groups)))),
    )


def _lift_rs(inst: TwoStageInstance, x_groups) -> np.ndarray:
    """First-stage vector on the original tools: the cheapest tool of each bought group."""
    x = np.zeros(inst.n, dtype=np.int8)
    for k, g in enumerate(inst.structure.groups):
        if x_groups[k]:
            g = list(g)
            x[g[int(np.argmin(inst.first_stage_costs[g]))]] = 1
    return x


def _rs_stagewise(norm: TwoStageInstance) -> np.ndarray:
    expected = norm.probabilities @ norm.scenario_costs
    return (norm.first_stage_costs <= expected).astype(np.int8)


def rs_solve_expectation(inst: TwoStageInstance) -> SolveReport:
    """Exact expectation optimum: buy a group now iff its first-stage price is at most its expected price."""
    norm = rs_normalize(inst)
    xg = _rs_stagewise(norm)
    expected = norm.probabilities @ norm.scenario_costs
    closed_form = float(np.minimum(norm.first_stage_costs, expected).sum())
    return make_report(
        inst,
        _lift_rs(inst, xg),
        Objective.expectation(),
        "rs-expectation",
        lower_bound=None,
        trace={"stagewise_value": closed_form},
    )


def round_half(values) -> np.ndarray:
    """1 where the fractional value reaches one half (allowing for LP round-off)."""
    return (np.asarray(values, dtype=float) >= ROUND_THRESHOLD - ROUND_SLACK).astype(np.int8)


def rs_cvar_lp(norm: TwoStageInstance, alpha: float) -> tuple[float, np.ndarray]:
    """Relaxation of min Cx + gamma + E[(c_j(1-x) - gamma)^+]/(1-alpha) over x in [0,1]^n."""
    n, K = norm.n, norm.K
    C, c, p = norm.first_stage_costs, norm.scenario_costs, norm.probabilities
    lp = LpProblem()
    xs = [lp.add_variable(C[i], 0.0, 1.0, f"x{i}") for i in range(n)]
    g_pos = lp.add_variable(1.0, 0.0, math.inf, "gamma+")
    g_neg = lp.add_variable(-1.0, 0.0, math.inf, "gamma-")
    scale = 1.0 / (1.0 - alpha)
    us = [lp.add_variable(scale * p[j], 0.0, math.inf, f"u{j}") for j in range(K)]
    for j in range(K):
        row = {us[j]: 1.0, g_pos: 1.0, g_neg: -1.0}
        for i in range(n):
            if c[j, i]:
                row[xs[i]] = c[j, i]
        lp.add_row(row, ">=", float(c[j].sum()))
    out = lp_solve(lp)
    if not out.optimal:
        raise LpError(f"CVaR relaxation is {out.verdict}")
    return out.objective_value, out.values[:n]


def rs_robust_lp(norm: TwoStageInstance) -> tuple[float, np.ndarray]:
    """Relaxation of min L s.t. Cx + c_j(1-x) <= L for every scenario, x in [0,1]^n."""
    n, K = norm.n, norm.K
    C, c = norm.first_stage_costs, norm.scenario_costs
    lp = LpProblem()
    xs = [lp.add_variable(0.0, 0.0, 1.0, f"x{i}") for i in range(n)]
    L = lp.add_variable(1.0, 0.0, math.inf, "L")
    for j in range(K):
        row = {L: -1.0}
        for i in range(n):
            if C[i] - c[j, i]:
                row[xs[i]] = C[i] - c[j, i]
        lp.add_row(row, "<=", -float(c[j].sum()))
    out = lp_solve(lp)
    if not out.optimal:
        raise LpError(f"robust relaxation is {out.verdict}")
    return out.objective_value, out.values[:n]


def rs_lp_round_cvar(inst: TwoStageInstance, alpha: float) -> SolveReport:
    """Half rounding of the CVaR relaxation, or the expectation optimum if that scores better."""
    objective = Objective.cvar(alpha)
    norm = rs_normalize(inst)
    bound, xstar = rs_cvar_lp(norm, objective.alpha)
    rounded = make_report(inst, _lift_rs(inst, round_half(xstar)), objective, "rs-lp2-cvar")
    stagewise = make_report(inst, _lift_rs(inst, _rs_stagewise(norm)), objective, "rs-lp2-cvar")
    pick, which = (rounded, "rounded") if rounded.value <= stagewise.value else (stagewise, "expectation")
    return SolveReport(
        objective=objective,
        value=pick.value,
        plan=pick.plan,
        per_scenario_cost=pick.per_scenario_cost,
        algorithm="rs-lp2-cvar",
        lower_bound=bound,
        trace={
            "x_star": [float(v) for v in xstar],
            "lp_value": bound,
            "rounded_value": rounded.value,
            "expectation_value": stagewise.value,
            "chosen": which,
        },
    )


def rs_lp_round_robust(inst: TwoStageInstance) -> SolveReport:
    """Half rounding of the robust relaxation; within twice the LP bound."""
    norm = rs_normalize(inst)
    bound, xstar = rs_robust_lp(norm)
    rep = make_report(inst, _lift_rs(inst, round_half(xstar)), Objective.robust(), "rs-lp2-robust")
    return SolveReport(
        objective=rep.objective,
        value=rep.value,
        plan=rep.plan,
        per_scenario_cost=rep.per_scenario_cost,
        algorithm="rs-lp2-robust",
        lower_bound=bound,
        trace={"x_star": [float(v) for v in xstar], "lp_value": bound},
    )


# --------------------------------------------------------------------------- selection: dynamic program


@dataclass
class DpTable:
    """Layer i maps (L, l_1..l_K) to the cheapest expected cost of items 1..i."""

    layers: list = field(default_factory=list)
    choices: list = field(default_factory=list)

    def value(self, i: int, state) -> float:
        return self.layers[i].get(tuple(state), math.inf)


def selection_dp_table(inst: TwoStageInstance) -> DpTable:
    _require(inst, "selection")
    K = inst.K
    if K > DP_MAX_SCENARIOS:
        raise InstanceError(f"dynamic program limited to {DP_MAX_SCENARIOS} scenarios, got {K}")
    p = inst.structure.p
    C, c, prob = inst.first_stage_costs, inst.scenario_costs, inst.probabilities
    subsets = [s for s in product((0, 1), repeat=K) if any(s)]
    table = DpTable()
    layer = {(0,) * (K + 1): 0.0}
    table.layers.append(layer)
    for i in range(inst.n):
        nxt: dict = {}
        back: dict = {}

        def offer(state, value, move):
            if value < nxt.get(state, math.inf):
                nxt[state] = value
                back[state] = move

        weighted = prob * c[:, i]
        for state, v in layer.items():
            L, ls = state[0], state[1:]
            offer(state, v, (state, "skip"))
            if L + max(ls) < p:
                offer((L + 1,) + ls, v + C[i], (state, "first"))
            for s in subsets:
                new = tuple(l + b for l, b in zip(ls, s))
                if all(L + l <= p for l in new):
                    cost = v + float(sum(weighted[j] for j in range(K) if s[j]))
                    offer((L,) + new, cost, (state, s))
        layer = nxt
        table.layers.append(layer)
        table.choices.append(back)
    return table


def selection_dp_expectation(inst: TwoStageInstance) -> SolveReport:
    """Exact expectation optimum by dynamic programming over per-scenario counts."""
    table = selection_dp_table(inst)
    p = inst.structure.p
    final = {s: v for s, v in table.layers[-1].items() if all(s[0] + l == p for l in s[1:])}
    if not final:
        raise InstanceError("no selection of size p exists")
    state = min(final, key=lambda s: (final[s], s))
    best = final[state]
    x = np.zeros(inst.n, dtype=np.int8)
    for i in range(inst.n - 1, -1, -1):
        prev, move = table.choices[i][state]
        if move == "first":
            x[i] = 1
        state = prev
    return make_report(inst, x, Objective.expectation(), "selection-dp", trace={"dp_value": best})


# --------------------------------------------------------------------------- selection: LP budget and rounding


@dataclass(frozen=True)
class BudgetSolution:
    L_star: float
    x: np.ndarray
    y: np.ndarray  # (K, n)
    first_filter: np.ndarray
    second_filter: np.ndarray


def _selection_lp(inst: TwoStageInstance, L: float, minimize_cost: bool) -> tuple[LpProblem, int]:
    n, K, p = inst.n, inst.K, inst.structure.p
    C, c, prob = inst.first_stage_costs, inst.scenario_costs, inst.probabilities
    weighted = prob[:, None] * c
    lp = LpProblem()
    x = [lp.add_variable(C[i] if minimize_cost else 0.0, 0.0, 1.0 if C[i] <= L else 0.0) for i in range(n)]
    y = [
        [lp.add_variable(weighted[j, i] if minimize_cost else 0.0, 0.0, 1.0 if weighted[j, i] <= L else 0.0)
         for i in range(n)]
        for j in range(K)
    ]
    if not minimize_cost:
        budget = {x[i]: C[i] for i in range(n) if C[i]}
        for j in range(K):
            budget.update({y[j][i]: weighted[j, i] for i in range(n) if weighted[j, i]})
        lp.add_row(budget, "<=", L)
    for j in range(K):
        lp.add_row({**{x[i]: 1.0 for i in range(n)}, **{y[j][i]: 1.0 for i in range(n)}}, "=", p)
        for i in range(n):
            lp.add_row({x[i]: 1.0, y[j][i]: 1.0}, "<=", 1.0)
    return lp, n


def selection_lp_budget(inst: TwoStageInstance) -> BudgetSolution:
    """Smallest budget L* for which the filtered selection relaxation is feasible, with its witness."""
    _require(inst, "selection")
    n, K = inst.n, inst.K
    C, c, prob = inst.first_stage_costs, inst.scenario_costs, inst.probabilities
    weighted = prob[:, None] * c
    hi = float(C.sum() + weighted.sum())

    L_hi, witness = min_feasible_budget(lambda L: _selection_lp(inst, L, False)[0], 0.0, hi)

    def min_cost(L):
        out = lp_solve(_selection_lp(inst, L, True)[0])
        return (out.objective_value, out) if out.optimal else None

    breaks = np.r_[C, weighted.ravel()]
    refined = refine_budget(min_cost, breaks, L_hi - budget_tolerance(hi), L_hi)
    L_star = L_hi
    if refined is not None and refined[0] <= L_hi:
        L_star, witness = refined
    vals = witness.values
    x = np.clip(vals[:n], 0.0, 1.0)
    y = np.clip(vals[n:].reshape(K, n), 0.0, 1.0)
    return BudgetSolution(
        L_star=float(L_star),
        x=x,
        y=y,
        first_filter=C <= L_star,
        second_filter=weighted <= L_star,
    )


def k_hat_selection(n: int, K: int) -> int:
    return math.ceil(335 * math.log(n) + 40 * math.log(2 * K))


def selection_cost_envelope(n: int, K: int) -> float:
    """Normalized (L* = 1) cost level exceeded with probability below 1/(2n^2)."""
    k = k_hat_selection(n, K)
    return k + (math.e - 1) * math.sqrt(k * math.log(2 * n * n))


@dataclass
class RoundingTrace:
    seed: int
    k_hat: int
    X: list
    Y: list
    failed: bool
    repair_added: list = field(default_factory=list)
    L_star: float = 0.0
    rounded_cost: float = 0.0

    def normalized_cost(self) -> float:
        if self.L_star > 0:
            return self.rounded_cost / self.L_star
        return 0.0 if self.rounded_cost == 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "k_hat": self.k_hat,
            "X": list(self.X),
            "Y": [list(y) for y in self.Y],
            "failed": self.failed,
            "repair_added": list(self.repair_added),
            "L_star": self.L_star,
            "rounded_cost": self.rounded_cost,
        }


def flip_coins(stream: SplitMix64, probs: np.ndarray, k_hat: int) -> np.ndarray:
    """k_hat flips per coin, in order; a coin lands in the set if any flip is a head."""
    if len(probs) == 0:
        return np.zeros(0, dtype=bool)
    u = stream.random_block(len(probs) * k_hat).reshape(len(probs), k_hat)
    return u.min(axis=1) < probs


def _selection_deficient(inst, X: set, Y: list) -> list[int]:
    p = inst.structure.p
    return [j for j in range(inst.K) if len(X | Y[j]) < p]


def selection_repair(inst: TwoStageInstance, trace: RoundingTrace, pool) -> RoundingTrace:
    """Add items from ``pool`` to X, cheapest first-stage price first, until every scenario has p items."""
    X = set(trace.X)
    Y = [set(y) for y in trace.Y]
    added = list(trace.repair_added)
    C = inst.first_stage_costs
    for i in sorted((i for i in pool if i not in X), key=lambda i: (C[i], i)):
        if not _selection_deficient(inst, X, Y):
            break
        X.add(i)
        added.append(i)
    failed = bool(_selection_deficient(inst, X, Y))
    return RoundingTrace(
        seed=trace.seed,
        k_hat=trace.k_hat,
        X=sorted(X),
        Y=[sorted(y) for y in Y],
        failed=failed,
        repair_added=added,
        L_star=trace.L_star,
        rounded_cost=trace.rounded_cost,
    )


def _selection_plan(inst: TwoStageInstance, X: list, Y: list) -> TwoStagePlan:
    p = inst.structure.p
    C = inst.first_stage_costs
    keep = sorted(X, key=lambda i: (C[i], i))[:p]
    x = np.zeros(inst.n, dtype=np.int8)
    x[keep] = 1
    rec = []
    for j in range(inst.K):
        row = inst.scenario_costs[j]
        extra = sorted((i for i in Y[j] if not x[i]), key=lambda i: (row[i], i))
        need = p - len(keep)
        y = np.zeros(inst.n, dtype=np.int8)
        y[extra[:need]] = 1
        rec.append(tuple(int(v) for v in y))
    return TwoStagePlan(tuple(int(v) for v in x), tuple(rec))


def selection_randomized_rounding(
    inst: TwoStageInstance, seed: int, budget: Optional[BudgetSolution] = None
) -> SolveReport:
    """Repeated coin-flip rounding of the budget relaxation, with greedy repair."""
    _require(inst, "selection")
    sol = budget if budget is not None else selection_lp_budget(inst)
    n, K = inst.n, inst.K
    k = k_hat_selection(n, K)
    stream = SplitMix64(seed)
    first = np.flatnonzero(sol.first_filter)
    heads = flip_coins(stream, sol.x[first], k)
    X = {int(i) for i in first[heads]}
    Y = []
    for j in range(K):
        items = np.flatnonzero(sol.second_filter[j])
        hj = flip_coins(stream, sol.y[j, items], k)
        Y.append({int(i) for i in items[hj]})
    C, prob, c = inst.first_stage_costs, inst.probabilities, inst.scenario_costs
    raw = float(sum(C[i] for i in X) + sum(prob[j] * c[j, i] for j in range(K) for i in Y[j]))
    trace = RoundingTrace(
        seed=int(seed),
        k_hat=k,
        X=sorted(X),
        Y=[sorted(y) for y in Y],
        failed=bool(_selection_deficient(inst, X, Y)),
        L_star=sol.L_star,
        rounded_cost=raw,
    )
    repaired = False
    if trace.failed:
        trace = selection_repair(inst, trace, [int(i) for i in first])
        repaired = True
    objective = Objective.expectation()
    info = trace.to_dict()
    info["repaired"] = repaired
    if trace.failed:
        return failure_report(objective, "selection-rr", K, seed=int(seed), trace=info, lower_bound=sol.L_star)
    plan = _selection_plan(inst, trace.X, [set(y) for y in trace.Y])
    costs = tuple(float(c[j] @ np.array(plan.recourse[j])) for j in range(K))
    value = float(C @ np.array(plan.x)) + float(objective.rows([costs], prob)[0])
    return SolveReport(
        objective=objective,
        value=value,
        plan=plan,
        per_scenario_cost=costs,
        algorithm="selection-rr",
        lower_bound=sol.L_star,
        seed=int(seed),
        trace=info,
    )
