import math

import numpy as np
import pytest

from riskstage.exact import brute_force_optimum
from riskstage.gadgets import gen_random
from riskstage.model import (
    InstanceError,
    RsPartition,
    SelectionCardinality,
    TwoStageInstance,
    evaluate_plan,
)
from riskstage.risk import Objective
from riskstage.selection import (
    RoundingTrace,
    k_hat_selection,
    round_half,
    rs_lp_round_cvar,
    rs_lp_round_robust,
    rs_normalize,
    rs_solve_expectation,
    selection_cost_envelope,
    selection_dp_expectation,
    selection_dp_table,
    selection_lp_budget,
    selection_randomized_rounding,
    selection_repair,
)

from oracles import naive_optimum


def rs(C, c, p=None, groups=None):
    c = np.atleast_2d(c)
    groups = groups or tuple((i,) for i in range(len(C)))
    probs = p if p is not None else np.full(len(c), 1.0 / len(c))
    return TwoStageInstance("rs", C, c, probs, RsPartition(tuple(groups)))


def selection(C, c, p_items, probs=None):
    c = np.atleast_2d(c)
    probs = probs if probs is not None else np.full(len(c), 1.0 / len(c))
    return TwoStageInstance("selection", C, c, probs, SelectionCardinality(p_items))


# ----------------------------------------------------------------- representatives selection


def test_rs_normalize_takes_group_minimum():
    inst = rs([3, 5], [[4, 9], [7, 1]], groups=[(0, 1)])
    norm = rs_normalize(inst)
    assert list(norm.first_stage_costs) == [3]
    assert norm.scenario_costs.tolist() == [[4], [1]]
    np.testing.assert_array_equal(norm.probabilities, inst.probabilities)


def test_rs_normalize_identity_on_singletons():
    inst = rs([1, 2], [[3, 4]])
    assert rs_normalize(inst) is inst


@pytest.mark.parametrize("seed", range(8))
def test_rs_normalize_preserves_optimum(seed):
    inst = gen_random("rs", 8, 3, 500 + seed)
    norm = rs_normalize(inst)
    for obj in (Objective.expectation(), Objective.robust(), Objective.cvar(0.4)):
        assert brute_force_optimum(inst, obj).value == pytest.approx(brute_force_optimum(norm, obj).value, abs=1e-9)


def test_rs_expectation_examples():
    defer = rs_solve_expectation(rs([3], [[4], [1]], p=[0.5, 0.5]))
    assert defer.value == pytest.approx(2.5) and defer.plan.x == (0,)
    buy = rs_solve_expectation(rs([2], [[4], [1]], p=[0.5, 0.5]))
    assert buy.value == pytest.approx(2.0) and buy.plan.x == (1,)
    tie = rs_solve_expectation(rs([2.5], [[4], [1]], p=[0.5, 0.5]))
    assert tie.value == pytest.approx(2.5) and tie.plan.x == (1,)


@pytest.mark.parametrize("seed", range(10))
def test_rs_expectation_is_exact(seed):
    inst = gen_random("rs", 9, 1 + seed % 4, 40 + seed)
    rep = rs_solve_expectation(inst)
    assert rep.value == pytest.approx(brute_force_optimum(inst, Objective.expectation()).value, abs=1e-9)
    assert rep.value == pytest.approx(rep.trace["stagewise_value"], abs=1e-9)


def test_round_half_threshold():
    assert list(round_half([0.6, 0.5, 0.49, 1.0, 0.0])) == [1, 1, 0, 1, 0]
    assert round_half([0.5 - 1e-12])[0] == 1


def test_rs_cvar_integral_relaxation_is_tight():
    # K=1: buying or deferring each tool is independent, the LP is integral
    inst = rs([1, 5, 2], [[3, 2, 2]], p=[1.0])
    rep = rs_lp_round_cvar(inst, 0.3)
    assert rep.value == pytest.approx(rep.lower_bound, abs=1e-9)
    assert rep.value == pytest.approx(5.0)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.7])
@pytest.mark.parametrize("seed", range(10))
def test_rs_cvar_ratio(alpha, seed):
    inst = gen_random("rs", 6 + seed % 4, 1 + seed % 4, 900 + seed)
    rep = rs_lp_round_cvar(inst, alpha)
    opt = brute_force_optimum(inst, Objective.cvar(alpha)).value
    assert rep.lower_bound <= opt + 1e-7
    assert rep.value <= min(2.0, 1.0 / (1.0 - alpha)) * opt + 1e-7
    assert evaluate_plan(inst, rep.plan, Objective.cvar(alpha)) == pytest.approx(rep.value, abs=1e-9)


def test_rs_robust_single_scenario_is_optimal():
    for seed in range(5):
        inst = gen_random("rs", 7, 1, 60 + seed)
        rep = rs_lp_round_robust(inst)
        assert rep.value == pytest.approx(brute_force_optimum(inst, Objective.robust()).value, abs=1e-9)


def test_rs_robust_half_solution_rounds_up():
    # scenario rows 4 - 3 x0 + 10 x1 and 2 + x0 + 8 x1 balance at x* = (0.5, 0), LP value 2.5
    inst = rs([1, 10], [[4, 0], [0, 2]])
    rep = rs_lp_round_robust(inst)
    np.testing.assert_allclose(rep.trace["x_star"], [0.5, 0.0], atol=1e-9)
    assert rep.lower_bound == pytest.approx(2.5)
    assert rep.plan.x == (1, 0)
    assert rep.value == pytest.approx(3.0)
    assert rep.value <= 2 * rep.lower_bound
    assert brute_force_optimum(inst, Objective.robust()).value == pytest.approx(3.0)


@pytest.mark.parametrize("seed", range(15))
def test_rs_robust_ratio(seed):
    inst = gen_random("rs", 6 + seed % 4, 1 + seed % 4, 1200 + seed)
    rep = rs_lp_round_robust(inst)
    opt = brute_force_optimum(inst, Objective.robust()).value
    assert rep.lower_bound <= opt + 1e-7
    assert rep.value <= 2 * rep.lower_bound + 1e-7
    assert rep.value <= 2 * opt + 1e-7


# ----------------------------------------------------------------- selection dynamic program


def test_dp_initial_state():
    inst = gen_random("selection", 5, 2, 1, p=2)
    assert selection_dp_table(inst).value(0, (0, 0, 0)) == 0.0


def test_dp_recurrence_example():
    C = [4.0, 3.0, 6.0]
    c = [[2.0, 5.0, 1.0], [7.0, 2.0, 3.0]]
    inst = selection(C, c, 2, probs=[0.4, 0.6])
    t = selection_dp_table(inst)
    p2 = inst.probabilities[1]
    want = min(t.value(1, (1, 0, 0)) + p2 * c[1][1], t.value(1, (0, 0, 1)) + C[1])
    assert t.value(2, (1, 0, 1)) == pytest.approx(want)
    assert want == pytest.approx(min(4.0 + 0.6 * 2.0, 0.6 * 7.0 + 3.0))


def test_dp_states_stay_in_range():
    inst = gen_random("selection", 6, 3, 2, p=3)
    for layer in selection_dp_table(inst).layers:
        for state in layer:
            assert all(0 <= v <= 3 for v in state)
            assert all(state[0] + l <= 3 for l in state[1:])


def test_dp_scenario_guard():
    inst = gen_random("selection", 4, 7, 0, p=2)
    with pytest.raises(InstanceError, match="scenarios"):
        selection_dp_expectation(inst)


@pytest.mark.parametrize("seed", range(20))
def test_dp_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    inst = gen_random("selection", n, int(rng.integers(1, 4)), 2000 + seed, p=int(rng.integers(1, min(n, 4) + 1)))
    rep = selection_dp_expectation(inst)
    assert rep.value == pytest.approx(brute_force_optimum(inst, Objective.expectation()).value, abs=1e-9)
    assert rep.value == pytest.approx(rep.trace["dp_value"], abs=1e-9)


# ----------------------------------------------------------------- budget relaxation and rounding


@pytest.mark.parametrize("seed", range(10))
def test_budget_is_a_lower_bound(seed):
    inst = gen_random("selection", 7, 2, 3000 + seed, p=3)
    sol = selection_lp_budget(inst)
    assert sol.L_star <= naive_optimum(inst, "expectation") + 1e-7
    n, K = inst.n, inst.K
    assert sol.y.shape == (K, n)
    # the witness satisfies the relaxation at L*
    weighted = inst.probabilities[:, None] * inst.scenario_costs
    assert inst.first_stage_costs @ sol.x + (weighted * sol.y).sum() <= sol.L_star + 1e-6
    for j in range(K):
        assert sol.x.sum() + sol.y[j].sum() == pytest.approx(3, abs=1e-7)
    assert not (sol.x[~sol.first_filter] > 1e-9).any()
    assert not (sol.y[~sol.second_filter] > 1e-9).any()


def test_k_hat_values():
    assert k_hat_selection(10, 2) == 827
    assert k_hat_selection(10, 2) == math.ceil(335 * math.log(10) + 40 * math.log(4))
    assert selection_cost_envelope(10, 2) > 827


def test_certain_coin_lands_in_first_stage():
    # item 0 is free in the first stage and must be taken: x*_0 = 1
    inst = selection([0.0, 9.0, 9.0], [[9.0, 9.0, 1.0]], 2, probs=[1.0])
    sol = selection_lp_budget(inst)
    assert sol.x[0] == pytest.approx(1.0)
    for seed in range(5):
        rep = selection_randomized_rounding(inst, seed, budget=sol)
        assert 0 in rep.trace["X"]


def test_rounding_is_reproducible():
    inst = gen_random("selection", 9, 3, 77, p=4)
    a = selection_randomized_rounding(inst, 123)
    b = selection_randomized_rounding(inst, 123)
    assert a.to_json() == b.to_json()
    assert a.seed == 123 and a.lower_bound == pytest.approx(selection_lp_budget(inst).L_star)


def test_repair_adds_cheapest_unused_item():
    inst = selection([5.0, 1.0, 3.0], [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], 2)
    trace = RoundingTrace(seed=0, k_hat=1, X=[0], Y=[[2], []], failed=True)
    fixed = selection_repair(inst, trace, [0, 1, 2])
    assert not fixed.failed
    assert fixed.repair_added == [1]
    assert fixed.X == [0, 1]


def test_repair_is_noop_when_feasible():
    inst = selection([5.0, 1.0], [[1.0, 1.0]], 1)
    trace = RoundingTrace(seed=0, k_hat=1, X=[0], Y=[[]], failed=False)
    fixed = selection_repair(inst, trace, [0, 1])
    assert fixed.X == [0] and fixed.repair_added == [] and not fixed.failed


def test_repair_failure_is_preserved():
    inst = selection([5.0, 1.0, 1.0], [[1.0, 1.0, 1.0]], 3, probs=[1.0])
    trace = RoundingTrace(seed=0, k_hat=1, X=[], Y=[[]], failed=True)
    assert selection_repair(inst, trace, [0]).failed


def test_plan_trimming_drops_costly_second_stage_items():
    inst = selection([9.0, 9.0, 9.0, 9.0], [[4.0, 1.0, 3.0, 2.0]], 2, probs=[1.0])
    from riskstage.selection import _selection_plan

    plan = _selection_plan(inst, [], [{0, 1, 2, 3}])
    assert plan.recourse[0] == (0, 1, 0, 1)


def test_rounding_statistics():
    """Over 100 seeds: failure before repair at most once; the cost envelope holds in 99 runs."""
    inst = gen_random("selection", 12, 2, 4242, p=4)
    sol = selection_lp_budget(inst)
    envelope = selection_cost_envelope(inst.n, inst.K)
    clean = within = 0
    for seed in range(100):
        rep = selection_randomized_rounding(inst, seed, budget=sol)
        tr = rep.trace
        clean += not tr["repaired"]
        within += tr["rounded_cost"] / sol.L_star <= envelope
        if rep.plan is not None:
            for j in range(inst.K):
                assert sum(rep.plan.x) + sum(rep.plan.recourse[j]) == 4
            assert evaluate_plan(inst, rep.plan, Objective.expectation()) == pytest.approx(rep.value, abs=1e-9)
    assert clean >= 99
    assert within >= 99
