import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskstage.risk import (
    DiscreteDistribution,
    Objective,
    RiskDomainError,
    augment_with_zero_scenario,
    cvar,
    cvar_ratio_sigma,
    expectation,
    worst_case,
)
from riskstage.gadgets import gen_random
from riskstage.model import evaluate_first_stage

from oracles import all_vectors, grid_cvar, risk


def dist(*atoms):
    return DiscreteDistribution.from_atoms(atoms)


@st.composite
def distributions(draw, max_atoms=8):
    k = draw(st.integers(1, max_atoms))
    values = draw(st.lists(st.integers(0, 40), min_size=k, max_size=k))
    weights = draw(st.lists(st.integers(1, 9), min_size=k, max_size=k))
    total = sum(weights)
    return DiscreteDistribution(tuple(float(v) for v in values), tuple(w / total for w in weights))


alphas = st.floats(0.0, 0.95, allow_nan=False)


@pytest.mark.parametrize(
    "d, e, w",
    [
        (dist((10, 0.5), (20, 0.5)), 15.0, 20.0),
        (dist((5, 1.0)), 5.0, 5.0),
        (dist((0, 0.25), (4, 0.75)), 3.0, 4.0),
        (dist((3, 0.9), (7, 0.1)), 3.4, 7.0),
    ],
)
def test_expectation_and_worst_case(d, e, w):
    assert expectation(d) == pytest.approx(e, abs=1e-12)
    assert worst_case(d) == w


def test_cvar_examples():
    d = dist((10, 0.5), (20, 0.5))
    assert cvar(d, 0.0) == 15.0
    assert cvar(d, 0.5) == pytest.approx(20.0, abs=1e-12)
    assert abs(grid_cvar(d.values, d.probabilities, 0.5) - 20.0) <= 0.01
    assert cvar(dist((5, 1.0)), 0.7) == pytest.approx(5.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [-0.1, 1.0, 1.5, math.nan])
def test_cvar_rejects_alpha_outside_domain(alpha):
    with pytest.raises(RiskDomainError):
        cvar(dist((1, 1.0)), alpha)


@pytest.mark.parametrize(
    "alpha, pr_min, sigma",
    [(0.0, 0.5, 1.0), (0.9, 0.5, 2.0), (0.5, 0.1, 2.0)],
)
def test_sigma_examples(alpha, pr_min, sigma):
    assert cvar_ratio_sigma(alpha, pr_min) == pytest.approx(sigma, abs=1e-12)


@pytest.mark.parametrize("pr_min", [0.0, -0.2, 1.5])
def test_sigma_rejects_bad_probability(pr_min):
    with pytest.raises(RiskDomainError):
        cvar_ratio_sigma(0.3, pr_min)


def test_distribution_validation():
    with pytest.raises(ValueError, match="sum to"):
        dist((1, 0.5), (2, 0.6))
    with pytest.raises(ValueError):
        dist((-1, 1.0))
    with pytest.raises(ValueError):
        DiscreteDistribution((), ())


@settings(max_examples=200, deadline=None)
@given(distributions(), alphas)
def test_lemma_bounds(d, alpha):
    e, cv = expectation(d), cvar(d, alpha)
    sigma = cvar_ratio_sigma(alpha, d.min_probability)
    assert e <= cv + 1e-9
    assert cv <= sigma * e + 1e-9
    assert cv <= worst_case(d) + 1e-9


@settings(max_examples=200, deadline=None)
@given(distributions())
def test_cvar_at_zero_is_expectation(d):
    assert cvar(d, 0.0) == expectation(d)


@settings(max_examples=100, deadline=None)
@given(distributions(), alphas, alphas)
def test_cvar_monotone_in_alpha(d, a, b):
    lo, hi = sorted((a, b))
    assert cvar(d, lo) <= cvar(d, hi) + 1e-9


@settings(max_examples=100, deadline=None)
@given(distributions(), alphas)
def test_cvar_matches_grid_and_tail_formula(d, alpha):
    v = cvar(d, alpha)
    assert abs(v - grid_cvar(d.values, d.probabilities, alpha)) <= 0.01
    assert v == pytest.approx(risk(d.values, d.probabilities, "cvar", alpha), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(distributions(), alphas, st.floats(0.0, 10.0))
def test_cvar_homogeneous(d, alpha, factor):
    assert cvar(d.scaled(factor), alpha) == pytest.approx(factor * cvar(d, alpha), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(distributions(), alphas, st.data())
def test_cvar_respects_atomwise_dominance(d, alpha, data):
    bumps = data.draw(st.lists(st.integers(0, 5), min_size=len(d.values), max_size=len(d.values)))
    bigger = DiscreteDistribution(tuple(v + b for v, b in zip(d.values, bumps)), d.probabilities)
    assert cvar(d, alpha) <= cvar(bigger, alpha) + 1e-9


def test_objective_parse_and_label():
    assert Objective.parse("max") == Objective.robust()
    assert Objective.parse("E") == Objective.expectation()
    assert Objective.parse("cvar", 0.3).label == "cvar(0.3)"
    with pytest.raises(ValueError):
        Objective.parse("cvar")
    with pytest.raises(ValueError):
        Objective.parse("median")


def test_augment_example():
    inst = gen_random("selection", 4, 2, seed=1, p=2)
    inst = inst.replace(probabilities=[0.5, 0.5])
    aug = augment_with_zero_scenario(inst, 0.5)
    assert aug.K == 3
    np.testing.assert_allclose(aug.probabilities, [0.5, 0.25, 0.25])
    assert not aug.scenario_costs[0].any()
    np.testing.assert_array_equal(aug.scenario_costs[1:], inst.scenario_costs)
    np.testing.assert_array_equal(aug.first_stage_costs, inst.first_stage_costs)
    assert aug.structure == inst.structure


def test_augment_rejects_zero_alpha():
    inst = gen_random("rs", 3, 2, seed=0)
    with pytest.raises(RiskDomainError):
        augment_with_zero_scenario(inst, 0.0)


@pytest.mark.parametrize("family", ["rs", "selection", "shortest-path", "spanning-tree", "assignment"])
@pytest.mark.parametrize("alpha", [0.25, 0.9])
def test_augment_identity_for_every_first_stage(family, alpha):
    size = {"shortest-path": 5, "spanning-tree": 4, "assignment": 3}.get(family, 6)
    inst = gen_random(family, size, 3, seed=11)
    if inst.n > 10:
        pytest.skip("instance too large for full enumeration")
    aug = augment_with_zero_scenario(inst, alpha)
    from riskstage.model import is_partial_solution

    for x in all_vectors(inst.n):
        if not is_partial_solution(inst, x):
            continue
        try:
            e = evaluate_first_stage(inst, x, Objective.expectation())
        except ValueError:
            continue
        cv = evaluate_first_stage(aug, x, Objective.cvar(alpha))
        assert abs(e - cv) <= 1e-9
