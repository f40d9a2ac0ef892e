import itertools

import numpy as np
import pytest

from riskstage.exact import brute_force_optimum
from riskstage.gadgets import (
    SIX_ELEMENT_COVER,
    SEVEN_ELEMENT_COVER,
    CnfInput,
    SetCoverInput,
    gen_chain,
    gen_random,
    gen_rs_setcover,
    gen_sp_hamiltonian,
    gen_sp_sat,
    gen_sp_setcover,
    has_hamiltonian_path,
)
from riskstage.model import InstanceError, serialize_instance
from riskstage.networks import sp_decompose
from riskstage.risk import Objective
from riskstage.selection import rs_normalize

from oracles import naive_optimum

FAMILIES = ["rs", "selection", "shortest-path", "spanning-tree", "assignment"]


def random_cover(rng, universe, sets):
    chosen = [sorted(set(int(u) for u in rng.choice(universe, size=rng.integers(1, universe + 1))))
              for _ in range(sets)]
    for u in range(universe):
        if not any(u in s for s in chosen):
            chosen[int(rng.integers(sets))].append(u)
    return SetCoverInput(universe, tuple(tuple(s) for s in chosen))


# ----------------------------------------------------------------- input validation


def test_set_cover_validation():
    with pytest.raises(InstanceError, match="belong to no set"):
        SetCoverInput(3, ((0, 1),))
    with pytest.raises(InstanceError):
        SetCoverInput(2, ((0, 5),))
    assert SEVEN_ELEMENT_COVER.min_cover_size() == 3
    assert SIX_ELEMENT_COVER.min_cover_size() == 3


def test_cnf_validation_and_sat_check():
    with pytest.raises(InstanceError):
        CnfInput(2, ((),))
    with pytest.raises(InstanceError):
        CnfInput(2, ((3,),))
    assert CnfInput(1, ((1,),)).satisfiable()
    assert not CnfInput(1, ((1,), (-1,))).satisfiable()


# ----------------------------------------------------------------- representatives-selection set cover


def test_seven_element_cost_matrix():
    inst = gen_rs_setcover(SEVEN_ELEMENT_COVER)
    M = 8
    assert inst.n == 7 and inst.K == 8
    assert list(inst.first_stage_costs) == [M] * 6 + [2 * M]
    # column of tool 1 across the scenarios u1..u7, c'
    assert list(inst.scenario_costs[:, 0]) == [M, 0, 0, 0, M, M, M, M + 1]
    assert list(inst.scenario_costs[:, 6]) == [2 * M] * 7 + [M]
    np.testing.assert_allclose(inst.probabilities, 1 / 8)


def test_seven_element_robust_optimum():
    rep = brute_force_optimum(gen_rs_setcover(SEVEN_ELEMENT_COVER), Objective.robust())
    assert rep.value == 59.0


@pytest.mark.parametrize("seed", range(10))
def test_rs_setcover_optimum_tracks_cover_size(seed):
    rng = np.random.default_rng(seed)
    sc = random_cover(rng, int(rng.integers(2, 6)), int(rng.integers(1, 6)))
    inst = gen_rs_setcover(sc)
    M = sc.universe + 1
    want = (len(sc.sets) + 1) * M + sc.min_cover_size()
    assert brute_force_optimum(inst, Objective.robust()).value == want


# ----------------------------------------------------------------- shortest-path set cover


def test_six_element_optimum():
    inst = gen_sp_setcover(SIX_ELEMENT_COVER)
    rep = brute_force_optimum(inst, Objective.robust())
    assert rep.value == 3.0
    bought = [j for j in range(4) if rep.plan.x[2 * j]]
    assert bought == [0, 1, 2]


def test_six_element_expectation_can_undercut_the_cover():
    # with uniform scenarios, deferring pays off for elements covered by a single set
    val = brute_force_optimum(gen_sp_setcover(SIX_ELEMENT_COVER), Objective.expectation()).value
    assert val == pytest.approx(2 + 5 / 6)


def test_single_set_cover():
    inst = gen_sp_setcover(SetCoverInput(3, ((0, 1, 2),)))
    assert brute_force_optimum(inst, Objective.robust()).value == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_sp_setcover_optimum_is_cover_size(seed):
    rng = np.random.default_rng(100 + seed)
    sc = random_cover(rng, int(rng.integers(2, 6)), int(rng.integers(1, 5)))
    inst = gen_sp_setcover(sc)
    assert brute_force_optimum(inst, Objective.robust()).value == sc.min_cover_size()
    sp_decompose(inst.structure)


# ----------------------------------------------------------------- Hamiltonian path


def test_complete_digraph_has_zero_optimum():
    arcs = [(u, v) for u in range(4) for v in range(4) if u != v]
    assert brute_force_optimum(gen_sp_hamiltonian(4, arcs), Objective.expectation()).value == 0.0


def test_missing_arcs_give_positive_optimum():
    assert brute_force_optimum(gen_sp_hamiltonian(2, []), Objective.expectation()).value > 0
    assert brute_force_optimum(gen_sp_hamiltonian(3, [(0, 2), (2, 1)]), Objective.expectation()).value > 0


def test_hamiltonian_gadget_shape():
    inst = gen_sp_hamiltonian(3, [(0, 1)])
    g = inst.structure
    assert g.node_count == 6 and inst.n == 3 + 6
    assert (g.source, g.sink) == (0, 5)
    assert list(inst.probabilities) == [0.5, 0.5]


def test_hamiltonian_equivalence_on_four_nodes():
    pairs = [(u, v) for u in range(4) for v in range(4) if u != v]
    for mask in range(0, 1 << len(pairs), 7):
        arcs = [pairs[k] for k in range(len(pairs)) if mask >> k & 1]
        val = brute_force_optimum(gen_sp_hamiltonian(4, arcs), Objective.expectation()).value
        assert (val == 0.0) == has_hamiltonian_path(4, arcs)


# ----------------------------------------------------------------- satisfiability


def test_single_literal_formula():
    inst = gen_sp_sat(CnfInput(1, ((1,),)))
    assert brute_force_optimum(inst, Objective.expectation()).value == 1.0


def test_contradiction_exceeds_mn():
    inst = gen_sp_sat(CnfInput(1, ((1,), (-1,))))
    assert brute_force_optimum(inst, Objective.expectation()).value > 2


def test_sat_layout_roles():
    inst, layout = gen_sp_sat(CnfInput(2, ((1, -2), (2,))), with_layout=True)
    for i in range(2):
        for j in range(2):
            assert inst.first_stage_costs[layout.a[i][j]] == 1.0
            assert inst.first_stage_costs[layout.b[i][j]] == 1.0
    M = 2 * 2 * 2 + 2
    assert all(inst.scenario_costs[0, k] == 0 and inst.first_stage_costs[k] == M for k in layout.dashed)
    assert all(inst.scenario_costs[1, k] == 0 for k in layout.clause)


def test_sat_equivalence_sample():
    clauses = [c for r in (1, 2) for vs in itertools.combinations((1, 2), r)
               for c in itertools.product(*[(v, -v) for v in vs])]
    for k in (1, 2, 3):
        for cnf in itertools.islice(itertools.combinations(clauses, k), 0, None, 3):
            f = CnfInput(2, cnf)
            val = brute_force_optimum(gen_sp_sat(f), Objective.expectation()).value
            assert (val <= 2 * len(cnf) + 1e-9) == f.satisfiable()


# ----------------------------------------------------------------- chains


def test_one_tool_chain():
    rs = rs_normalize(gen_random("rs", 1, 2, 0))
    chain = gen_chain(rs)
    assert chain.structure.arcs == ((0, 1),)


@pytest.mark.parametrize("seed", range(10))
def test_chain_preserves_rs_optimum(seed):
    rs = rs_normalize(gen_random("rs", 7, 1 + seed % 4, 50 + seed))
    path = gen_chain(rs)
    tree = gen_chain(rs, "spanning-tree")
    for kind, alpha in (("expectation", 0.0), ("robust", 0.0), ("cvar", 0.3)):
        obj = Objective.parse(kind, alpha)
        want = brute_force_optimum(rs, obj).value
        assert brute_force_optimum(path, obj).value == pytest.approx(want, abs=1e-9)
        assert brute_force_optimum(tree, obj).value == pytest.approx(want, abs=1e-9)


def test_chain_needs_singletons():
    rs = gen_random("rs", 6, 1, 3, max_group=3)
    if all(len(g) == 1 for g in rs.structure.groups):
        pytest.skip("generator happened to produce singletons")
    with pytest.raises(InstanceError):
        gen_chain(rs)


# ----------------------------------------------------------------- random instances


@pytest.mark.parametrize("family", FAMILIES)
def test_random_is_deterministic(family):
    a = gen_random(family, 5, 3, 17)
    b = gen_random(family, 5, 3, 17)
    assert serialize_instance(a) == serialize_instance(b)
    assert serialize_instance(gen_random(family, 5, 3, 18)) != serialize_instance(a)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_cost_range(family):
    inst = gen_random(family, 4, 2, 1, cost_range=(0, 0))
    assert not inst.first_stage_costs.any() and not inst.scenario_costs.any()
    if inst.n <= 12:
        assert naive_optimum(inst, "robust") == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_random_paths_exist(seed):
    for graph in ("dag", "general", "series_parallel"):
        inst = gen_random("shortest-path", 6, 1, seed, graph=graph, density=0.1)
        assert brute_force_optimum(inst, Objective.expectation()).plan is not None


@pytest.mark.parametrize("seed", range(10))
def test_random_series_parallel_decomposes(seed):
    sp_decompose(gen_random("shortest-path", 3 + seed, 1, seed, graph="series_parallel").structure)


def test_bad_generator_parameters():
    with pytest.raises(InstanceError):
        gen_random("rs", 0, 1, 0)
    with pytest.raises(InstanceError):
        gen_random("rs", 3, 1, 0, cost_range=(5, 1))
    with pytest.raises(InstanceError):
        gen_random("spanning-tree", 1, 1, 0)
