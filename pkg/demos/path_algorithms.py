"""
Polynomial cases for two-stage shortest paths
=============================================

Two special cases are solved exactly without enumeration: series-parallel
graphs under the expectation, and the variant where the first stage must be
a path starting at the source.
"""

from riskstage import Objective, brute_force_connectivity, brute_force_optimum, connectivity_solve, sp_decompose
from riskstage.gadgets import gen_random
from riskstage.networks import sp_dp_expectation

# %%
# A random series-parallel graph, its decomposition tree and the dynamic
# program over it.

inst = gen_random("shortest-path", 10, 3, seed=3, graph="series_parallel")
tree = sp_decompose(inst.structure)
print(f"decomposition root {type(tree.root).__name__}, leaves in order {tree.leaves()}")
rep = sp_dp_expectation(inst)
print(f"DP value {rep.value:.4f}, brute force {brute_force_optimum(inst, Objective.expectation()).value:.4f}")

# %%
# On a DAG, committing to a path s -> v in advance and finishing v -> t per
# scenario reduces to picking the best node v.

inst = gen_random("shortest-path", 8, 4, seed=14, density=0.4)
for alpha in (0.0, 0.5, 0.9):
    rep = connectivity_solve(inst, alpha)
    check = brute_force_connectivity(inst, Objective.cvar(alpha)).value
    print(f"alpha {alpha}: switch node {rep.trace['node']}, value {rep.value:.3f} (enumeration {check:.3f})")
