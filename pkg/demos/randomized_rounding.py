"""
Randomized rounding against the exact optimum
=============================================

Selection and spanning-tree instances are solved through an LP relaxation
with a budget L*.  Repeated coin flips turn the fractional solution into a
feasible plan; the seed makes every run reproducible.
"""

import numpy as np

from riskstage import Objective, brute_force_optimum
from riskstage.gadgets import gen_random
from riskstage.networks import mst_cutset_lp, mst_randomized_rounding
from riskstage.selection import selection_lp_budget, selection_randomized_rounding

# %%
# Cardinality selection under the expectation.

inst = gen_random("selection", 10, 3, seed=4, p=4)
sol = selection_lp_budget(inst)
opt = brute_force_optimum(inst, Objective.expectation()).value
values = [selection_randomized_rounding(inst, seed, budget=sol).value for seed in range(20)]
print(f"selection: L* = {sol.L_star:.3f} <= OPT = {opt:.3f}; "
      f"rounded values over 20 seeds: min {min(values):.3f}, median {np.median(values):.3f}")

# %%
# Spanning trees under the worst case.  The LP is solved by adding violated
# cut constraints found with a global minimum cut.

inst = gen_random("spanning-tree", 7, 3, seed=8, density=0.5)
sol = mst_cutset_lp(inst, "robust")
opt = brute_force_optimum(inst, Objective.robust()).value
reps = [mst_randomized_rounding(inst, seed, "robust", budget=sol) for seed in range(20)]
print(f"spanning tree: L* = {sol.L_star:.3f} <= OPT = {opt:.3f}, {len(sol.state.cuts)} cuts generated")
print(f"  rounded values: min {min(r.value for r in reps):.3f}, "
      f"max {max(r.value for r in reps):.3f}, repairs {sum(r.trace['repaired'] for r in reps)}")
