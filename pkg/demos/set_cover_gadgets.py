"""
Set cover hidden inside two-stage problems
==========================================

A set cover question can be rewritten as a two-stage instance whose optimum
reads off the size of the smallest cover.  The brute-force solver recovers it.
"""

from riskstage import Objective, brute_force_optimum
from riskstage.gadgets import SEVEN_ELEMENT_COVER, SIX_ELEMENT_COVER, gen_rs_setcover, gen_sp_setcover

# %%
# Representatives selection: one tool per set plus a spare.  Under the worst
# case the optimum is (number of tools) * M + (minimum cover size).

sc = SEVEN_ELEMENT_COVER
inst = gen_rs_setcover(sc)
M = sc.universe + 1
rep = brute_force_optimum(inst, Objective.robust())
print("cost matrix (rows = scenarios, columns = tools):")
print(inst.scenario_costs.astype(int))
print(f"robust optimum {rep.value:g} = {len(sc.sets) + 1} * {M} + {sc.min_cover_size()}")

# %%
# Shortest path on a series-parallel graph: one two-arc route per set.  Buying
# the cheap first arc of every route in a cover makes every scenario free.

sc = SIX_ELEMENT_COVER
inst = gen_sp_setcover(sc)
rep = brute_force_optimum(inst, Objective.robust())
routes = [j for j in range(len(sc.sets)) if rep.plan.x[2 * j]]
print(f"robust optimum {rep.value:g}, routes opened in advance {routes}, "
      f"minimum cover size {sc.min_cover_size()}")
