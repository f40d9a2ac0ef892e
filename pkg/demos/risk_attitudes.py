"""
How risk aversion moves the first stage
=======================================

One small shortest-path instance, solved exactly under the expectation,
under CVaR at a few levels and under the worst case.  The more the decision
maker fears bad scenarios, the more arcs get bought in advance.
"""

import numpy as np

from riskstage import Objective, brute_force_optimum, evaluate_first_stage
from riskstage.gadgets import gen_random

inst = gen_random("shortest-path", 6, 4, seed=11, feasible_mode="superset", density=0.5, first_stage_range=(2, 8))
print(f"{inst.n} arcs, {inst.K} scenarios, probabilities {np.round(inst.probabilities, 3)}")

# %%
# Exact optima for a ladder of objectives.  CVaR at alpha=0 is the
# expectation and approaches the worst case as alpha grows.

ladder = [Objective.expectation()] + [Objective.cvar(a) for a in (0.3, 0.6, 0.9)] + [Objective.robust()]
for obj in ladder:
    rep = brute_force_optimum(inst, obj)
    bought = [a for a, v in enumerate(rep.plan.x) if v]
    print(f"{obj.label:>12}: value {rep.value:7.3f}  first-stage arcs {bought}  "
          f"scenario costs {np.round(rep.per_scenario_cost, 2)}")

# %%
# The same first stage scored under every objective: a risk-neutral plan can
# be far from optimal when judged by the tail.

x_e = brute_force_optimum(inst, Objective.expectation()).plan.x
for obj in ladder:
    best = brute_force_optimum(inst, obj).value
    mine = evaluate_first_stage(inst, x_e, obj)
    print(f"{obj.label:>12}: expectation-optimal first stage scores {mine:7.3f} vs best {best:7.3f}")
