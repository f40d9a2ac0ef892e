"""Two-stage combinatorial optimization under expectation, worst case and CVaR."""

from .exact import GuardExceeded, brute_force_connectivity, brute_force_optimum, enumerate_feasible
from .lp import LpError, LpOutcome, LpProblem, LpStalled, lp_solve, min_feasible_budget
from .model import (
    InfeasibleFirstStage,
    InstanceError,
    NonCanonicalFirstStage,
    SolveReport,
    TwoStageInstance,
    TwoStagePlan,
    evaluate_first_stage,
    evaluate_plan,
    load_instance,
    parse_instance,
    save_instance,
    serialize_instance,
)
from .networks import (
    connectivity_solve,
    mst_cutset_lp,
    mst_randomized_rounding,
    sp_decompose,
    sp_dp_expectation,
    sp_to_assignment,
)
from .risk import DiscreteDistribution, Objective, augment_with_zero_scenario, cvar, expectation, worst_case
from .selection import (
    rs_lp_round_cvar,
    rs_lp_round_robust,
    rs_solve_expectation,
    selection_dp_expectation,
    selection_randomized_rounding,
)

__version__ = "0.1.0"
