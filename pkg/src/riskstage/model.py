"""Instances, plans, reports, JSON I/O and objective evaluation.

An instance holds first-stage costs ``C`` (length n), a K x n matrix of
second-stage scenario costs with probabilities, and a family structure that
defines the feasible set X.  In ``exact`` mode ``x + y_j`` must be a member of
X; in ``superset`` mode it only has to contain one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .risk import DiscreteDistribution, Objective, PROB_TOL

FAMILIES = ("rs", "selection", "shortest-path", "spanning-tree", "assignment")
MODES = ("exact", "superset")
_FAMILY_ALIASES = {
    "representatives": "rs",
    "shortest_path": "shortest-path",
    "path": "shortest-path",
    "spanning_tree": "spanning-tree",
    "tree": "spanning-tree",
    "matching": "assignment",
}


class InstanceError(ValueError):
    """Instance data violates the schema or a structural invariant."""


class InfeasibleFirstStage(ValueError):
    """A first-stage vector cannot be completed (optionally under a given scenario)."""

    def __init__(self, message: str, scenario: Optional[int] = None):
        super().__init__(message)
        self.scenario = scenario


class NonCanonicalFirstStage(InfeasibleFirstStage):
    """Spanning-tree first stage containing a cycle; an acyclic subset is never worse."""


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    key = _FAMILY_ALIASES.get(key, key)
    if key not in FAMILIES:
        raise InstanceError(f"unknown family {name!r}")
    return key


# --------------------------------------------------------------------------- structures


@dataclass(frozen=True)
class RsPartition:
    groups: tuple[tuple[int, ...], ...]

    def to_json(self):
        return {"groups": [list(g) for g in self.groups]}


@dataclass(frozen=True)
class SelectionCardinality:
    p: int

    def to_json(self):
        return {"p": self.p}


@dataclass(frozen=True)
class Digraph:
    node_count: int
    arcs: tuple[tuple[int, int], ...]
    source: int
    sink: int

    def to_json(self):
        return {
            "node_count": self.node_count,
            "arcs": [list(a) for a in self.arcs],
            "source": self.source,
            "sink": self.sink,
        }


@dataclass(frozen=True)
class UndirectedGraph:
    node_count: int
    edges: tuple[tuple[int, int], ...]

    def to_json(self):
        return {"node_count": self.node_count, "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class Bipartite:
    left_count: int
    right_count: int
    edges: tuple[tuple[int, int], ...]

    def to_json(self):
        return {
            "left_count": self.left_count,
            "right_count": self.right_count,
            "edges": [list(e) for e in self.edges],
        }


FamilyStructure = Union[RsPartition, SelectionCardinality, Digraph, UndirectedGraph, Bipartite]

_STRUCTURE_TYPES = {
    "rs": RsPartition,
    "selection": SelectionCardinality,
    "shortest-path": Digraph,
    "spanning-tree": UndirectedGraph,
    "assignment": Bipartite,
}


def _pairs(raw, what: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in raw:
        if len(item) != 2:
            raise InstanceError(f"{what} entries must be pairs, got {item!r}")
        out.append((int(item[0]), int(item[1])))
    return tuple(out)


def structure_from_json(family: str, raw: dict) -> FamilyStructure:
    try:
        if family == "rs":
            return RsPartition(tuple(tuple(int(i) for i in g) for g in raw["groups"]))
        if family == "selection":
            return SelectionCardinality(int(raw["p"]))
        if family == "shortest-path":
            return Digraph(
                int(raw["node_count"]), _pairs(raw["arcs"], "arc"), int(raw["source"]), int(raw["sink"])
            )
        if family == "spanning-tree":
            return UndirectedGraph(int(raw["node_count"]), _pairs(raw["edges"], "edge"))
        return Bipartite(int(raw["left_count"]), int(raw["right_count"]), _pairs(raw["edges"], "edge"))
    except KeyError as exc:
        raise InstanceError(f"structure for {family} is missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise InstanceError(f"malformed structure for {family}: {exc}") from None


def _check_structure(family: str, s: FamilyStructure, n: int) -> None:
    if not isinstance(s, _STRUCTURE_TYPES[family]):
        raise InstanceError(f"family {family} needs a {_STRUCTURE_TYPES[family].__name__} structure")
    if isinstance(s, RsPartition):
        seen: dict[int, int] = {}
        for gi, group in enumerate(s.groups):
            if not group:
                raise InstanceError(f"group {gi} is empty")
            for i in group:
                if not (0 <= i < n):
                    raise InstanceError(f"group {gi} names element {i} outside [0, {n})")
                if i in seen:
                    raise InstanceError(f"element {i} in two groups")
                seen[i] = gi
        missing = sorted(set(range(n)) - set(seen))
        if missing:
            raise InstanceError(f"elements {missing} belong to no group")
    elif isinstance(s, SelectionCardinality):
        if not (1 <= s.p <= n):
            raise InstanceError(f"selection size p={s.p} must lie in [1, {n}]")
    elif isinstance(s, Digraph):
        if len(s.arcs) != n:
            raise InstanceError(f"{len(s.arcs)} arcs but n={n}")
        for a, (u, v) in enumerate(s.arcs):
            if not (0 <= u < s.node_count and 0 <= v < s.node_count):
                raise InstanceError(f"dangling arc endpoint in arc {a}: ({u}, {v})")
            if u == v:
                raise InstanceError(f"arc {a} is a self-loop")
        for name, node in (("source", s.source), ("sink", s.sink)):
            if not (0 <= node < s.node_count):
                raise InstanceError(f"{name} {node} is not a node")
        if s.source == s.sink:
            raise InstanceError("source and sink coincide")
    elif isinstance(s, UndirectedGraph):
        if len(s.edges) != n:
            raise InstanceError(f"{len(s.edges)} edges but n={n}")
        for e, (u, v) in enumerate(s.edges):
            if not (0 <= u < s.node_count and 0 <= v < s.node_count):
                raise InstanceError(f"dangling edge endpoint in edge {e}: ({u}, {v})")
            if u == v:
                raise InstanceError(f"edge {e} is a self-loop")
    else:
        if len(s.edges) != n:
            raise InstanceError(f"{len(s.edges)} edges but n={n}")
        for e, (l, r) in enumerate(s.edges):
            if not (0 <= l < s.left_count and 0 <= r < s.right_count):
                raise InstanceError(f"dangling edge endpoint in edge {e}: ({l}, {r})")


# --------------------------------------------------------------------------- instance


def _frozen_array(values, ndim: int, what: str) -> np.ndarray:
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{what} must be numeric: {exc}") from None
    if arr.ndim != ndim:
        raise InstanceError(f"{what} must be {ndim}-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TwoStageInstance:
    family: str
    first_stage_costs: np.ndarray
    scenario_costs: np.ndarray
    probabilities: np.ndarray
    structure: FamilyStructure
    feasible_mode: str = "exact"
    alpha: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        family = canonical_family(self.family)
        object.__setattr__(self, "family", family)
        C = _frozen_array(self.first_stage_costs, 1, "first_stage_costs")
        costs = np.asarray(self.scenario_costs, dtype=float)
        if costs.ndim == 1 and len(C) == 0:
            costs = costs.reshape(len(costs), 0)
        c = _frozen_array(costs, 2, "scenario costs")
        p = _frozen_array(self.probabilities, 1, "probabilities")
        object.__setattr__(self, "first_stage_costs", C)
        object.__setattr__(self, "scenario_costs", c)
        object.__setattr__(self, "probabilities", p)
        n = len(C)
        if n == 0:
            raise InstanceError("instance needs at least one element")
        if len(p) == 0:
            raise InstanceError("instance needs at least one scenario")
        if c.shape != (len(p), n):
            raise InstanceError(f"scenario cost matrix has shape {c.shape}, expected ({len(p)}, {n})")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(c))):
            raise InstanceError("costs must be finite")
        if np.any(C < 0) or np.any(c < 0):
            raise InstanceError("costs must be nonnegative")
        if np.any(p <= 0) or np.any(~np.isfinite(p)):
            raise InstanceError("scenario probabilities must be positive")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise InstanceError(f"probabilities sum to {total:.12g}")
        mode = str(self.feasible_mode).lower()
        if mode not in MODES:
            raise InstanceError(f"unknown feasible_mode {self.feasible_mode!r}")
        if family == "spanning-tree":
            # exact and superset coincide once the first stage is acyclic
            mode = "superset"
        object.__setattr__(self, "feasible_mode", mode)
        if self.alpha is not None:
            a = float(self.alpha)
            if not (0.0 <= a < 1.0):
                raise InstanceError(f"alpha must lie in [0, 1), got {a}")
            object.__setattr__(self, "alpha", a)
        _check_structure(family, self.structure, n)

    @property
    def n(self) -> int:
        return len(self.first_stage_costs)

    @property
    def K(self) -> int:
        return len(self.probabilities)

    @property
    def exact(self) -> bool:
        return self.feasible_mode == "exact"

    def replace(self, **changes) -> "TwoStageInstance":
        fields = dict(
            family=self.family,
            first_stage_costs=self.first_stage_costs,
            scenario_costs=self.scenario_costs,
            probabilities=self.probabilities,
            structure=self.structure,
            feasible_mode=self.feasible_mode,
            alpha=self.alpha,
        )
        fields.update(changes)
        return TwoStageInstance(**fields)

    def __eq__(self, other):
        if not isinstance(other, TwoStageInstance):
            return NotImplemented
        return (
            self.family == other.family
            and self.feasible_mode == other.feasible_mode
            and self.structure == other.structure
            and self.alpha == other.alpha
            and np.array_equal(self.first_stage_costs, other.first_stage_costs)
            and np.array_equal(self.scenario_costs, other.scenario_costs)
            and np.array_equal(self.probabilities, other.probabilities)
        )

    __hash__ = None


# --------------------------------------------------------------------------- JSON


def _num(v: float):
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


def instance_to_dict(inst: TwoStageInstance) -> dict:
    d: dict[str, Any] = {
        "family": inst.family,
        "feasible_mode": inst.feasible_mode,
        "n": inst.n,
        "first_stage_costs": [_num(v) for v in inst.first_stage_costs],
        "scenarios": {
            "probabilities": [float(v) for v in inst.probabilities],
            "costs": [[_num(v) for v in row] for row in inst.scenario_costs],
        },
        "structure": inst.structure.to_json(),
    }
    if inst.alpha is not None:
        d["alpha"] = inst.alpha
    return d


def serialize_instance(inst: TwoStageInstance) -> str:
    """Canonical JSON text (sorted keys, fixed layout)."""
    return json.dumps(instance_to_dict(inst), sort_keys=True, indent=1) + "\n"


def instance_from_dict(doc: dict) -> TwoStageInstance:
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    for key in ("family", "n", "first_stage_costs", "scenarios", "structure"):
        if key not in doc:
            raise InstanceError(f"missing field {key!r}")
    family = canonical_family(str(doc["family"]))
    scen = doc["scenarios"]
    if not isinstance(scen, dict) or "probabilities" not in scen or "costs" not in scen:
        raise InstanceError("scenarios must hold 'probabilities' and 'costs'")
    n = doc["n"]
    if not isinstance(n, int) or n != len(doc["first_stage_costs"]):
        raise InstanceError(f"n={n!r} does not match {len(doc['first_stage_costs'])} first-stage costs")
    for row in scen["costs"]:
        if len(row) != n:
            raise InstanceError(f"scenario row of length {len(row)}, expected {n}")
    return TwoStageInstance(
        family=family,
        first_stage_costs=doc["first_stage_costs"],
        scenario_costs=np.array(scen["costs"], dtype=float).reshape(len(scen["costs"]), n),
        probabilities=scen["probabilities"],
        structure=structure_from_json(family, doc["structure"]),
        feasible_mode=doc.get("feasible_mode", "exact"),
        alpha=doc.get("alpha"),
    )


def parse_instance(text: str) -> TwoStageInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"invalid JSON: {exc}") from None
    return instance_from_dict(doc)


def load_instance(path) -> TwoStageInstance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def save_instance(inst: TwoStageInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_instance(inst))


# --------------------------------------------------------------------------- plans and reports


def as_vector(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=np.int8).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"vector of length {v.shape[0]} given, expected {n}")
    if np.any((v != 0) & (v != 1)):
        raise ValueError("vectors must be 0/1")
    return v


@dataclass(frozen=True)
class TwoStagePlan:
    x: tuple[int, ...]
    recourse: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        x = tuple(int(v) for v in self.x)
        rec = tuple(tuple(int(v) for v in y) for y in self.recourse)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "recourse", rec)
        for j, y in enumerate(rec):
            if len(y) != len(x):
                raise ValueError(f"recourse vector {j} has wrong length")
            if any(a and b for a, b in zip(x, y)):
                raise ValueError(f"recourse vector {j} overlaps the first stage")


@dataclass(frozen=True)
class SolveReport:
    objective: Objective
    value: float
    plan: Optional[TwoStagePlan]
    per_scenario_cost: tuple[float, ...]
    algorithm: str
    lower_bound: Optional[float] = None
    seed: Optional[int] = None
    status: str = "ok"
    trace: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "objective": self.objective.kind,
            "value": self.value,
            "x": list(self.plan.x) if self.plan else None,
            "recourse": [list(y) for y in self.plan.recourse] if self.plan else None,
            "per_scenario_cost": list(self.per_scenario_cost),
            "lower_bound": self.lower_bound,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "status": self.status,
        }
        if self.objective.kind == "cvar":
            d["alpha"] = self.objective.alpha
        if self.trace is not None:
            d["trace"] = self.trace
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        objective = Objective(d["objective"], d.get("alpha", 0.0) or 0.0)
        plan = None
        if d.get("x") is not None:
            plan = TwoStagePlan(tuple(d["x"]), tuple(tuple(y) for y in d["recourse"]))
        value = d["value"]
        return cls(
            objective=objective,
            value=float(value) if value is not None else math.nan,
            plan=plan,
            per_scenario_cost=tuple(float(v) for v in d.get("per_scenario_cost") or ()),
            algorithm=d["algorithm"],
            lower_bound=d.get("lower_bound"),
            seed=d.get("seed"),
            status=d.get("status", "ok"),
            trace=d.get("trace"),
        )

    @classmethod
    def from_json(cls, text: str) -> "SolveReport":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------- evaluation


def is_partial_solution(inst: TwoStageInstance, x) -> bool:
    """True iff ``x`` can be completed to a member of X (or of its supersets)."""
    from . import exact

    return exact.is_completable(inst, as_vector(x, inst.n))


def recourse_cost(inst: TwoStageInstance, x, j: int) -> tuple[float, np.ndarray]:
    """Optimal recourse for ``x`` under scenario ``j`` (lexicographically smallest y on ties)."""
    from . import exact

    return exact.family_recourse(inst, x, j)


def recourse_costs(inst: TwoStageInstance, x) -> np.ndarray:
    """Optimal recourse cost under every scenario (values only)."""
    from . import exact

    return exact.recourse_values(inst, as_vector(x, inst.n))


def induced_distribution(inst: TwoStageInstance, x) -> DiscreteDistribution:
    return DiscreteDistribution(tuple(recourse_costs(inst, x)), tuple(inst.probabilities))


def first_stage_cost(inst: TwoStageInstance, x) -> float:
    return float(inst.first_stage_costs @ as_vector(x, inst.n))


def evaluate_first_stage(inst: TwoStageInstance, x, objective: Objective) -> float:
    """C x + F[Y^x] with optimal recourse under every scenario."""
    x = as_vector(x, inst.n)
    rec = recourse_costs(inst, x)
    return first_stage_cost(inst, x) + float(objective.rows([rec], inst.probabilities)[0])


def evaluate_plan(inst: TwoStageInstance, plan: TwoStagePlan, objective: Objective) -> float:
    """C x + F of the plan's own recourse costs, after checking each completion is feasible."""
    from . import exact

    x = as_vector(plan.x, inst.n)
    if len(plan.recourse) != inst.K:
        raise ValueError(f"plan has {len(plan.recourse)} recourse vectors, instance has {inst.K} scenarios")
    costs = []
    for j, y in enumerate(plan.recourse):
        y = as_vector(y, inst.n)
        if not exact.is_valid_completion(inst, x, y):
            raise InfeasibleFirstStage(f"x + y_{j} is not feasible", scenario=j)
        costs.append(float(inst.scenario_costs[j] @ y))
    return first_stage_cost(inst, x) + float(objective.rows([costs], inst.probabilities)[0])


def make_report(
    inst: TwoStageInstance,
    x,
    objective: Objective,
    algorithm: str,
    lower_bound: Optional[float] = None,
    seed: Optional[int] = None,
    trace: Optional[dict] = None,
) -> SolveReport:
    """Report for first stage ``x`` completed by optimal recourse."""
    x = as_vector(x, inst.n)
    ys, costs = [], []
    for j in range(inst.K):
        cost, y = recourse_cost(inst, x, j)
        ys.append(tuple(int(v) for v in y))
        costs.append(float(cost))
    plan = TwoStagePlan(tuple(int(v) for v in x), tuple(ys))
    value = first_stage_cost(inst, x) + float(objective.rows([costs], inst.probabilities)[0])
    return SolveReport(
        objective=objective,
        value=value,
        plan=plan,
        per_scenario_cost=tuple(costs),
        algorithm=algorithm,
        lower_bound=None if lower_bound is None else float(lower_bound),
        seed=seed,
        trace=trace,
    )


def failure_report(objective: Objective, algorithm: str, K: int, seed=None, trace=None,
                   lower_bound=None) -> SolveReport:
    return SolveReport(
        objective=objective,
        value=math.nan,
        plan=None,
        per_scenario_cost=tuple([math.nan] * K),
        algorithm=algorithm,
        lower_bound=lower_bound,
        seed=seed,
        status="failed",
        trace=trace,
    )


def support(x: Sequence[int]) -> list[int]:
    return [i for i, v in enumerate(x) if v]
