"""riskstage command line: solve, gen, reduce, transform, evaluate, bench."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import exact, gadgets, networks, selection
from .exact import GuardExceeded
from .lp import LpError
from .model import (
    InfeasibleFirstStage,
    InstanceError,
    TwoStageInstance,
    evaluate_first_stage,
    make_report,
    parse_instance,
    serialize_instance,
)
from .risk import Objective, RiskDomainError, augment_with_zero_scenario, cvar_ratio_sigma

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Algorithm:
    name: str
    families: tuple[str, ...]
    objective: Optional[str]  # None: taken from the flags
    randomized: bool
    exact: bool
    run: Callable

    def bound(self, objective: Objective) -> Optional[float]:
        if self.exact:
            return 1.0
        if self.name == "rs-lp2-robust":
            return 2.0
        if self.name == "rs-lp2-cvar":
            a = objective.alpha
            return min(2.0, 1.0 / (1.0 - a))
        return None


def _brute(inst, objective, seed):
    return exact.brute_force_optimum(inst, objective)


ALGORITHMS = {
    a.name: a
    for a in (
        Algorithm("brute", ("rs", "selection", "shortest-path", "spanning-tree", "assignment"), None, False, True, _brute),
        Algorithm("rs-expectation", ("rs",), "expectation", False, True,
                  lambda inst, obj, seed: selection.rs_solve_expectation(inst)),
        Algorithm("rs-lp2-robust", ("rs",), "robust", False, False,
                  lambda inst, obj, seed: selection.rs_lp_round_robust(inst)),
        Algorithm("rs-lp2-cvar", ("rs",), "cvar", False, False,
                  lambda inst, obj, seed: selection.rs_lp_round_cvar(inst, obj.alpha)),
        Algorithm("selection-dp", ("selection",), "expectation", False, True,
                  lambda inst, obj, seed: selection.selection_dp_expectation(inst)),
        Algorithm("selection-rr", ("selection",), "expectation", True, False,
                  lambda inst, obj, seed: selection.selection_randomized_rounding(inst, seed)),
        Algorithm("sp-dp", ("shortest-path",), "expectation", False, True,
                  lambda inst, obj, seed: networks.sp_dp_expectation(inst)),
        Algorithm("connectivity", ("shortest-path",), None, False, True,
                  lambda inst, obj, seed: networks.connectivity_solve(inst, obj)),
        Algorithm("mst-rr-robust", ("spanning-tree",), "robust", True, False,
                  lambda inst, obj, seed: networks.mst_randomized_rounding(inst, seed, "robust")),
        Algorithm("mst-rr-expectation", ("spanning-tree",), "expectation", True, False,
                  lambda inst, obj, seed: networks.mst_randomized_rounding(inst, seed, "expectation")),
    )
}


# --------------------------------------------------------------------------- helpers


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _read_json(path: str):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from exc


def _load(path: str) -> TwoStageInstance:
    try:
        return parse_instance(_read_text(path))
    except InstanceError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _emit(text: str, output: Optional[str]) -> None:
    if output and output != "-":
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _objective(args, default: Optional[str] = None) -> Objective:
    kind = args.objective or default or "expectation"
    try:
        if kind == "cvar" and args.alpha is None:
            raise UsageError("--objective cvar needs --alpha")
        return Objective.parse(kind, args.alpha)
    except (ValueError, RiskDomainError) as exc:
        raise UsageError(str(exc)) from exc


def _algorithm_objective(algo: Algorithm, args) -> Objective:
    """The objective an algorithm optimizes; conflicting flags are a usage error."""
    if algo.objective is None:
        if algo.name == "connectivity" and args.objective is None:
            return Objective.cvar(args.alpha or 0.0)
        return _objective(args)
    if args.objective and Objective.parse(args.objective, args.alpha).kind != algo.objective:
        raise UsageError(f"algorithm {algo.name} optimizes the {algo.objective} objective")
    if algo.objective == "cvar":
        if args.alpha is None:
            raise UsageError(f"algorithm {algo.name} needs --alpha")
        return Objective.cvar(args.alpha)
    return Objective(algo.objective)


def _check_compatible(algo: Algorithm, inst: TwoStageInstance) -> None:
    if inst.family not in algo.families:
        raise UsageError(f"algorithm {algo.name} does not apply to {inst.family} instances")
    if algo.name == "sp-dp":
        if not inst.exact:
            raise UsageError("sp-dp needs feasible_mode 'exact'")
        try:
            networks.sp_decompose(inst.structure)
        except ValueError as exc:
            raise UsageError(f"sp-dp: {exc}") from exc
    if algo.name == "connectivity" and networks.topological_order(inst.structure) is None:
        raise UsageError("connectivity needs an acyclic digraph")


def _run(algo: Algorithm, inst, objective, seed):
    if algo.randomized and seed is None:
        raise UsageError(f"algorithm {algo.name} is randomized and needs --seed")
    return algo.run(inst, objective, seed)


def _parse_vector(text: str, n: int) -> np.ndarray:
    try:
        raw = json.loads(text) if text.strip().startswith("[") else [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse first-stage vector {text!r}") from exc
    if len(raw) != n or any(v not in (0, 1) for v in raw):
        raise UsageError(f"first-stage vector must be {n} entries of 0/1")
    return np.array(raw, dtype=np.int8)


# --------------------------------------------------------------------------- subcommands


def cmd_solve(args) -> int:
    algo = ALGORITHMS.get(args.algorithm)
    if algo is None:
        raise UsageError(f"unknown algorithm {args.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    inst = _load(args.instance)
    _check_compatible(algo, inst)
    objective = _algorithm_objective(algo, args)
    try:
        report = _run(algo, inst, objective, args.seed)
    except (GuardExceeded, LpError, InfeasibleFirstStage) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    _emit(report.to_json(), args.output)
    if not report.ok:
        print(f"error: {algo.name} failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _set_cover_input(args) -> gadgets.SetCoverInput:
    if not args.sets:
        raise UsageError("--sets is required")
    doc = _read_json(args.sets)
    sets = doc["sets"] if isinstance(doc, dict) else doc
    universe = args.universe
    if universe is None and isinstance(doc, dict):
        universe = doc.get("universe")
    if universe is None:
        raise UsageError("--universe is required")
    return gadgets.SetCoverInput(int(universe), tuple(tuple(s) for s in sets))


def cmd_gen(args) -> int:
    kind = args.kind
    if kind == "rs-setcover":
        inst = gadgets.gen_rs_setcover(_set_cover_input(args))
    elif kind == "sp-setcover":
        inst = gadgets.gen_sp_setcover(_set_cover_input(args))
    elif kind == "sp-hamiltonian":
        if not args.graph:
            raise UsageError("--graph is required")
        doc = _read_json(args.graph)
        inst = gadgets.gen_sp_hamiltonian(
            int(doc["node_count"]), [tuple(a) for a in doc["arcs"]], int(doc.get("start", 0)), doc.get("end")
        )
    elif kind == "sp-sat":
        if not args.cnf:
            raise UsageError("--cnf is required")
        doc = _read_json(args.cnf)
        inst = gadgets.gen_sp_sat(gadgets.CnfInput(int(doc["variables"]), tuple(tuple(c) for c in doc["clauses"])))
    elif kind == "random":
        if not args.family or args.n is None or args.K is None:
            raise UsageError("gen random needs --family, --n and --K")
        if args.seed is None:
            raise UsageError("gen random needs --seed")
        inst = gadgets.gen_random(
            args.family, args.n, args.K, args.seed, feasible_mode=args.mode, graph=args.graph_kind,
            density=args.density, p=args.p,
        )
    else:
        raise UsageError(f"unknown generator {kind!r}")
    _emit(serialize_instance(inst), args.output)
    return EXIT_OK


def cmd_reduce(args) -> int:
    inst = _load(args.instance)
    if args.kind == "sp-to-assignment":
        if inst.family != "shortest-path":
            raise UsageError("sp-to-assignment needs a shortest-path instance")
        out = networks.sp_to_assignment(inst)
    elif args.kind == "rs-to-chain":
        if inst.family != "rs":
            raise UsageError("rs-to-chain needs an rs instance")
        out = gadgets.gen_chain(inst, args.family or "shortest-path")
    else:
        raise UsageError(f"unknown reduction {args.kind!r}")
    _emit(serialize_instance(out), args.output)
    return EXIT_OK


def cmd_transform(args) -> int:
    inst = _load(args.instance)
    if args.kind == "e-to-cvar":
        if args.alpha is None:
            raise UsageError("e-to-cvar needs --alpha")
        try:
            out = augment_with_zero_scenario(inst, args.alpha)
        except (ValueError, RiskDomainError) as exc:
            raise UsageError(str(exc)) from exc
    else:
        raise UsageError(f"unknown transform {args.kind!r}")
    _emit(serialize_instance(out), args.output)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    inst = _load(args.instance)
    objective = _objective(args)
    x = _parse_vector(args.x, inst.n)
    try:
        report = make_report(inst, x, objective, "evaluate")
    except InfeasibleFirstStage as exc:
        raise UsageError(f"first stage is not a partial solution: {exc}") from exc
    _emit(report.to_json(), args.output)
    return EXIT_OK


def _bench_row(algo: Algorithm, inst, objective, seed, chain: bool) -> dict:
    native = Objective.expectation() if chain else objective
    report = _run(algo, inst, native, seed)
    if not report.ok:
        return {"status": "failed"}
    if chain:
        value = evaluate_first_stage(inst, report.plan.x, objective)
        bound = cvar_ratio_sigma(objective.alpha, float(inst.probabilities.min()))
        oracle = exact.brute_force_optimum(inst, objective)
    else:
        value = report.value
        bound = algo.bound(objective)
        if algo.name == "connectivity":
            oracle = exact.brute_force_connectivity(inst, objective)
        else:
            oracle = exact.brute_force_optimum(inst, objective)
    opt = oracle.value
    if opt > 0:
        ratio = value / opt
    else:
        ratio = 1.0 if value <= 1e-9 else math.inf
    row = {"status": "ok", "value": value, "opt": opt, "ratio": ratio, "bound": bound}
    if report.lower_bound is not None:
        row["lower_bound"] = report.lower_bound
    row["bound_satisfied"] = None if bound is None else bool(value <= bound * opt + 1e-9 * max(1.0, abs(opt)))
    return row


def cmd_bench(args) -> int:
    algo = ALGORITHMS.get(args.algorithm)
    if algo is None:
        raise UsageError(f"unknown algorithm {args.algorithm!r}")
    family = args.family or algo.families[0]
    if family not in algo.families:
        raise UsageError(f"algorithm {algo.name} does not apply to {family} instances")
    if args.seed is None:
        raise UsageError("bench needs --seed")
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    # an exact expectation algorithm benched under cvar: evaluate its first stage under cvar
    chain = algo.objective == "expectation" and algo.exact and args.objective == "cvar"
    objective = _objective(args) if chain else _algorithm_objective(algo, args)
    graph = args.graph_kind
    if algo.name == "sp-dp":
        graph = "series_parallel"
    elif algo.name == "connectivity" and graph == "general":
        raise UsageError("connectivity needs acyclic graphs")
    rows = []
    for trial in range(args.trials):
        seed = args.seed + trial
        inst = gadgets.gen_random(family, args.n, args.K, seed, feasible_mode=args.mode, graph=graph,
                                  density=args.density, p=args.p)
        try:
            row = _bench_row(algo, inst, objective, seed, chain)
        except GuardExceeded as exc:
            row = {"status": "guard", "message": str(exc)}
        except (LpError, InfeasibleFirstStage) as exc:
            row = {"status": "error", "message": str(exc)}
        rows.append({"trial": trial, "seed": seed, **row})
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {
        "algorithm": algo.name,
        "objective": objective.label + (" (expectation-optimal first stage)" if chain else ""),
        "trials": args.trials,
        "completed": len(ok),
        "max_ratio": max((r["ratio"] for r in ok), default=None),
        "violations": sum(1 for r in ok if r["bound_satisfied"] is False),
    }
    if args.format == "json":
        _emit(json.dumps({"rows": rows, "summary": summary}, indent=1, sort_keys=True) + "\n", args.output)
    else:
        _emit(_table(rows, summary), args.output)
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "NO"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _table(rows, summary) -> str:
    cols = ["trial", "seed", "status", "value", "opt", "ratio", "bound", "bound_satisfied"]
    cells = [cols] + [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in cells]
    lines.append("")
    lines.append(
        f"{summary['algorithm']} / {summary['objective']}: {summary['completed']}/{summary['trials']} completed, "
        f"max ratio {_fmt(summary['max_ratio'])}, violations {summary['violations']}"
    )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskstage", description="Two-stage combinatorial optimization under risk.")
    sub = parser.add_subparsers(dest="command", required=True)

    def objective_flags(p):
        p.add_argument("--objective", choices=["expectation", "robust", "cvar"])
        p.add_argument("--alpha", type=float)

    p = sub.add_parser("solve", help="solve an instance file")
    p.add_argument("instance")
    p.add_argument("--algorithm", "-a", required=True)
    objective_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gen", help="generate a gadget or random instance")
    p.add_argument("kind", choices=["rs-setcover", "sp-setcover", "sp-hamiltonian", "sp-sat", "random"])
    p.add_argument("--universe", type=int)
    p.add_argument("--sets", help="JSON list of sets, or {'universe': u, 'sets': [...]}")
    p.add_argument("--graph", help="JSON digraph {'node_count', 'arcs', 'start', 'end'}")
    p.add_argument("--cnf", help="JSON formula {'variables', 'clauses'}")
    p.add_argument("--family")
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--mode", default="exact", choices=["exact", "superset"])
    p.add_argument("--graph-kind", default="dag", choices=["dag", "general", "series_parallel"])
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("reduce", help="map an instance to another family")
    p.add_argument("kind", choices=["sp-to-assignment", "rs-to-chain"])
    p.add_argument("instance")
    p.add_argument("--family", help="target family for rs-to-chain")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("transform", help="objective-changing instance transforms")
    p.add_argument("kind", choices=["e-to-cvar"])
    p.add_argument("instance")
    p.add_argument("--alpha", type=float)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("evaluate", help="evaluate a first-stage vector with optimal recourse")
    p.add_argument("instance")
    p.add_argument("--x", required=True, help="0/1 vector, comma separated or JSON")
    objective_flags(p)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="compare an algorithm against brute force on random instances")
    p.add_argument("--algorithm", "-a", required=True)
    p.add_argument("--family")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--p", type=int)
    p.add_argument("--mode", default="exact", choices=["exact", "superset"])
    p.add_argument("--graph-kind", default="dag", choices=["dag", "general", "series_parallel"])
    p.add_argument("--density", type=float, default=0.3)
    objective_flags(p)
    p.add_argument("--format", default="table", choices=["table", "json"])
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, InstanceError, RiskDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"error: missing field {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
