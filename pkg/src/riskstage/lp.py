"""Dense-tableau linear programming and monotone budget search.

``lp_solve`` is a two-phase bounded-variable primal simplex using Bland's rule
throughout, so it is deterministic and cannot cycle.  It is meant for the
small relaxations built by the approximation algorithms, not for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

PIVOT_TOL = 1e-9
MAX_PIVOTS = 10**6
INF = math.inf

RELATIONS = ("<=", "=", ">=")


class LpError(RuntimeError):
    pass


class LpStalled(LpError):
    """Pivot cap reached before optimality was proven."""


@dataclass
class LpProblem:
    """min c x  s.t.  rows, lower <= x <= upper.

    Rows hold sparse coefficients as ``{variable: coefficient}``.
    """

    variable_count: int = 0
    objective: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def add_variable(self, cost: float = 0.0, lower: float = 0.0, upper: float = INF, name: str = "") -> int:
        if not (lower <= upper):
            raise LpError(f"variable {name or self.variable_count}: lower {lower} exceeds upper {upper}")
        self.objective.append(float(cost))
        self.bounds.append((float(lower), float(upper)))
        self.names.append(name)
        self.variable_count += 1
        return self.variable_count - 1

    def add_row(self, coefficients: Mapping[int, float] | Iterable[tuple[int, float]], relation: str, rhs: float) -> int:
        if relation not in RELATIONS:
            raise LpError(f"unknown relation {relation!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise LpError("row right-hand sides must be finite")
        coeffs: dict[int, float] = {}
        items = coefficients.items() if isinstance(coefficients, Mapping) else coefficients
        for k, v in items:
            if not (0 <= k < self.variable_count):
                raise LpError(f"row references unknown variable {k}")
            coeffs[k] = coeffs.get(k, 0.0) + float(v)
        self.rows.append((coeffs, relation, rhs))
        return len(self.rows) - 1

    def residuals(self, values: np.ndarray) -> tuple[float, float]:
        """Largest row violation and largest bound violation of ``values``."""
        row_worst = 0.0
        for coeffs, rel, rhs in self.rows:
            lhs = sum(c * values[k] for k, c in coeffs.items())
            if rel == "<=":
                v = lhs - rhs
            elif rel == ">=":
                v = rhs - lhs
            else:
                v = abs(lhs - rhs)
            row_worst = max(row_worst, v)
        bound_worst = 0.0
        for k, (lo, hi) in enumerate(self.bounds):
            bound_worst = max(bound_worst, lo - values[k], values[k] - hi)
        return row_worst, bound_worst


@dataclass(frozen=True)
class LpOutcome:
    verdict: str
    values: Optional[np.ndarray] = None
    objective_value: float = math.nan
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.verdict == "optimal"

    @property
    def feasible(self) -> bool:
        return self.verdict in ("optimal", "unbounded")


class _Tableau:
    def __init__(self, A: np.ndarray, b: np.ndarray, ub: np.ndarray, basis: list[int]):
        self.T = A.copy()
        self.xB = b.copy()
        self.ub = ub
        self.basis = basis
        self.at_upper = np.zeros(A.shape[1], dtype=bool)
        self.is_basic = np.zeros(A.shape[1], dtype=bool)
        self.is_basic[basis] = True
        self.pivots = 0

    def run(self, cost: np.ndarray, blocked: np.ndarray) -> str:
        T, ub = self.T, self.ub
        cB = cost[self.basis]
        d = cost - cB @ T
        while True:
            if self.pivots >= MAX_PIVOTS:
                raise LpStalled("stalled")
            eligible = ~self.is_basic & ~blocked & np.where(self.at_upper, d > PIVOT_TOL, d < -PIVOT_TOL)
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return "optimal"
            j = int(cand[0])
            step_dir = -1.0 if self.at_upper[j] else 1.0
            delta = -step_dir * T[:, j]
            xB = np.maximum(self.xB, 0.0)
            ratios = np.full(len(delta), INF)
            down = delta < -PIVOT_TOL
            ratios[down] = xB[down] / -delta[down]
            ubB = ub[self.basis]
            up = (delta > PIVOT_TOL) & np.isfinite(ubB)
            ratios[up] = np.maximum(ubB[up] - self.xB[up], 0.0) / delta[up]
            t = ratios.min() if len(ratios) else INF
            self.pivots += 1
            if ub[j] <= t:
                if not math.isfinite(ub[j]):
                    return "unbounded"
                self.xB += ub[j] * delta
                self.at_upper[j] = not self.at_upper[j]
                continue
            rows = np.flatnonzero(ratios == t)
            basis_arr = np.asarray(self.basis)
            r = int(rows[np.argmin(basis_arr[rows])])
            leaving = self.basis[r]
            to_upper = bool(up[r] and not down[r])
            self.xB += t * delta
            entering_value = t if step_dir > 0 else ub[j] - t
            pivot = T[r, j]
            prow = T[r] / pivot
            T -= np.outer(T[:, j], prow)
            T[r] = prow
            d = d - d[j] * prow
            self.xB[r] = entering_value
            self.basis[r] = j
            self.is_basic[j] = True
            self.is_basic[leaving] = False
            self.at_upper[j] = False
            self.at_upper[leaving] = to_upper

    def values(self) -> np.ndarray:
        v = np.where(self.at_upper, self.ub, 0.0)
        v[self.basis] = self.xB
        return v


def lp_solve(problem: LpProblem) -> LpOutcome:
    """Solve ``problem``; the verdict is optimal, infeasible or unbounded."""
    nvar = problem.variable_count
    m = len(problem.rows)

    # column map: original variable -> list of (std column, sign) plus an offset
    cols: list[list[tuple[int, float]]] = []
    offset = np.zeros(nvar)
    std_ub: list[float] = []
    std_cost: list[float] = []
    for k in range(nvar):
        lo, hi = problem.bounds[k]
        c = problem.objective[k]
        if math.isfinite(lo):
            offset[k] = lo
            cols.append([(len(std_ub), 1.0)])
            std_ub.append(hi - lo)
            std_cost.append(c)
        elif math.isfinite(hi):
            offset[k] = hi
            cols.append([(len(std_ub), -1.0)])
            std_ub.append(INF)
            std_cost.append(-c)
        else:
            cols.append([(len(std_ub), 1.0), (len(std_ub) + 1, -1.0)])
            std_ub += [INF, INF]
            std_cost += [c, -c]

    n_struct = len(std_ub)
    slack_rows = [i for i, (_, rel, _) in enumerate(problem.rows) if rel != "="]
    n_slack = len(slack_rows)
    A = np.zeros((m, n_struct + n_slack + m))
    b = np.zeros(m)
    slack_col = {}
    for i, (coeffs, rel, rhs) in enumerate(problem.rows):
        rhs_shift = rhs
        for k, a in coeffs.items():
            rhs_shift -= a * offset[k]
            for col, sign in cols[k]:
                A[i, col] += a * sign
        b[i] = rhs_shift
    for s, i in enumerate(slack_rows):
        col = n_struct + s
        A[i, col] = 1.0 if problem.rows[i][1] == "<=" else -1.0
        slack_col[i] = col
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    art0 = n_struct + n_slack
    basis = []
    for i in range(m):
        col = slack_col.get(i)
        if col is not None and A[i, col] > 0:
            basis.append(col)
        else:
            A[i, art0 + i] = 1.0
            basis.append(art0 + i)
    used_art = np.array([c >= art0 for c in basis], dtype=bool)
    ub = np.array(std_ub + [INF] * n_slack + [INF] * m)
    ub[art0:][~used_art] = 0.0

    tab = _Tableau(A, b, ub, basis)
    is_art = np.zeros(A.shape[1], dtype=bool)
    is_art[art0:] = True
    blocked = is_art.copy()

    if used_art.any():
        phase1 = np.zeros(A.shape[1])
        phase1[art0:][used_art] = 1.0
        tab.run(phase1, blocked)
        infeas = float(tab.values()[art0:].sum())
        if infeas > 1e-9 * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpOutcome("infeasible", pivots=tab.pivots)
    # artificials stay pinned at zero during phase 2
    tab.ub = ub.copy()
    tab.ub[art0:] = 0.0
    cost = np.zeros(A.shape[1])
    cost[:n_struct] = std_cost
    verdict = tab.run(cost, blocked)
    if verdict == "unbounded":
        return LpOutcome("unbounded", objective_value=-INF, pivots=tab.pivots)

    z = tab.values()
    x = offset.copy()
    for k in range(nvar):
        for col, sign in cols[k]:
            x[k] += sign * z[col]
    # snap to bounds to remove round-off outside the box
    for k, (lo, hi) in enumerate(problem.bounds):
        if x[k] < lo:
            x[k] = lo
        elif x[k] > hi:
            x[k] = hi
    obj = float(np.dot(problem.objective, x))
    return LpOutcome("optimal", x, obj, tab.pivots)


# --------------------------------------------------------------------------- budget search


def budget_tolerance(hi: float) -> float:
    return 1e-7 * max(1.0, abs(hi))


def bisect_budget(
    probe: Callable[[float], Optional[object]],
    lo: float,
    hi: float,
    check_monotone: bool = True,
) -> tuple[float, object]:
    """Bisection on a monotone feasibility oracle; ``probe(L)`` returns a witness or None."""
    tol = budget_tolerance(hi)
    witness = probe(hi)
    if witness is None:
        raise LpError("no feasible budget")
    bottom = probe(lo)
    if bottom is not None:
        return lo, bottom
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        out = probe(mid)
        if out is not None:
            b, witness = mid, out
        else:
            a = mid
    if check_monotone:
        below = b - 2 * tol
        if below > lo and probe(below) is not None:
            raise LpError("budget feasibility is not monotone")
    return b, witness


def min_feasible_budget(
    builder: Callable[[float], LpProblem],
    lo: float,
    hi: float,
    check_monotone: bool = True,
) -> tuple[float, LpOutcome]:
    """Smallest L in [lo, hi] (to 1e-7 * max(1, hi)) with ``builder(L)`` feasible.

    Feasibility must be monotone in L.  After bisection the point just below
    the answer is re-solved; finding it feasible means the builder is not
    monotone and raises.
    """

    def probe(L):
        out = lp_solve(builder(L))
        return out if out.feasible else None

    return bisect_budget(probe, lo, hi, check_monotone)


def refine_budget(
    min_cost: Callable[[float], Optional[tuple[float, object]]],
    breakpoints: Sequence[float],
    lo: float,
    hi: float,
) -> Optional[tuple[float, object]]:
    """Exact L* from a bisection bracket (lo infeasible, hi feasible).

    The filtered LPs only change at ``breakpoints``.  Between two consecutive
    breakpoints the least achievable budget value V is constant, so the first
    feasible budget in that interval is max(V, start).  ``min_cost(L)`` returns
    ``(V, witness)`` for the filters in force at L, or None if the filtered
    problem has no solution at all.
    """
    pts = sorted(set(float(v) for v in breakpoints if v <= hi))
    starts = [v for v in pts if v > lo]
    below = [v for v in pts if v <= lo]
    if below:
        starts.insert(0, below[-1])
    elif not starts or starts[0] > lo:
        starts.insert(0, lo)
    best = None
    for idx, start in enumerate(starts):
        end = starts[idx + 1] if idx + 1 < len(starts) else INF
        res = min_cost(max(start, lo) if start <= lo else start)
        if res is None:
            continue
        value, witness = res
        cand = max(value, start)
        if cand < end and cand <= hi + budget_tolerance(hi):
            if best is None or cand < best[0]:
                best = (cand, witness)
            break
    return best
