"""Risk functionals on finite cost distributions.

All functionals share one vectorized kernel (:func:`evaluate_rows`) so that the
single-distribution API, the brute-force oracle and the solvers agree on every
floating point operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .model import TwoStageInstance

PROB_TOL = 1e-9


class RiskDomainError(ValueError):
    """A risk parameter (alpha, minimum probability) is outside its domain."""


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 <= alpha < 1.0):
        raise RiskDomainError(f"alpha must lie in [0, 1), got {alpha!r}")
    return alpha


@dataclass(frozen=True)
class DiscreteDistribution:
    """Nonnegative values with strictly positive probabilities summing to one."""

    values: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probabilities", probs)
        if not values:
            raise ValueError("distribution needs at least one atom")
        if len(values) != len(probs):
            raise ValueError("values and probabilities differ in length")
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ValueError("atom values must be finite and nonnegative")
        if any(not (0.0 < p <= 1.0) for p in probs):
            raise ValueError("atom probabilities must lie in (0, 1]")
        total = sum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {total:.12g}, expected 1")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "DiscreteDistribution":
        atoms = list(atoms)
        return cls(tuple(a[0] for a in atoms), tuple(a[1] for a in atoms))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values, self.probabilities))

    @property
    def min_probability(self) -> float:
        return min(self.probabilities)

    def scaled(self, factor: float) -> "DiscreteDistribution":
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        return DiscreteDistribution(tuple(factor * v for v in self.values), self.probabilities)


def _expect(values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return (values * probs).sum(axis=-1)


def _cvar_rows(values: np.ndarray, probs: np.ndarray, alpha: float) -> np.ndarray:
    # g(gamma) is convex piecewise linear with kinks at the atoms, so its
    # minimum is attained at one of them
    gammas = values[:, :, None]
    excess = np.maximum(values[:, None, :] - gammas, 0.0)
    g = values + _expect(excess, probs) / (1.0 - alpha)
    return g.min(axis=1)


def evaluate_rows(values, probs, kind: str, alpha: float = 0.0) -> np.ndarray:
    """Apply a risk functional to each row of an (N, K) matrix of atom values.

    ``kind`` is one of ``expectation``, ``robust`` or ``cvar``.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    probs = np.asarray(probs, dtype=float)
    if kind == "expectation":
        return _expect(values, probs)
    if kind == "robust":
        return values.max(axis=1)
    if kind == "cvar":
        alpha = _check_alpha(alpha)
        if alpha == 0.0:
            return _expect(values, probs)
        return _cvar_rows(values, probs, alpha)
    raise ValueError(f"unknown risk functional {kind!r}")


def expectation(d: DiscreteDistribution) -> float:
    return float(evaluate_rows(d.values, d.probabilities, "expectation")[0])


def worst_case(d: DiscreteDistribution) -> float:
    """Largest atom; probabilities play no role."""
    return float(max(d.values))


def cvar(d: DiscreteDistribution, alpha: float) -> float:
    """CVaR_alpha as the infimum over gamma of gamma + E[(Y - gamma)^+] / (1 - alpha)."""
    return float(evaluate_rows(d.values, d.probabilities, "cvar", alpha)[0])


def cvar_ratio_sigma(alpha: float, pr_min: float) -> float:
    """min(1/pr_min, 1/(1 - alpha)): the factor by which CVaR can exceed expectation."""
    alpha = _check_alpha(alpha)
    pr_min = float(pr_min)
    if not (0.0 < pr_min <= 1.0):
        raise RiskDomainError(f"pr_min must lie in (0, 1], got {pr_min!r}")
    return min(1.0 / pr_min, 1.0 / (1.0 - alpha))


@dataclass(frozen=True)
class Objective:
    """Risk criterion applied to the second-stage cost distribution."""

    kind: str = "expectation"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("expectation", "robust", "cvar"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind == "cvar":
            object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        else:
            object.__setattr__(self, "alpha", 0.0)

    @classmethod
    def expectation(cls) -> "Objective":
        return cls("expectation")

    @classmethod
    def robust(cls) -> "Objective":
        return cls("robust")

    @classmethod
    def cvar(cls, alpha: float) -> "Objective":
        return cls("cvar", alpha)

    @classmethod
    def parse(cls, text: str, alpha: float | None = None) -> "Objective":
        """Accepts ``expectation``/``e``, ``robust``/``max``/``r`` and ``cvar``."""
        key = text.strip().lower()
        if key in ("expectation", "e", "mean"):
            return cls.expectation()
        if key in ("robust", "max", "r", "worst"):
            return cls.robust()
        if key == "cvar":
            if alpha is None:
                raise ValueError("cvar objective needs alpha")
            return cls.cvar(alpha)
        raise ValueError(f"unknown objective {text!r}")

    @property
    def label(self) -> str:
        return f"cvar({self.alpha:g})" if self.kind == "cvar" else self.kind

    def __call__(self, d: DiscreteDistribution) -> float:
        return float(self.rows([d.values], d.probabilities)[0])

    def rows(self, values, probs: Sequence[float]) -> np.ndarray:
        return evaluate_rows(values, probs, self.kind, self.alpha)


def augment_with_zero_scenario(inst: "TwoStageInstance", alpha: float) -> "TwoStageInstance":
    """Prepend an all-zero scenario of probability alpha and scale the rest by 1 - alpha.

    Expectation on the original instance equals CVaR_alpha on the result for
    every first-stage vector.
    """
    alpha = _check_alpha(alpha)
    if alpha == 0.0:
        raise RiskDomainError("alpha = 0 would create a zero-probability scenario")
    zero = np.zeros((1, inst.n), dtype=float)
    costs = np.vstack([zero, inst.scenario_costs])
    probs = np.concatenate([[alpha], inst.probabilities * (1.0 - alpha)])
    return inst.replace(scenario_costs=costs, probabilities=probs, alpha=alpha)
