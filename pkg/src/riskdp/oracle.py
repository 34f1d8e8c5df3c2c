"""Ground truth by exhaustive enumeration of deterministic policies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from . import riskcore
from .mdpmodel import Mdp, Policy, enumerate_deterministic_policies, return_distribution


@dataclass
class OptimizationResult:
    value: float
    best_policy: Policy
    per_policy_values: List[Tuple[Policy, float]]
    measure: str
    alpha: float

    def best_index(self) -> int:
        return next(i for i, (p, _) in enumerate(self.per_policy_values) if p is self.best_policy)


def evaluate(m: Mdp, pi: Policy, measure: str, alpha: float, budget: Optional[int] = None) -> float:
    """Risk of the exact return distribution of ``pi``."""
    rho = riskcore.measure(measure)
    return rho(return_distribution(m, pi, budget=budget), alpha)


def optimize(m: Mdp, measure: str, alpha: float, budget: Optional[int] = None) -> OptimizationResult:
    """Best deterministic policy; ties keep the first in enumeration order."""
    rho = riskcore.measure(measure)
    rows = []
    best, best_val = None, None
    for pi in enumerate_deterministic_policies(m, budget=budget):
        v = rho(return_distribution(m, pi, budget=budget), alpha)
        rows.append((pi, v))
        if best is None or v > best_val:
            best, best_val = pi, v
    return OptimizationResult(best_val, best, rows, measure.lower(), float(alpha))
