"""Static risk measures on finite real-valued distributions.

All measures treat outcomes as rewards: higher is better, and the risk level
``alpha`` in [0, 1] selects how much of the lower tail is considered.  Values
are plain floats; ``math.inf`` and ``-math.inf`` stand for the symbolic
endpoints (VaR at level 1, the lower quantile at level 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels

# slack in comparisons of cumulative probabilities against a risk level
PROB_TOL = 1e-12
# input masses may deviate from one by this much and are renormalised
MASS_TOL = 1e-9


class RiskError(ValueError):
    pass


class NonFiniteOutcome(RiskError):
    pass


class BadMass(RiskError):
    pass


class BracketFailure(RiskError, ArithmeticError):
    """The EVaR objective was still increasing at the largest allowed beta."""


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """A finite random variable given by outcomes and their probabilities."""

    outcomes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        x = np.array(self.outcomes, dtype=float).reshape(-1)
        p = np.array(self.probabilities, dtype=float).reshape(-1)
        if x.shape != p.shape:
            raise BadMass(f"{x.size} outcomes but {p.size} probabilities")
        if x.size == 0:
            raise BadMass("empty distribution")
        if not np.all(np.isfinite(x)):
            raise NonFiniteOutcome("outcomes must be finite")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise BadMass("probabilities must be finite and non-negative")
        total = p.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise BadMass(f"probabilities sum to {total!r}")
        if total != 1.0:
            p = p / total
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "outcomes", x)
        object.__setattr__(self, "probabilities", p)

    def __len__(self):
        return self.outcomes.size

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return (np.array_equal(self.outcomes, other.outcomes)
                and np.array_equal(self.probabilities, other.probabilities))

    def __repr__(self):
        pairs = ", ".join(f"{x:g}: {p:g}" for x, p in zip(self.outcomes, self.probabilities))
        return f"FiniteDistribution({{{pairs}}})"

    @classmethod
    def from_dict(cls, doc) -> "FiniteDistribution":
        return cls(doc["outcomes"], doc["probabilities"])

    def to_dict(self) -> dict:
        return {"outcomes": self.outcomes.tolist(), "probabilities": self.probabilities.tolist()}

    @property
    def is_normal(self) -> bool:
        return bool(np.all(np.diff(self.outcomes) > 0) and np.all(self.probabilities > 0))

    def mean(self) -> float:
        return float(self.probabilities @ self.outcomes)

    def min(self) -> float:
        return float(self.outcomes[self.probabilities > 0].min())

    def max(self) -> float:
        return float(self.outcomes[self.probabilities > 0].max())

    def shift_scale(self, scale: float, shift: float) -> "FiniteDistribution":
        return FiniteDistribution(scale * self.outcomes + shift, self.probabilities)


def point_mass(value: float) -> FiniteDistribution:
    return FiniteDistribution([value], [1.0])


def consolidate(d: FiniteDistribution) -> FiniteDistribution:
    """Sort outcomes, merge duplicates and drop zero-probability atoms."""
    order = np.argsort(d.outcomes, kind="stable")
    x = d.outcomes[order]
    p = d.probabilities[order]
    keep = p > 0
    x, p = x[keep], p[keep]
    starts = np.concatenate(([True], x[1:] != x[:-1]))
    groups = np.cumsum(starts) - 1
    merged = np.zeros(int(groups[-1]) + 1)
    np.add.at(merged, groups, p)
    return FiniteDistribution(x[starts], merged)


def mixture(parts: Iterable[FiniteDistribution], weights: Sequence[float]) -> FiniteDistribution:
    """Consolidated mixture of several distributions."""
    xs, ps = [], []
    for d, w in zip(parts, weights):
        if w > 0:
            xs.append(d.outcomes)
            ps.append(w * d.probabilities)
    return consolidate(FiniteDistribution(np.concatenate(xs), np.concatenate(ps)))


def _normal(d: FiniteDistribution) -> FiniteDistribution:
    return d if d.is_normal else consolidate(d)


def _check_level(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise RiskError(f"risk level {alpha!r} outside [0, 1]")
    return alpha


def var(d: FiniteDistribution, alpha: float) -> float:
    """Value-at-risk: the upper alpha-quantile, largest v with P(X < v) <= alpha."""
    alpha = _check_level(alpha)
    if alpha == 1.0:
        return math.inf
    d = _normal(d)
    below = np.cumsum(d.probabilities) - d.probabilities
    k = np.searchsorted(below, alpha + PROB_TOL, side="right") - 1
    return float(d.outcomes[k])


def lower_quantile(d: FiniteDistribution, alpha: float) -> float:
    """Smallest v with P(X <= v) >= alpha; minus infinity at alpha = 0."""
    alpha = _check_level(alpha)
    if alpha == 0.0:
        return -math.inf
    d = _normal(d)
    upto = np.cumsum(d.probabilities)
    k = np.searchsorted(upto, alpha - PROB_TOL, side="left")
    return float(d.outcomes[min(k, len(d) - 1)])


def tail_integral(d: FiniteDistribution, levels) -> np.ndarray:
    """``b * CVaR_b`` for each level ``b``, including ``b = 0``."""
    d = _normal(d)
    lev = np.clip(np.asarray(levels, dtype=float), 0.0, 1.0)
    return kernels.tail_integral(d.outcomes, d.probabilities, np.atleast_1d(lev))


def cvar(d: FiniteDistribution, alpha: float) -> float:
    """Conditional value-at-risk: mean of the worst alpha-mass of outcomes."""
    alpha = _check_level(alpha)
    d = _normal(d)
    if alpha == 0.0 or len(d) == 1:
        return d.min()
    if alpha == 1.0:
        return d.mean()
    return float(tail_integral(d, [alpha])[0] / alpha)


def cvar_dual_value(d: FiniteDistribution, alpha: float) -> float:
    """CVaR as min xi.x over {xi in simplex, alpha*xi <= q}, by greedy filling.

    Fills the cheapest atoms up to their cap ``q/alpha``; this is the optimal
    vertex of the capped simplex.
    """
    alpha = _check_level(alpha)
    d = _normal(d)
    if alpha == 0.0:
        return d.min()
    with np.errstate(over="ignore"):
        # a subnormal alpha makes the caps infinite, which the fill handles
        caps = d.probabilities / alpha
    xi = np.zeros(len(d))
    left = 1.0
    for i in range(len(d)):
        xi[i] = min(caps[i], left)
        left -= xi[i]
        if left <= 0:
            break
    return float(xi @ d.outcomes)


@dataclass(frozen=True)
class EvarOptions:
    # bracket for beta on outcomes rescaled to [0, 1]
    beta_lo: float = 1e-8
    beta_hi: float = 1e4
    beta_cap: float = 1e12
    tol: float = 1e-10
    dual: bool = False


@dataclass(frozen=True)
class EvarResult:
    value: float
    beta_star: Optional[float] = None
    dual_value: Optional[float] = None


def evar_levels(d: FiniteDistribution, levels, opts: EvarOptions = EvarOptions()):
    """EVaR of ``d`` at many levels; returns ``(values, betas)``.

    ``betas`` is NaN wherever the supremum is not attained at a finite beta
    (endpoints, degenerate distributions, or when the lowest atom already
    carries at least ``level`` mass).
    """
    d = _normal(d)
    lev = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((lev < 0) | (lev > 1)):
        raise RiskError("risk levels must lie in [0, 1]")
    x, p = d.outcomes, d.probabilities
    values = np.empty(lev.size)
    betas = np.full(lev.size, np.nan)
    if len(d) == 1:
        values[:] = x[0]
        return values, betas
    lo, span = x[0], x[-1] - x[0]
    at_min = lev <= p[0]
    at_mean = lev >= 1.0
    values[at_min] = lo
    values[at_mean & ~at_min] = d.mean()
    inner = ~(at_min | at_mean)
    if inner.any():
        xn = (x - lo) / span
        v, b, hit = kernels.evar_golden(xn, np.log(p), lev[inner], opts.beta_lo, opts.beta_hi,
                                        opts.beta_cap, opts.tol)
        if np.any(hit):
            bad = lev[inner][np.asarray(hit)]
            raise BracketFailure(f"EVaR objective still increasing at beta cap for levels {bad}")
        values[inner] = lo + span * np.asarray(v)
        betas[inner] = np.asarray(b) / span
    return values, betas


def evar_dual(d: FiniteDistribution, alpha: float) -> float:
    """EVaR as min xi.x over the KL ball of radius -log(alpha).

    The minimiser is an exponential tilt of ``d``; bisection on the tilt
    parameter finds the one whose divergence equals the radius.
    """
    alpha = _check_level(alpha)
    d = _normal(d)
    x, p = d.outcomes, d.probabilities
    if alpha == 0.0 or len(d) == 1 or p[0] >= alpha:
        return float(x[0])
    if alpha == 1.0:
        return d.mean()
    lo, span = x[0], x[-1] - x[0]
    xn = (x - lo) / span
    logq = np.log(p)
    radius = -math.log(alpha)

    def tilt(u):
        w = logq - math.exp(u) * xn
        w = w - (w.max() + math.log(np.exp(w - w.max()).sum()))
        xi = np.exp(w)
        return xi, float(xi @ (w - logq))

    a, b = math.log(1e-12), math.log(1e12)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if tilt(mid)[1] < radius:
            a = mid
        else:
            b = mid
        if b - a < 1e-14:
            break
    xi, _ = tilt(0.5 * (a + b))
    return float(lo + span * (xi @ xn))


def evar(d: FiniteDistribution, alpha: float, opts: EvarOptions = EvarOptions()) -> EvarResult:
    """Entropic value-at-risk by golden-section search on the primal."""
    alpha = _check_level(alpha)
    d = _normal(d)
    if alpha == 0.0:
        value, beta = d.min(), None
    else:
        v, b = evar_levels(d, [alpha], opts)
        value = float(v[0])
        beta = None if math.isnan(b[0]) else float(b[0])
    dual = evar_dual(d, alpha) if opts.dual else None
    return EvarResult(value, beta, dual)


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; infinite when p is not dominated by q."""
    p = np.asarray(getattr(p, "probabilities", p), dtype=float)
    q = np.asarray(getattr(q, "probabilities", q), dtype=float)
    if p.shape != q.shape:
        raise RiskError("KL divergence needs vectors over the same support")
    on = p > 0
    if np.any(q[on] <= 0):
        return math.inf
    return float(np.sum(p[on] * np.log(p[on] / q[on])))


MEASURES = {
    "var": var,
    "cvar": cvar,
    "evar": lambda d, a: evar(d, a).value,
    "q": lower_quantile,
}


def measure(name: str):
    """Look up a risk measure ``(distribution, alpha) -> float`` by name."""
    try:
        return MEASURES[name.lower()]
    except KeyError:
        raise RiskError(f"unknown measure {name!r}; expected one of {sorted(MEASURES)}") from None
