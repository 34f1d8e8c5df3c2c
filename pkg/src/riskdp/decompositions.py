"""Risk-level decompositions of static risk measures over the first state.

Each scheme rewrites the risk of the total return as an optimisation over a
per-state allocation (``zeta`` or ``xi``) of the risk level, and returns a
:class:`DecompositionReport` holding the value, the optimising allocation,
the per-state inner risk values and, when requested, the gap against the
brute-force oracle (decomposition minus oracle; positive means the scheme
overestimates).

CVaR and EVaR schemes search the allocation on a lattice of step ``h`` and
optionally polish the incumbent by pattern search.  VaR and lower-quantile
schemes are solved exactly from the finitely many return atoms.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels, oracle, riskcore
from .kernels import _numpy as _np_kernels
from .mdpmodel import (HistoryPolicy, Mdp, Policy, conditional_return_distribution,
                       return_distribution, state_action_distribution)
from .riskcore import PROB_TOL, FiniteDistribution

# feasibility slack for lattice constraints (caps, KL budgets)
LATTICE_TOL = 1e-12
# pattern search stops once the step drops below this
REFINE_MIN_STEP = 1e-9
REFINE_MAX_MOVES = 20_000
# relative slack when breaking ties between actions with equal inner values
ACTION_TIE_TOL = 1e-9


class EmptyFeasibleSet(ValueError):
    pass


class NotTwoStates(ValueError):
    pass


class GridTooCoarse(ArithmeticError):
    pass


class Mode(str, enum.Enum):
    SIMPLEX_CAPPED = "simplex-capped"
    KL_CAPPED = "kl-capped"
    KL_RELATIVE = "kl-relative"
    BOX01_STRICT_SUM = "box01-strict-sum"
    SIMPLEX_CAPPED_SUP = "simplex-capped-sup"


@dataclass(frozen=True, eq=False)
class RiskAllocation:
    """Allocation weights over states and the set they are drawn from.

    For ``KL_RELATIVE`` the per-state levels ``zeta`` that parameterise the
    set are carried alongside the weights ``xi``.
    """

    weights: np.ndarray
    mode: Mode
    zeta: Optional[np.ndarray] = None

    def is_feasible(self, alpha: float, p_hat, tol: float = LATTICE_TOL) -> bool:
        w = np.asarray(self.weights, dtype=float)
        p = np.asarray(p_hat, dtype=float)
        if self.mode is Mode.BOX01_STRICT_SUM:
            return bool(np.all(w >= -tol) and np.all(w <= 1 + tol) and w @ p < alpha)
        if np.any(w < -tol) or abs(w.sum() - 1.0) > 1e-9:
            return False
        budget = -math.log(alpha) if alpha > 0 else math.inf
        if self.mode in (Mode.SIMPLEX_CAPPED, Mode.SIMPLEX_CAPPED_SUP, Mode.KL_CAPPED):
            if np.any(alpha * w > p + tol):
                return False
        if self.mode is Mode.KL_CAPPED:
            return riskcore.kl_divergence(np.maximum(w, 0), p) <= budget + tol
        if self.mode is Mode.KL_RELATIVE:
            z = np.asarray(self.zeta, dtype=float)
            if np.any(z <= 0) or np.any(z > 1 + tol):
                return False
            on = w > 0
            lhs = float(np.sum(w[on] * (np.log(w[on] / p[on]) - np.log(z[on]))))
            return lhs <= budget + tol
        return True

    def to_dict(self) -> dict:
        out = {"mode": self.mode.value, "weights": [float(x) for x in self.weights]}
        if self.zeta is not None:
            out["zeta"] = [float(x) for x in self.zeta]
        return out


@dataclass
class DecompositionReport:
    scheme: str
    alpha: float
    value: float
    allocation: RiskAllocation
    inner_values: np.ndarray
    inner_levels: np.ndarray
    inner_actions: Optional[Tuple[int, ...]] = None
    oracle_value: Optional[float] = None
    oracle_gap: Optional[float] = None
    realized_value: Optional[float] = None
    h: Optional[float] = None

    @property
    def weighted(self) -> bool:
        return self.scheme not in ("var", "var-opt", "quantile-opt")

    def recombined(self) -> float:
        """The scheme objective rebuilt from the allocation and inner values."""
        if self.weighted:
            w = np.asarray(self.allocation.weights)
            on = w > 0
            return float(np.sum(w[on] * self.inner_values[on]))
        vals = self.inner_values
        if self.allocation.mode is Mode.BOX01_STRICT_SUM:
            vals = vals[np.asarray(self.allocation.weights) < 1]
        return float(vals.min()) if vals.size else math.inf

    def policy(self):
        from .mdpmodel import DeterministicPolicy
        return None if self.inner_actions is None else DeterministicPolicy(tuple(self.inner_actions))

    def to_dict(self, m: Optional[Mdp] = None) -> dict:
        names = m.states if m is not None else tuple(str(i) for i in range(len(self.inner_values)))
        out = {
            "scheme": self.scheme,
            "alpha": self.alpha,
            "value": self.value,
            "allocation": dict(zip(names, (float(x) for x in self.allocation.weights))),
            "mode": self.allocation.mode.value,
            "inner_values": dict(zip(names, (float(x) for x in self.inner_values))),
            "inner_levels": dict(zip(names, (float(x) for x in self.inner_levels))),
        }
        if self.allocation.zeta is not None:
            out["zeta"] = dict(zip(names, (float(x) for x in self.allocation.zeta)))
        if self.inner_actions is not None:
            acts = [m.actions[a] if m is not None else a for a in self.inner_actions]
            out["inner_actions"] = dict(zip(names, acts))
        for key in ("oracle_value", "oracle_gap", "realized_value", "h"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


# ------------------------------------------------------------ lattice search

@dataclass
class Separable:
    """Objective ``sum_s term(s, x_s)`` with an optional separable constraint.

    ``term(s, grid)`` and ``constraint(s, grid)`` are vectorised over a 1-D
    array of coordinate values; ``inf`` in ``term`` marks infeasible values.
    """

    n: int
    term: Callable[[int, np.ndarray], np.ndarray]
    constraint: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    budget: float = math.inf
    strict: bool = False

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.constraint is not None:
            c = sum(float(self.constraint(s, x[s:s + 1])[0]) for s in range(self.n))
            ok = c < self.budget - LATTICE_TOL if self.strict else c <= self.budget + LATTICE_TOL
            if not ok:
                return math.inf
        return float(sum(float(self.term(s, x[s:s + 1])[0]) for s in range(self.n)))


def _steps(h: float) -> int:
    n = int(round(1.0 / h))
    if n < 1 or abs(n * h - 1.0) > 1e-9:
        raise ValueError(f"grid step {h!r} must divide 1")
    return n


def _box_points(n_steps: int, parts: int) -> np.ndarray:
    total = (n_steps + 1) ** parts
    if total > _np_kernels.MAX_LATTICE_POINTS:
        raise ValueError("box lattice too large; use a coarser step")
    axes = [np.arange(n_steps + 1)] * parts
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, parts)


def _pattern_search(f, x: np.ndarray, fx: float, step: float, box: bool):
    n = x.size
    moves = 0
    while step >= REFINE_MIN_STEP and moves < REFINE_MAX_MOVES:
        improved = False
        if box:
            dirs = [(i, sgn) for i in range(n) for sgn in (1.0, -1.0)]
        else:
            dirs = [(i, j) for i in range(n) for j in range(n) if i != j]
        for d in dirs:
            cand = x.copy()
            if box:
                i, sgn = d
                cand[i] = min(1.0, max(0.0, cand[i] + sgn * step))
            else:
                i, j = d
                delta = min(step, cand[j])
                if delta <= 0:
                    continue
                cand[i] += delta
                cand[j] -= delta
            fc = f(cand)
            if fc < fx:
                x, fx = cand, fc
                improved = True
                moves += 1
                break
        if not improved:
            step /= 2.0
    return x, fx


def simplex_grid_optimize(objective, mode: Mode, h: float, direction: str = "min",
                          refine: bool = False, n: Optional[int] = None,
                          start=None) -> Tuple[float, RiskAllocation]:
    """Optimise ``objective`` over allocations on a lattice of step ``h``.

    ``objective`` is either a :class:`Separable` (tabulated and searched with
    the compiled kernel) or a plain callable on weight vectors, which needs
    ``n``.  The lattice is the simplex, or the unit box with the strict sum
    constraint folded into the objective for ``BOX01_STRICT_SUM``.  Ties keep
    the lexicographically smallest lattice point.  ``start`` is an optional
    feasible fallback used when no lattice point is feasible.
    """
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    sign = 1.0 if direction == "min" else -1.0
    N = _steps(h)
    grid = np.arange(N + 1) / N
    box = mode is Mode.BOX01_STRICT_SUM
    parts = objective.n if isinstance(objective, Separable) else n
    if parts is None:
        raise ValueError("dimension n is required for a plain objective")

    def f(x):
        v = objective(x)
        return sign * v if np.isfinite(v) else math.inf

    best_x, best_f = None, math.inf
    if isinstance(objective, Separable) and not box:
        tables = np.vstack([sign * np.asarray(objective.term(s, grid), dtype=float) for s in range(parts)])
        tables[~np.isfinite(tables)] = np.inf
        if objective.constraint is None:
            cons = np.zeros_like(tables)
            budget = 0.0
        else:
            cons = np.vstack([np.asarray(objective.constraint(s, grid), dtype=float) for s in range(parts)])
            budget = objective.budget
        val, idx, found = kernels.lattice_min(tables, cons, float(budget), bool(objective.strict), LATTICE_TOL)
        if found:
            best_x, best_f = np.asarray(idx) / N, float(val)
    else:
        pts = _box_points(N, parts) if box else _np_kernels.compositions(N, parts)
        for row in pts:
            x = row / N
            fx = f(x)
            if fx < best_f:
                best_x, best_f = x, fx

    if best_x is None:
        if start is None:
            raise EmptyFeasibleSet(f"no feasible allocation on the lattice with step {h}")
        best_x = np.asarray(start, dtype=float)
        best_f = f(best_x)
        if not np.isfinite(best_f):
            raise EmptyFeasibleSet("fallback allocation is infeasible")
        refine = True
    if refine:
        best_x, best_f = _pattern_search(f, best_x.astype(float), best_f, h / 2.0, box)
    return sign * best_f, RiskAllocation(best_x, mode)


# --------------------------------------------------------------- helpers

def _conditionals(m: Mdp, pi: Policy) -> List[FiniteDistribution]:
    return [conditional_return_distribution(m, pi, s) for s in range(m.n_states)]


def _state_actions(m: Mdp) -> List[List[Tuple[int, FiniteDistribution]]]:
    if m.horizon != 1:
        raise ValueError("policy-optimisation decompositions need horizon 1")
    return [[(a, state_action_distribution(m, s, a)) for a in m.actions_at(s)]
            for s in range(m.n_states)]


def _pick(values: Sequence[float], scale: float) -> int:
    """First index whose value is within tolerance of the maximum."""
    vals = np.asarray(values, dtype=float)
    top = vals.max()
    slack = ACTION_TIE_TOL * max(1.0, scale) if np.isfinite(top) else 0.0
    return int(np.flatnonzero(vals >= top - slack)[0])


def _inner_levels(alpha: float, weights, p_hat) -> np.ndarray:
    return np.minimum(alpha * np.asarray(weights, dtype=float) / p_hat, 1.0)


def _cvar_term(dists: Sequence[FiniteDistribution], p: float, alpha: float):
    def term(g):
        g = np.asarray(g, dtype=float)
        if alpha == 0.0:
            return g * max(d.min() for d in dists)
        lev = alpha * g / p
        ok = lev <= 1.0 + LATTICE_TOL
        lev = np.minimum(lev, 1.0)
        tail = np.max([riskcore.tail_integral(d, lev) for d in dists], axis=0)
        return np.where(ok, (p / alpha) * tail, np.inf)
    return term


def _finish_weighted(scheme, m, alpha, alloc, inner_values, levels, h, actions=None,
                     oracle_value=None, realized=None) -> DecompositionReport:
    w = np.asarray(alloc.weights, dtype=float)
    on = w > 0
    value = float(np.sum(w[on] * inner_values[on]))
    gap = None if oracle_value is None else value - oracle_value
    return DecompositionReport(scheme, float(alpha), value, alloc, inner_values, levels,
                               actions, oracle_value, gap, realized, h)


# ------------------------------------------------------------------- CVaR

def cvar_eval_decomposition(m: Mdp, pi: Policy, alpha: float, h: float = 1e-3,
                            refine: bool = True, exact: bool = False,
                            with_oracle: bool = True) -> DecompositionReport:
    """min over the capped simplex of sum_s zeta_s CVaR_{alpha zeta_s / p_s}(X | s)."""
    alpha = float(alpha)
    X = _conditionals(m, pi)
    p_hat = m.initial
    if exact:
        z1, _ = _cvar_two_state_exact([[d] for d in X], p_hat, alpha)
        alloc = RiskAllocation(np.array([z1, 1.0 - z1]), Mode.SIMPLEX_CAPPED)
    elif alpha == 1.0:
        alloc = RiskAllocation(p_hat.copy(), Mode.SIMPLEX_CAPPED)
    else:
        obj = Separable(m.n_states, lambda s, g: _cvar_term([X[s]], p_hat[s], alpha)(g))
        _, alloc = simplex_grid_optimize(obj, Mode.SIMPLEX_CAPPED, h, refine=refine, start=p_hat)
    levels = _inner_levels(alpha, alloc.weights, p_hat)
    inner = np.array([riskcore.cvar(X[s], levels[s]) for s in range(m.n_states)])
    ov = riskcore.cvar(return_distribution(m, pi), alpha) if with_oracle else None
    return _finish_weighted("cvar-eval", m, alpha, alloc, inner, levels, h, oracle_value=ov)


def cvar_opt_decomposition(m: Mdp, alpha: float, h: float = 1e-3, refine: bool = True,
                           exact: bool = False, with_oracle: bool = True) -> DecompositionReport:
    """min over the capped simplex of sum_s zeta_s max_a CVaR_{alpha zeta_s / p_s}(r | s, a)."""
    alpha = float(alpha)
    SA = _state_actions(m)
    p_hat = m.initial
    if exact:
        z1, _ = _cvar_two_state_exact([[d for _, d in row] for row in SA], p_hat, alpha)
        alloc = RiskAllocation(np.array([z1, 1.0 - z1]), Mode.SIMPLEX_CAPPED)
    elif alpha == 1.0:
        alloc = RiskAllocation(p_hat.copy(), Mode.SIMPLEX_CAPPED)
    else:
        terms = [_cvar_term([d for _, d in SA[s]], p_hat[s], alpha) for s in range(m.n_states)]
        obj = Separable(m.n_states, lambda s, g: terms[s](g))
        _, alloc = simplex_grid_optimize(obj, Mode.SIMPLEX_CAPPED, h, refine=refine, start=p_hat)
    levels = _inner_levels(alpha, alloc.weights, p_hat)
    scale = m.reward_range()
    inner, acts = [], []
    for s in range(m.n_states):
        vals = [riskcore.cvar(d, levels[s]) for _, d in SA[s]]
        k = _pick(vals, scale)
        acts.append(SA[s][k][0])
        inner.append(vals[k])
    inner = np.array(inner)
    ov = realized = None
    if with_oracle:
        ov = oracle.optimize(m, "cvar", alpha).value
        from .mdpmodel import DeterministicPolicy
        realized = oracle.evaluate(m, DeterministicPolicy(tuple(acts)), "cvar", alpha)
    return _finish_weighted("cvar-opt", m, alpha, alloc, inner, levels, h, tuple(acts), ov, realized)


def _cvar_two_state_exact(state_dists: Sequence[Sequence[FiniteDistribution]], p_hat, alpha: float):
    """Exact minimiser over zeta_1 of the two-state CVaR objective.

    The objective is piecewise linear in ``zeta_1``; it is evaluated at the
    interval ends, at every point where a conditional tail boundary crosses
    an atom, and where two actions' terms cross inside a linear piece.
    Returns ``(zeta_1, value)``; ties keep the smallest ``zeta_1``.
    """
    if len(state_dists) != 2:
        raise NotTwoStates("the breakpoint-exact path needs exactly two states")
    p1, p2 = float(p_hat[0]), float(p_hat[1])
    t1 = _cvar_term(state_dists[0], p1, alpha)
    t2 = _cvar_term(state_dists[1], p2, alpha)

    def f(z1):
        z1 = np.asarray(z1, dtype=float)
        return t1(z1) + t2(1.0 - z1)

    if alpha == 0.0:
        lo, hi = 0.0, 1.0
        cand = np.array([lo, hi])
    else:
        lo, hi = max(0.0, 1.0 - p2 / alpha), min(1.0, p1 / alpha)
        pts = [lo, hi]
        for d in state_dists[0]:
            pts.extend(p1 * np.cumsum(d.probabilities)[:-1] / alpha)
        for d in state_dists[1]:
            pts.extend(1.0 - p2 * np.cumsum(d.probabilities)[:-1] / alpha)
        pts = np.unique(np.clip(np.array(pts), lo, hi))
        cand = list(pts)
        # crossings of action terms inside each linear piece
        for a, b in zip(pts[:-1], pts[1:]):
            for dists, side in ((state_dists[0], 0), (state_dists[1], 1)):
                if len(dists) < 2:
                    continue
                p = p1 if side == 0 else p2
                ends = np.array([a, b]) if side == 0 else 1.0 - np.array([a, b])
                lev = np.minimum(alpha * ends / p, 1.0)
                vals = [riskcore.tail_integral(d, lev) for d in dists]
                for i in range(len(vals)):
                    for j in range(i + 1, len(vals)):
                        da = vals[i][0] - vals[j][0]
                        db = vals[i][1] - vals[j][1]
                        if da * db < 0:
                            cand.append(a + (b - a) * da / (da - db))
        cand = np.unique(np.array(cand))
    vals = f(cand)
    best = vals.min()
    k = int(np.flatnonzero(vals <= best + 1e-12 * max(1.0, abs(best)))[0])
    return float(cand[k]), float(vals[k])


def theta_curve(m: Mdp, pi: Policy, alpha: float, samples=101) -> List[Tuple[float, float]]:
    """theta(zeta_1) = sum_s zeta_s CVaR_{alpha zeta_s / p_s}(X | s) along the two-state simplex.

    ``samples`` is a count of evenly spaced points or an explicit sequence of
    ``zeta_1`` values.  Points violating the cap give NaN.
    """
    if m.n_states != 2:
        raise NotTwoStates(f"theta curves need two states, got {m.n_states}")
    X = _conditionals(m, pi)
    z = np.linspace(0.0, 1.0, samples) if np.isscalar(samples) else np.asarray(samples, dtype=float)
    out = []
    for z1 in z:
        total = 0.0
        for s, w in ((0, z1), (1, 1.0 - z1)):
            val = _cvar_term([X[s]], m.initial[s], alpha)(np.array([w]))[0]
            total += val
        out.append((float(z1), float(total) if np.isfinite(total) else math.nan))
    return out


# ------------------------------------------------------------------- EVaR

def _kl_term(p: float):
    def con(g):
        g = np.asarray(g, dtype=float)
        out = np.zeros_like(g)
        on = g > 0
        out[on] = g[on] * np.log(g[on] / p)
        return out
    return con


def evar_ni_decomposition(m: Mdp, pi: Policy, alpha: float, h: float = 1e-3, refine: bool = True,
                          with_oracle: bool = True) -> DecompositionReport:
    """min over the KL-capped set of sum_s xi_s EVaR_{alpha xi_s / p_s}(X | s)."""
    alpha = float(alpha)
    X = _conditionals(m, pi)
    p_hat = m.initial
    if alpha == 1.0:
        alloc = RiskAllocation(p_hat.copy(), Mode.KL_CAPPED)
    else:
        def term(s, g):
            g = np.asarray(g, dtype=float)
            lev = alpha * g / p_hat[s]
            ok = lev <= 1.0 + LATTICE_TOL
            vals, _ = riskcore.evar_levels(X[s], np.minimum(lev, 1.0))
            return np.where(ok, g * vals, np.inf)

        budget = -math.log(alpha) if alpha > 0 else math.inf
        obj = Separable(m.n_states, term, lambda s, g: _kl_term(p_hat[s])(g), budget)
        _, alloc = simplex_grid_optimize(obj, Mode.KL_CAPPED, h, refine=refine, start=p_hat)
    levels = _inner_levels(alpha, alloc.weights, p_hat)
    inner = np.array([riskcore.evar(X[s], levels[s]).value for s in range(m.n_states)])
    ov = riskcore.evar(return_distribution(m, pi), alpha).value if with_oracle else None
    return _finish_weighted("evar-ni", m, alpha, alloc, inner, levels, h, oracle_value=ov)


class _LevelTable:
    """EVaR of one conditional distribution as a function of c = -log(level).

    Tabulated on a uniform grid in sqrt(c) up to the point where the level
    reaches the smallest atom mass (beyond it EVaR is the minimum outcome),
    and linearly interpolated.
    """

    def __init__(self, d: FiniteDistribution, points: int = 4097):
        self.d = d
        qmin = float(d.probabilities.min()) if len(d) > 1 else 1.0
        self.c_max = -math.log(qmin)
        self.floor = d.min()
        if self.c_max <= 0:
            self.r = np.array([0.0, 1.0])
            self.v = np.array([self.floor, self.floor])
            self.r_max = 0.0
            return
        self.r_max = math.sqrt(self.c_max)
        self.r = np.linspace(0.0, self.r_max, points)
        self.v, _ = riskcore.evar_levels(d, np.exp(-self.r ** 2))

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        if self.r_max == 0.0:
            return np.full(c.shape, self.floor)
        r = np.sqrt(np.maximum(c, 0.0))
        return np.where(c >= self.c_max, self.floor, np.interp(r, self.r, self.v))


def evar_corrected_decomposition(m: Mdp, pi: Policy, alpha: float, h: float = 1e-3,
                                 refine: bool = True, with_oracle: bool = True,
                                 max_outer_points: int = 5000) -> DecompositionReport:
    """inf over zeta in (0,1]^S and xi in the relative KL set of sum_s xi_s EVaR_{zeta_s}(X | s).

    With per-state budgets ``c_s = -log zeta_s`` the constraint reads
    ``KL(xi || p) + sum_s xi_s c_s <= -log alpha``.  The outer search runs over
    ``xi``; the inner one splits the remaining budget ``B`` across states as
    ``xi_s c_s = B u_s`` with ``u`` on the simplex.  The reported value is
    recomputed exactly at the chosen levels, so it is attained by a feasible
    pair and bounds the infimum from above.
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("the corrected EVaR decomposition needs alpha in (0, 1]")
    X = _conditionals(m, pi)
    p_hat = m.initial
    S = m.n_states
    radius = -math.log(alpha)
    tables = [_LevelTable(d) for d in X]
    N_in = _steps(h)
    g_in = np.arange(N_in + 1) / N_in
    zero_cons = np.zeros((S, N_in + 1))

    def inner_tables(xi, B):
        rows = []
        for s in range(S):
            if xi[s] <= 0:
                rows.append(np.zeros(N_in + 1))
            else:
                rows.append(xi[s] * tables[s](B * g_in / xi[s]))
        return np.vstack(rows)

    def budget_of(xi):
        return radius - riskcore.kl_divergence(xi, p_hat)

    def outer(xi):
        xi = np.asarray(xi, dtype=float)
        B = budget_of(xi)
        if not B >= -LATTICE_TOL:
            return math.inf
        B = max(B, 0.0)
        val, _, _ = kernels.lattice_min(inner_tables(xi, B), zero_cons, 0.0, False, LATTICE_TOL)
        return float(val)

    if alpha == 1.0 or S == 1:
        xi = p_hat.copy()
    else:
        # the outer lattice may be coarser than h; pattern search closes the gap
        h_out = h
        while _count_compositions(_steps(h_out), S) > max_outer_points:
            h_out = 1.0 / (_steps(h_out) // 2)
        pts = _np_kernels.compositions(_steps(h_out), S) / _steps(h_out)
        best_x, best_f = p_hat.copy(), outer(p_hat)
        for x in pts:
            fx = outer(x)
            if fx < best_f:
                best_x, best_f = x, fx
        if refine:
            best_x, best_f = _pattern_search(outer, best_x.astype(float), best_f, h_out / 2.0, False)
        xi = best_x

    # inner split at the chosen xi, then polish it in continuous space
    B = max(budget_of(xi), 0.0)
    val, idx, _ = kernels.lattice_min(inner_tables(xi, B), zero_cons, 0.0, False, LATTICE_TOL)
    u = np.asarray(idx) / N_in
    if refine and S > 1 and B > 0:
        def split(uu):
            c = np.where(xi > 0, B * uu / np.where(xi > 0, xi, 1.0), 0.0)
            return float(sum(xi[s] * tables[s](c[s:s + 1])[0] for s in range(S) if xi[s] > 0))
        u, _ = _pattern_search(split, u.astype(float), split(u), 0.5 / N_in, False)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(xi > 0, B * u / np.where(xi > 0, xi, 1.0), 0.0)
    zeta = np.exp(-c)
    inner = np.array([riskcore.evar(X[s], float(zeta[s])).value for s in range(S)])
    alloc = RiskAllocation(np.asarray(xi, dtype=float), Mode.KL_RELATIVE, zeta)
    ov = riskcore.evar(return_distribution(m, pi), alpha).value if with_oracle else None
    return _finish_weighted("evar-corrected", m, alpha, alloc, inner, zeta, h, oracle_value=ov)


def _count_compositions(n: int, parts: int) -> int:
    return math.comb(n + parts - 1, parts - 1)


# -------------------------------------------------------------------- VaR

def _below(d: FiniteDistribution, z: np.ndarray) -> np.ndarray:
    """P(X < z) for each threshold in ``z``."""
    cum = np.concatenate(([0.0], np.cumsum(d.probabilities)))
    cum[-1] = 1.0
    return cum[np.searchsorted(d.outcomes, z, side="left")]


def _threshold_scan(per_state: List[List[FiniteDistribution]], p_hat, alpha: float, strict: bool):
    """Largest return atom ``z`` whose aggregated lower-tail mass meets the level.

    Returns ``(z, ell, choice)`` where ``ell[s]`` is the smallest conditional
    mass below ``z`` over the actions of ``s`` and ``choice[s]`` the first
    action attaining it.
    """
    cands = np.unique(np.concatenate([d.outcomes for row in per_state for d in row]))
    ell = np.empty((len(per_state), cands.size))
    for s, row in enumerate(per_state):
        ell[s] = np.min([_below(d, cands) for d in row], axis=0)
    need = p_hat @ ell
    ok = need < alpha - PROB_TOL if strict else need <= alpha + PROB_TOL
    k = int(np.flatnonzero(ok)[-1])
    z = float(cands[k])
    choice = []
    for s, row in enumerate(per_state):
        masses = np.array([_below(d, np.array([z]))[0] for d in row])
        choice.append(int(np.flatnonzero(masses == masses.min())[0]))
    return z, ell[:, k], choice


def _var_witness(ell: np.ndarray, p_hat, alpha: float):
    # raise every state's level by the same fraction of its headroom
    F = float(p_hat @ ell)
    t = (alpha - F) / (1.0 - F) if F < 1.0 else 0.0
    levels = np.clip(ell + t * (1.0 - ell), 0.0, 1.0)
    return p_hat * levels / alpha, levels


def _var_report(scheme, m, alpha, per_state, choice_names, with_oracle, oracle_fn) -> DecompositionReport:
    S = m.n_states
    p_hat = m.initial
    if alpha >= 1.0:
        alloc = RiskAllocation(p_hat.copy(), Mode.SIMPLEX_CAPPED_SUP)
        inner = np.full(S, math.inf)
        levels = np.ones(S)
        acts = tuple(row[0] for row in choice_names) if choice_names else None
        value = math.inf
    else:
        z, ell, choice = _threshold_scan(per_state, p_hat, alpha, strict=False)
        if alpha == 0.0:
            zeta = p_hat.copy()
            levels = np.zeros(S)
        else:
            zeta, levels = _var_witness(ell, p_hat, alpha)
        alloc = RiskAllocation(zeta, Mode.SIMPLEX_CAPPED_SUP)
        inner = np.array([riskcore.var(per_state[s][choice[s]], levels[s]) for s in range(S)])
        acts = tuple(choice_names[s][choice[s]] for s in range(S)) if choice_names else None
        value = z
    ov = oracle_fn() if with_oracle else None
    gap = None if ov is None else (0.0 if value == ov else value - ov)
    return DecompositionReport(scheme, float(alpha), value, alloc, inner, levels, acts, ov, gap)


def var_decomposition(m: Mdp, pi: Policy, alpha: float, with_oracle: bool = True) -> DecompositionReport:
    """Exact VaR of a fixed policy from the per-state conditional distributions."""
    alpha = float(alpha)
    X = _conditionals(m, pi)
    return _var_report("var", m, alpha, [[d] for d in X], None, with_oracle,
                       lambda: riskcore.var(return_distribution(m, pi), alpha))


def var_opt_decomposition(m: Mdp, alpha: float, with_oracle: bool = True) -> DecompositionReport:
    """Exact optimal VaR with per-state greedy actions."""
    alpha = float(alpha)
    SA = _state_actions(m)
    per_state = [[d for _, d in row] for row in SA]
    names = [[a for a, _ in row] for row in SA]
    return _var_report("var-opt", m, alpha, per_state, names, with_oracle,
                       lambda: oracle.optimize(m, "var", alpha).value)


def quantile_opt_decomposition(m: Mdp, alpha: float, with_oracle: bool = True) -> DecompositionReport:
    """Exact optimal lower quantile; the level constraint is strict."""
    alpha = float(alpha)
    SA = _state_actions(m)
    per_state = [[d for _, d in row] for row in SA]
    names = [[a for a, _ in row] for row in SA]
    S = m.n_states
    p_hat = m.initial
    if alpha == 0.0:
        alloc = RiskAllocation(np.zeros(S), Mode.BOX01_STRICT_SUM)
        value = -math.inf
        inner = np.full(S, -math.inf)
        levels = np.zeros(S)
        acts = tuple(row[0] for row in names)
    else:
        z, ell, choice = _threshold_scan(per_state, p_hat, alpha, strict=True)
        slack = alpha - float(p_hat @ ell)
        levels = np.minimum(ell + slack / 2.0, 1.0)
        alloc = RiskAllocation(levels, Mode.BOX01_STRICT_SUM)
        inner = np.array([riskcore.lower_quantile(per_state[s][choice[s]], levels[s])
                          if levels[s] < 1 else math.inf for s in range(S)])
        acts = tuple(names[s][choice[s]] for s in range(S))
        value = z
    ov = oracle.optimize(m, "q", alpha).value if with_oracle else None
    gap = None if ov is None else (0.0 if value == ov else value - ov)
    return DecompositionReport("quantile-opt", float(alpha), value, alloc, inner, levels, acts, ov, gap)


# ------------------------------------------------- multi-horizon VaR program

@dataclass(frozen=True, eq=False)
class AlphaGrid:
    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or lv.size < 2 or lv[0] != 0.0 or lv[-1] != 1.0:
            raise ValueError("an alpha grid must start at 0 and end at 1")
        if np.any(np.diff(lv) <= 0):
            raise ValueError("alpha grid levels must be strictly increasing")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @classmethod
    def uniform(cls, h: float) -> "AlphaGrid":
        n = _steps(h)
        return cls(np.arange(n + 1) / n)

    @property
    def resolution(self) -> float:
        return float(np.diff(self.levels).max())

    def __len__(self):
        return self.levels.size


@dataclass
class ValueFunctionGrid:
    """``q[t-1, s, a, k]`` for stages ``t = 1..T`` on the alpha grid.

    Unavailable actions hold ``-inf``; the last grid column (level 1) is ``+inf``.
    """

    q: np.ndarray
    alpha_grid: AlphaGrid
    horizon: int

    def v(self, t: int) -> np.ndarray:
        """State values at stage ``t`` (``t = T + 1`` gives the terminal values)."""
        if t == self.horizon + 1:
            out = np.zeros((self.q.shape[1], len(self.alpha_grid)))
            out[:, -1] = math.inf
            return out
        return self.q[t - 1].max(axis=1)

    def to_dict(self, m: Optional[Mdp] = None) -> dict:
        return {"horizon": self.horizon, "alpha_grid": self.alpha_grid.levels.tolist(),
                "q": self.q.tolist()}


@dataclass
class ExtractedPolicy:
    alpha_bar: Dict[Tuple[int, ...], float]
    action: Dict[Tuple[int, ...], int]
    horizon: int

    def as_history_policy(self) -> HistoryPolicy:
        return HistoryPolicy(dict(self.action), self.horizon)


def _stage_solve(w: np.ndarray, p: np.ndarray, grid: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Best threshold for each target level, continuation values snapped to the grid.

    ``w[j, k]`` is the value reachable from successor ``j`` at grid level
    ``k`` (nondecreasing in ``k``).  A threshold ``z`` needs level ``lam_j(z)``
    = the smallest grid level with ``w[j, k] >= z``, and is affordable at
    level ``alpha`` when ``sum_j p_j lam_j(z) <= alpha``.
    """
    cands = np.unique(w)
    need = np.zeros(cands.size)
    for j in range(w.shape[0]):
        need += p[j] * grid[np.searchsorted(w[j], cands, side="left")]
    idx = np.searchsorted(need, targets + PROB_TOL, side="right") - 1
    return cands[idx]


def _level_index(row: np.ndarray, z: float) -> int:
    return int(np.searchsorted(row, z, side="left"))


def var_dp_horizon(m: Mdp, alpha: float, grid: Union[AlphaGrid, float] = 1.0 / 512,
                   tol: float = 1e-9):
    """Backward recursion for optimal VaR over histories on an alpha grid.

    Inner levels are snapped down to the grid, so ``v0`` is a lower bound on
    the optimal VaR and the extracted policy attains at least ``v0``.
    Returns ``(v0, ValueFunctionGrid, ExtractedPolicy)``.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    ag = grid if isinstance(grid, AlphaGrid) else AlphaGrid.uniform(grid)
    g = ag.levels
    K = g.size
    S, A, T = m.n_states, m.n_actions, m.horizon
    q = np.full((T, S, A, K), -math.inf)
    v_next = np.zeros((S, K))
    v_next[:, -1] = math.inf
    for t in range(T, 0, -1):
        for s in range(S):
            for a in m.actions_at(s):
                sp = m.support(s, a)
                w = m.R[s, a, sp][:, None] + v_next[sp]
                q[t - 1, s, a] = _stage_solve(w, m.P[s, a, sp], g, g)
        fixed = np.maximum.accumulate(q[t - 1], axis=-1)
        finite = np.isfinite(q[t - 1])
        if np.any(np.abs(fixed[finite] - q[t - 1][finite]) > tol):
            raise GridTooCoarse(f"value function not monotone in the level at stage {t}")
        q[t - 1] = fixed
        v_next = q[t - 1].max(axis=1)
    vf = ValueFunctionGrid(q, ag, T)
    roots = [int(s) for s in np.flatnonzero(m.initial > 0)]
    v1 = vf.v(1)
    v0 = float(_stage_solve(v1[roots], m.initial[roots], g, np.array([alpha]))[0])

    alpha_bar: Dict[Tuple[int, ...], float] = {}
    action: Dict[Tuple[int, ...], int] = {}

    def descend(hist, t, k):
        s = hist[-1]
        alpha_bar[hist] = float(g[k])
        a = int(np.argmax(q[t - 1, s, :, k]))
        action[hist] = a
        if t == T:
            return
        z = q[t - 1, s, a, k]
        v_after = vf.v(t + 1)
        for sp in m.support(s, a):
            row = m.R[s, a, sp] + v_after[sp]
            descend(hist + (a, sp), t + 1, min(_level_index(row, z), K - 1))

    for s in roots:
        descend((s,), 1, min(_level_index(v1[s], v0), K - 1))
    return v0, vf, ExtractedPolicy(alpha_bar, action, T)


SCHEMES = {
    "cvar-eval": cvar_eval_decomposition,
    "cvar-opt": cvar_opt_decomposition,
    "evar-ni": evar_ni_decomposition,
    "evar-corrected": evar_corrected_decomposition,
    "var": var_decomposition,
    "var-opt": var_opt_decomposition,
    "quantile-opt": quantile_opt_decomposition,
}
