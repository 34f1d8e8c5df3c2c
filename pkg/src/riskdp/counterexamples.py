"""The small MDPs on which risk-level decompositions fail, and their checks.

``MC``  two states, CVaR optimisation gap of 4 at alpha = 0.5.
``ME``  two states, one action; the capped KL decomposition overestimates EVaR.
``M3``  two states, three actions in ``s1``; the CVaR decomposition picks a
        suboptimal action for a range of alpha.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import decompositions as dec
from . import oracle, riskcore
from .mdpmodel import DeterministicPolicy, Mdp, from_tables, return_distribution, validate

NAN = float("nan")
VALUE_TOL = 1e-9


class PropertyViolation(AssertionError):
    """A checked property failed; carries the numbers that broke it."""

    def __init__(self, message: str, **values):
        super().__init__(f"{message}: {values}")
        self.values = values


@dataclass(frozen=True)
class CounterexampleSpec:
    kind: str
    M: float = 600.0
    p_s2: float = 0.5
    # probability that a1 in s1 loses M; the other outcome gains M
    p_loss: float = 0.25

    def __post_init__(self):
        if self.kind not in ("MC", "ME", "M3"):
            raise ValueError(f"unknown counterexample {self.kind!r}")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not 0 < self.p_s2 < 1:
            raise ValueError("p_s2 must lie in (0, 1)")
        if not 0 < self.p_loss < 1:
            raise ValueError("p_loss must lie in (0, 1)")


def _mc() -> Mdp:
    P = np.zeros((2, 2, 2))
    R = np.full((2, 2, 2), np.nan)
    P[0, 0] = [0.4, 0.6]
    R[0, 0] = [-50.0, 100.0]
    P[0, 1] = [0.5, 0.5]
    R[0, 1] = [0.0, 0.0]
    P[1, 0] = [0.5, 0.5]
    R[1, 0] = [10.0, 10.0]
    avail = np.array([[True, True], [True, False]])
    return from_tables(P, R, [0.5, 0.5], avail)


def _me() -> Mdp:
    P = np.full((2, 1, 2), 0.5)
    R = np.zeros((2, 1, 2))
    R[0, 0] = [1.0, 1.0]
    return from_tables(P, R, [0.5, 0.5])


def _m3(M: float, p_s2: float, p_loss: float) -> Mdp:
    P = np.zeros((2, 3, 2))
    R = np.full((2, 3, 2), np.nan)
    P[0, 0] = [p_loss, 1.0 - p_loss]
    R[0, 0] = [-M, M]
    P[0, 1] = [0.5, 0.5]
    R[0, 1] = [0.0, 0.0]
    P[0, 2] = [0.5, 0.5]
    R[0, 2] = [-100.0, 400.0]
    P[1, 0] = [0.5, 0.5]
    R[1, 0] = [200.0, 200.0]
    avail = np.array([[True, True, True], [True, False, False]])
    return from_tables(P, R, [1.0 - p_s2, p_s2], avail)


def build(spec: CounterexampleSpec) -> Mdp:
    if spec.kind == "MC":
        m = _mc()
    elif spec.kind == "ME":
        m = _me()
    else:
        m = _m3(spec.M, spec.p_s2, spec.p_loss)
    problems = validate(m)
    assert not problems, problems
    return m


MC = CounterexampleSpec("MC")
ME = CounterexampleSpec("ME")
M3 = CounterexampleSpec("M3")


# ---------------------------------------------------------------- CVaR gap

def verify_cvar_gap(h: float = 1e-4, exact: bool = False) -> dict:
    """Oracle optimum 0 against decomposition value 4 on MC at alpha = 0.5."""
    m = build(MC)
    alpha = 0.5
    lhs = oracle.optimize(m, "cvar", alpha).value
    rep = dec.cvar_opt_decomposition(m, alpha, h=h, exact=exact)
    rhs = rep.value
    out = {"lhs": lhs, "rhs": rhs, "gap": rhs - lhs, "zeta_s1": float(rep.allocation.weights[0]),
           "h": None if exact else h}
    rhs_tol = 1e-9 if exact else max(1e-6, 140.0 * h)
    if abs(lhs) > 1e-9 or abs(rhs - 4.0) > rhs_tol:
        raise PropertyViolation("CVaR gap on MC not reproduced", **out)
    return out


# ---------------------------------------------------------------- EVaR gap

def verify_evar_gap(h: float = 1e-3) -> dict:
    """On ME at alpha = 0.75: CVaR is 1/3, EVaR is strictly smaller, the
    capped KL decomposition is at least CVaR, and the CVaR-optimal weights
    lie strictly inside the KL ball."""
    m = build(ME)
    alpha = 0.75
    pi = DeterministicPolicy((0, 0))
    d = return_distribution(m, pi)
    ev = riskcore.evar(d, alpha, riskcore.EvarOptions(dual=True))
    cv = riskcore.cvar(d, alpha)
    ni = dec.evar_ni_decomposition(m, pi, alpha, h=h)
    xi_star = np.array([1.0 / 3.0, 2.0 / 3.0])
    kl = riskcore.kl_divergence(xi_star, m.initial)
    out = {"evar": ev.value, "evar_dual": ev.dual_value, "beta_star": ev.beta_star, "cvar": cv,
           "ni_value": ni.value, "ni_xi": [float(x) for x in ni.allocation.weights],
           "xi_star": xi_star.tolist(), "kl_xi_star": kl, "kl_radius": -math.log(alpha)}
    ok = (abs(cv - 1.0 / 3.0) <= 1e-12 and ni.value >= 1.0 / 3.0 - 1e-9
          and ev.value < 1.0 / 3.0 - 1e-3 and kl < -math.log(alpha)
          and abs(ev.value - ev.dual_value) <= 1e-6)
    if not ok:
        raise PropertyViolation("EVaR gap on ME not reproduced", **out)
    return out


# ------------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    alpha: float
    oracle_value: float
    oracle_action: str
    decomposition_value: float
    decomposition_action: str
    realized_value: float

    @property
    def suboptimal(self) -> bool:
        return self.realized_value < self.oracle_value - VALUE_TOL


CSV_COLUMNS = ("alpha", "oracle_value", "oracle_action", "decomp_value", "decomp_action", "realized_value")


def _s1_action(m: Mdp, pi: DeterministicPolicy) -> str:
    return m.actions[pi.choice[0]]


def sweep_alpha(spec: CounterexampleSpec, alphas: Iterable[float], h: float = 1e-3,
                exact: bool = False) -> List[SweepRow]:
    """Oracle against the CVaR optimisation decomposition at each alpha.

    Actions are reported for ``s1``, the only state with a choice.
    """
    m = build(spec)
    rows = []
    for a in alphas:
        a = float(a)
        opt = oracle.optimize(m, "cvar", a)
        rep = dec.cvar_opt_decomposition(m, a, h=h, exact=exact)
        rows.append(SweepRow(a, opt.value, _s1_action(m, opt.best_policy), rep.value,
                             m.actions[rep.inner_actions[0]], rep.realized_value))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.alpha), _fmt(r.oracle_value), r.oracle_action,
                    _fmt(r.decomposition_value), r.decomposition_action, _fmt(r.realized_value)])


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def grid_intervals(alphas: Sequence[float], flags: Sequence[bool]) -> List[Tuple[float, float]]:
    """Maximal runs of consecutive grid points where ``flags`` holds."""
    out = []
    start = None
    for a, f in zip(alphas, flags):
        if f and start is None:
            start = a
        if f:
            end = a
        if not f and start is not None:
            out.append((start, end))
            start = None
    if start is not None:
        out.append((start, end))
    return out


def bisect_boundary(pred: Callable[[float], bool], a: float, b: float, tol: float = 1e-6) -> float:
    """Point where ``pred`` switches value between ``a`` and ``b`` (to ``tol``)."""
    fa = pred(a)
    if pred(b) == fa:
        raise ValueError("predicate has the same value at both ends")
    while b - a > tol:
        mid = 0.5 * (a + b)
        if pred(mid) == fa:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def uniquely_optimal(m: Mdp, action: str, alpha: float) -> bool:
    """True when every oracle-optimal policy plays ``action`` in ``s1``."""
    res = oracle.optimize(m, "cvar", alpha)
    a = m.action_index(action)
    best = [p for p, v in res.per_policy_values if v >= res.value - VALUE_TOL]
    return all(p.choice[0] == a for p in best)


def optimal_region(spec: CounterexampleSpec, action: str = "a3",
                   alphas: Optional[Sequence[float]] = None, tol: float = 1e-6) -> List[Tuple[float, float]]:
    """Intervals of alpha on which ``action`` is the only optimal choice in ``s1``.

    Found on a grid, then every interior endpoint is refined by bisection.
    """
    m = build(spec)
    alphas = np.linspace(0.0, 1.0, 201) if alphas is None else np.asarray(alphas, dtype=float)
    pred = lambda a: uniquely_optimal(m, action, a)
    return _refine_intervals(pred, alphas, tol)


def suboptimal_region(spec: CounterexampleSpec, alphas: Optional[Sequence[float]] = None,
                      h: float = 1e-3, tol: float = 1e-6, exact: bool = True) -> List[Tuple[float, float]]:
    """Intervals of alpha on which the decomposition's greedy policy is strictly worse than the oracle."""
    m = build(spec)
    alphas = np.linspace(0.0, 1.0, 201) if alphas is None else np.asarray(alphas, dtype=float)

    def pred(a):
        rep = dec.cvar_opt_decomposition(m, a, h=h, exact=exact)
        return rep.realized_value < rep.oracle_value - VALUE_TOL

    return _refine_intervals(pred, alphas, tol)


def _refine_intervals(pred, alphas, tol):
    flags = [pred(float(a)) for a in alphas]
    out = []
    for lo, hi in grid_intervals(list(alphas), flags):
        i, j = list(alphas).index(lo), list(alphas).index(hi)
        left = lo if i == 0 else bisect_boundary(pred, float(alphas[i - 1]), float(lo), tol)
        right = hi if j == len(alphas) - 1 else bisect_boundary(pred, float(hi), float(alphas[j + 1]), tol)
        out.append((left, right))
    return out


def region_contains(outer: Sequence[Tuple[float, float]], inner: Sequence[Tuple[float, float]],
                    tol: float = 1e-6) -> bool:
    """Whether every interval of ``inner`` lies inside some interval of ``outer``."""
    return all(any(a >= c - tol and b <= d + tol for c, d in outer) for a, b in inner)


def rows_as_dicts(rows: Sequence[SweepRow]) -> List[dict]:
    return [asdict(r) for r in rows]
