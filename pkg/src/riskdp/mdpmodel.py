"""Finite MDPs, policies, and exact return distributions."""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .riskcore import FiniteDistribution, consolidate

ROW_TOL = 1e-12
DEFAULT_ATOM_BUDGET = 10_000_000


class ExplosionGuard(RuntimeError):
    """Exact enumeration would exceed the configured atom budget."""


def atom_budget() -> int:
    raw = os.environ.get("RISKDP_ATOM_BUDGET")
    return int(float(raw)) if raw else DEFAULT_ATOM_BUDGET


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite-horizon MDP over dense indices.

    ``P[s, a, s']`` are transition probabilities, ``R[s, a, s']`` rewards
    (NaN where not given), ``available[s, a]`` the per-state action mask.
    """

    states: Tuple[str, ...]
    actions: Tuple[str, ...]
    P: np.ndarray
    R: np.ndarray
    initial: np.ndarray
    available: np.ndarray
    horizon: int = 1

    def __post_init__(self):
        S, A = len(self.states), len(self.actions)
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        p0 = np.array(self.initial, dtype=float).reshape(-1)
        avail = np.array(self.available, dtype=bool)
        if P.shape != (S, A, S) or R.shape != (S, A, S):
            raise ValueError(f"transition/reward tables must have shape {(S, A, S)}")
        if p0.shape != (S,) or avail.shape != (S, A):
            raise ValueError("initial distribution or availability mask has the wrong shape")
        for arr in (P, R, p0, avail):
            arr.setflags(write=False)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "initial", p0)
        object.__setattr__(self, "available", avail)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def actions_at(self, s: int) -> List[int]:
        return [int(a) for a in np.flatnonzero(self.available[s])]

    def support(self, s: int, a: int) -> List[int]:
        return [int(sp) for sp in np.flatnonzero(self.P[s, a] > 0)]

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def action_index(self, name: str) -> int:
        return self.actions.index(name)

    def with_initial(self, initial) -> "Mdp":
        return Mdp(self.states, self.actions, self.P, self.R, initial, self.available, self.horizon)

    def with_horizon(self, horizon: int) -> "Mdp":
        return Mdp(self.states, self.actions, self.P, self.R, self.initial, self.available, horizon)

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (self.states == other.states and self.actions == other.actions
                and self.horizon == other.horizon
                and np.array_equal(self.P, other.P)
                and np.array_equal(self.R, other.R, equal_nan=True)
                and np.array_equal(self.initial, other.initial)
                and np.array_equal(self.available, other.available))

    def reward_range(self) -> float:
        used = self.P > 0
        used &= self.available[:, :, None]
        r = self.R[used]
        return float(r.max() - r.min()) if r.size else 0.0


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    def __str__(self):
        fields_ = ", ".join(str(v) for v in self.__dict__.values())
        return f"{type(self).__name__}({fields_})"


@dataclass(frozen=True)
class RowMass(Violation):
    state: str
    action: str
    total: float = float("nan")


@dataclass(frozen=True)
class NegativeProbability(Violation):
    state: str
    action: str
    next_state: str


@dataclass(frozen=True)
class MissingReward(Violation):
    state: str
    action: str
    next_state: str


@dataclass(frozen=True)
class NonFiniteReward(Violation):
    state: str
    action: str
    next_state: str


@dataclass(frozen=True)
class NoActions(Violation):
    state: str


@dataclass(frozen=True)
class ZeroInitialMass(Violation):
    state: str


@dataclass(frozen=True)
class InitialMass(Violation):
    total: float


@dataclass(frozen=True)
class BadHorizon(Violation):
    horizon: int


def validate(m: Mdp) -> List[Violation]:
    """All invariant violations of ``m``; empty when the model is well formed."""
    out: List[Violation] = []
    st, ac = m.states, m.actions
    if m.horizon < 1:
        out.append(BadHorizon(m.horizon))
    if np.any(m.initial < 0) or abs(m.initial.sum() - 1.0) > ROW_TOL:
        out.append(InitialMass(float(m.initial.sum())))
    for s in range(m.n_states):
        if not (m.initial[s] > 0):
            out.append(ZeroInitialMass(st[s]))
    for s in range(m.n_states):
        acts = m.actions_at(s)
        if not acts:
            out.append(NoActions(st[s]))
        for a in acts:
            row = m.P[s, a]
            for sp in np.flatnonzero(~(row >= 0)):
                out.append(NegativeProbability(st[s], ac[a], st[sp]))
            total = float(row.sum())
            if not abs(total - 1.0) <= ROW_TOL:
                out.append(RowMass(st[s], ac[a], total))
            for sp in np.flatnonzero(row > 0):
                r = m.R[s, a, sp]
                if np.isnan(r):
                    out.append(MissingReward(st[s], ac[a], st[sp]))
                elif not np.isfinite(r):
                    out.append(NonFiniteReward(st[s], ac[a], st[sp]))
    return out


# ------------------------------------------------------------------ policies

@dataclass(frozen=True)
class DeterministicPolicy:
    """One action index per state."""

    choice: Tuple[int, ...]

    def matrix(self, m: Mdp) -> np.ndarray:
        out = np.zeros((m.n_states, m.n_actions))
        out[np.arange(m.n_states), list(self.choice)] = 1.0
        return out

    def describe(self, m: Mdp) -> Dict[str, str]:
        return {m.states[s]: m.actions[a] for s, a in enumerate(self.choice)}


@dataclass(frozen=True, eq=False)
class RandomizedPolicy:
    """Row-stochastic ``(S, A)`` matrix of action probabilities."""

    dist: np.ndarray

    def __post_init__(self):
        d = np.array(self.dist, dtype=float)
        if d.ndim != 2 or np.any(d < 0) or np.any(np.abs(d.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("policy rows must be probability vectors")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    def matrix(self, m: Mdp) -> np.ndarray:
        return self.dist

    def describe(self, m: Mdp) -> Dict[str, Dict[str, float]]:
        return {m.states[s]: {m.actions[a]: float(p) for a, p in enumerate(row) if p > 0}
                for s, row in enumerate(self.dist)}


# a history (s1, a1, s2, a2, ..., st) as a flat tuple of indices
History = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class HistoryPolicy:
    """Deterministic history-dependent policy on the reachable histories."""

    choice: Dict[History, int]
    horizon: int

    def __call__(self, history: History) -> int:
        return self.choice[history]

    def __eq__(self, other):
        return isinstance(other, HistoryPolicy) and self.horizon == other.horizon \
            and self.choice == other.choice

    def __hash__(self):
        return hash((self.horizon, tuple(sorted(self.choice.items()))))

    def describe(self, m: Mdp) -> Dict[str, str]:
        out = {}
        for h, a in sorted(self.choice.items()):
            names = [m.states[x] if i % 2 == 0 else m.actions[x] for i, x in enumerate(h)]
            out["/".join(names)] = m.actions[a]
        return out


Policy = Union[DeterministicPolicy, RandomizedPolicy, HistoryPolicy]


def check_policy(m: Mdp, pi: Policy) -> None:
    if isinstance(pi, HistoryPolicy):
        for h, a in pi.choice.items():
            if not m.available[h[-1], a]:
                raise ValueError(f"policy picks unavailable action {m.actions[a]} in {m.states[h[-1]]}")
        return
    mat = pi.matrix(m)
    if mat.shape != (m.n_states, m.n_actions):
        raise ValueError("policy shape does not match the MDP")
    if np.any((mat > 0) & ~m.available):
        raise ValueError("policy puts mass on an unavailable action")


# ------------------------------------------------------- return distributions

def _markov_distribution(m: Mdp, pmat: np.ndarray, p0: np.ndarray, budget: int) -> FiniteDistribution:
    W = p0[:, None, None] * pmat[:, :, None] * m.P
    if m.horizon == 1:
        on = W > 0
        return consolidate(FiniteDistribution(m.R[on], W[on]))
    # the return only depends on (current state, accumulated reward), so merge nodes
    layer: Dict[Tuple[int, float], float] = {}
    for s, a, sp in zip(*np.nonzero(W)):
        key = (int(sp), float(m.R[s, a, sp]))
        layer[key] = layer.get(key, 0.0) + float(W[s, a, sp])
    for _ in range(m.horizon - 1):
        nxt: Dict[Tuple[int, float], float] = {}
        for (s, acc), w in layer.items():
            for a in np.flatnonzero(pmat[s] > 0):
                for sp in np.flatnonzero(m.P[s, a] > 0):
                    key = (int(sp), acc + float(m.R[s, a, sp]))
                    nxt[key] = nxt.get(key, 0.0) + w * pmat[s, a] * m.P[s, a, sp]
            if len(nxt) > budget:
                raise ExplosionGuard(f"more than {budget} (state, return) nodes")
        layer = nxt
    keys = list(layer)
    return consolidate(FiniteDistribution([k[1] for k in keys], [layer[k] for k in keys]))


def _history_distribution(m: Mdp, pi: HistoryPolicy, p0: np.ndarray, budget: int) -> FiniteDistribution:
    nodes = [((s,), 0.0, float(p0[s])) for s in np.flatnonzero(p0 > 0)]
    for _ in range(m.horizon):
        nxt = []
        for h, acc, w in nodes:
            s = h[-1]
            a = pi(h)
            for sp in m.support(s, a):
                nxt.append((h + (a, sp), acc + float(m.R[s, a, sp]), w * m.P[s, a, sp]))
            if len(nxt) > budget:
                raise ExplosionGuard(f"more than {budget} histories")
        nodes = nxt
    return consolidate(FiniteDistribution([n[1] for n in nodes], [n[2] for n in nodes]))


def return_distribution(m: Mdp, pi: Policy, initial=None, budget: Optional[int] = None) -> FiniteDistribution:
    """Exact distribution of the total reward collected over the horizon."""
    budget = atom_budget() if budget is None else budget
    p0 = m.initial if initial is None else np.asarray(initial, dtype=float)
    check_policy(m, pi)
    if isinstance(pi, HistoryPolicy):
        return _history_distribution(m, pi, p0, budget)
    return _markov_distribution(m, pi.matrix(m), p0, budget)


def conditional_return_distribution(m: Mdp, pi: Policy, s: int, budget: Optional[int] = None) -> FiniteDistribution:
    """Return distribution given that the first state is ``s``."""
    e = np.zeros(m.n_states)
    e[s] = 1.0
    return return_distribution(m, pi, initial=e, budget=budget)


def state_action_distribution(m: Mdp, s: int, a: int) -> FiniteDistribution:
    """One-step reward distribution after taking ``a`` in ``s``."""
    row = m.P[s, a]
    on = row > 0
    return consolidate(FiniteDistribution(m.R[s, a, on], row[on]))


# ---------------------------------------------------------------- enumeration

def count_deterministic_policies(m: Mdp) -> int:
    if m.horizon == 1:
        return int(np.prod([len(m.actions_at(s)) for s in range(m.n_states)]))

    def count(s, t):
        total = 0
        for a in m.actions_at(s):
            prod = 1
            if t < m.horizon:
                for sp in m.support(s, a):
                    prod *= count(sp, t + 1)
            total += prod
        return total

    out = 1
    for s in np.flatnonzero(m.initial > 0):
        out *= count(int(s), 1)
    return out


def _subtrees(m: Mdp, hist: History, t: int) -> List[Dict[History, int]]:
    out = []
    for a in m.actions_at(hist[-1]):
        if t == m.horizon:
            out.append({hist: a})
            continue
        branches = [_subtrees(m, hist + (a, sp), t + 1) for sp in m.support(hist[-1], a)]
        for combo in itertools.product(*branches):
            choice = {hist: a}
            for part in combo:
                choice.update(part)
            out.append(choice)
    return out


def enumerate_deterministic_policies(m: Mdp, budget: Optional[int] = None) -> Iterator[Policy]:
    """Every deterministic policy, Markov for T=1 and history-dependent otherwise."""
    budget = atom_budget() if budget is None else budget
    n = count_deterministic_policies(m)
    if n > budget:
        raise ExplosionGuard(f"{n} deterministic policies exceed the budget of {budget}")
    if m.horizon == 1:
        for combo in itertools.product(*[m.actions_at(s) for s in range(m.n_states)]):
            yield DeterministicPolicy(tuple(combo))
        return
    roots = [int(s) for s in np.flatnonzero(m.initial > 0)]
    per_root = [_subtrees(m, (s,), 1) for s in roots]
    for combo in itertools.product(*per_root):
        choice: Dict[History, int] = {}
        for part in combo:
            choice.update(part)
        yield HistoryPolicy(choice, m.horizon)


# --------------------------------------------------------------- construction

def from_tables(transitions, rewards, initial, available=None, horizon: int = 1,
                states: Optional[Sequence[str]] = None, actions: Optional[Sequence[str]] = None) -> Mdp:
    """Build an MDP from dense ``(S, A, S)`` arrays with default ``s1.., a1..`` names."""
    P = np.asarray(transitions, dtype=float)
    S, A = P.shape[0], P.shape[1]
    states = tuple(states) if states is not None else tuple(f"s{i + 1}" for i in range(S))
    actions = tuple(actions) if actions is not None else tuple(f"a{i + 1}" for i in range(A))
    avail = np.ones((S, A), dtype=bool) if available is None else np.asarray(available, dtype=bool)
    return Mdp(states, actions, P, rewards, initial, avail, horizon)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int = 1,
               reward_low: float = -10.0, reward_high: float = 10.0, integer: bool = False,
               sparse: bool = True, partial_actions: bool = False) -> Mdp:
    """A random valid MDP; transition rows get a random support when ``sparse``."""
    S, A = n_states, n_actions
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            k = int(rng.integers(1, S + 1)) if sparse else S
            idx = np.sort(rng.choice(S, size=k, replace=False))
            P[s, a, idx] = rng.dirichlet(np.ones(k))
            P[s, a] /= P[s, a].sum()
    if integer:
        R = rng.integers(int(reward_low), int(reward_high) + 1, size=(S, A, S)).astype(float)
    else:
        R = rng.uniform(reward_low, reward_high, size=(S, A, S))
    R[P == 0] = np.nan
    p0 = rng.dirichlet(np.ones(S))
    p0 = np.maximum(p0, 1e-3)
    p0 /= p0.sum()
    avail = np.ones((S, A), dtype=bool)
    if partial_actions and A > 1:
        for s in range(S):
            k = int(rng.integers(1, A + 1))
            avail[s] = False
            avail[s, np.sort(rng.choice(A, size=k, replace=False))] = True
    return from_tables(P, R, p0, avail, horizon)
