import numpy as np
import pytest

from riskdp import counterexamples as ce
from riskdp import mdpmodel
from riskdp.mdpmodel import (DeterministicPolicy, ExplosionGuard, HistoryPolicy, RandomizedPolicy,
                             count_deterministic_policies, enumerate_deterministic_policies, from_tables,
                             random_mdp, return_distribution, validate)


def two_state(horizon=1):
    P = np.full((2, 2, 2), 0.5)
    R = np.array([[[1.0, 2.0], [0.0, 0.0]], [[-1.0, 3.0], [5.0, 5.0]]])
    return from_tables(P, R, [0.5, 0.5], horizon=horizon)


def test_bundled_examples_validate():
    for spec in (ce.MC, ce.ME, ce.M3):
        assert validate(ce.build(spec)) == []


def test_violations_are_reported():
    m = two_state()
    P = m.P.copy()
    P[0, 0] = [0.7, 0.7]
    R = m.R.copy()
    R[1, 1, 0] = np.nan
    bad = from_tables(P, R, [0.5, 0.6])
    kinds = {type(v).__name__ for v in validate(bad)}
    assert {"RowMass", "MissingReward", "InitialMass"} <= kinds

    P = m.P.copy()
    P[1, 0] = [1.5, -0.5]
    assert any(isinstance(v, mdpmodel.NegativeProbability) for v in validate(from_tables(P, m.R, m.initial)))

    avail = np.array([[True, True], [False, False]])
    assert any(isinstance(v, mdpmodel.NoActions) for v in validate(from_tables(m.P, m.R, m.initial, avail)))
    assert any(isinstance(v, mdpmodel.ZeroInitialMass) for v in validate(from_tables(m.P, m.R, [1.0, 0.0])))
    assert any(isinstance(v, mdpmodel.BadHorizon) for v in validate(m.with_horizon(0)))


def test_mc_return_distributions():
    m = ce.build(ce.MC)
    d = return_distribution(m, DeterministicPolicy((0, 0)))
    assert list(d.outcomes) == [-50.0, 10.0, 100.0]
    np.testing.assert_allclose(d.probabilities, [0.2, 0.5, 0.3])
    d = return_distribution(m, DeterministicPolicy((1, 0)))
    assert list(d.outcomes) == [0.0, 10.0]


def test_randomized_policy_is_a_mixture():
    m = two_state()
    mix = return_distribution(m, RandomizedPolicy(np.array([[0.3, 0.7], [1.0, 0.0]])))
    a = return_distribution(m, DeterministicPolicy((0, 0)))
    b = return_distribution(m, DeterministicPolicy((1, 0)))
    for x in np.union1d(a.outcomes, b.outcomes):
        pa = a.probabilities[a.outcomes == x].sum()
        pb = b.probabilities[b.outcomes == x].sum()
        assert mix.probabilities[mix.outcomes == x].sum() == pytest.approx(0.3 * pa + 0.7 * pb)


def test_unavailable_action_is_rejected():
    m = ce.build(ce.MC)
    with pytest.raises(ValueError):
        return_distribution(m, DeterministicPolicy((0, 1)))


@pytest.mark.parametrize("horizon", [1, 2, 3])
def test_policy_count_matches_enumeration(horizon):
    m = two_state(horizon)
    pols = list(enumerate_deterministic_policies(m))
    assert len(pols) == count_deterministic_policies(m)
    assert len(set(pols)) == len(pols)


def test_markov_and_history_paths_agree():
    m = two_state(horizon=3)
    pi = DeterministicPolicy((1, 0))
    hist = {}

    def fill(h, t):
        hist[h] = pi.choice[h[-1]]
        if t < m.horizon:
            for sp in m.support(h[-1], hist[h]):
                fill(h + (hist[h], sp), t + 1)

    for s in range(2):
        fill((s,), 1)
    a = return_distribution(m, pi)
    b = return_distribution(m, HistoryPolicy(hist, 3))
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-15)


def test_horizon_two_mean_is_additive():
    m = two_state(horizon=2)
    pi = DeterministicPolicy((0, 1))
    one = two_state(horizon=1)
    d1 = return_distribution(one, pi)
    # after one step the state is uniform again, which matches the initial law
    assert return_distribution(m, pi).mean() == pytest.approx(2 * d1.mean())


def test_explosion_guard(monkeypatch):
    m = two_state(horizon=4)
    monkeypatch.setenv("RISKDP_ATOM_BUDGET", "10")
    with pytest.raises(ExplosionGuard):
        list(enumerate_deterministic_policies(m))


def test_random_mdp_is_valid_and_seeded():
    for seed in range(20):
        a = random_mdp(np.random.default_rng(seed), 3, 3, horizon=2, partial_actions=True, integer=True)
        b = random_mdp(np.random.default_rng(seed), 3, 3, horizon=2, partial_actions=True, integer=True)
        assert validate(a) == []
        assert a == b


def test_reward_range():
    m = ce.build(ce.MC)
    assert m.reward_range() == 150.0


def test_history_policy_describe():
    m = two_state(horizon=2)
    pol = next(iter(enumerate_deterministic_policies(m)))
    desc = pol.describe(m)
    assert desc["s1"] == "a1"
    assert set(desc) >= {"s1", "s2", "s1/a1/s1", "s1/a1/s2"}
