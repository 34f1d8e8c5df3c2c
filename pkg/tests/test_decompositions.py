import math

import numpy as np
import pytest

from riskdp import counterexamples as ce
from riskdp import decompositions as dec
from riskdp import golden, oracle, riskcore
from riskdp.decompositions import Mode, Separable
from riskdp.io import dumps
from riskdp.mdpmodel import DeterministicPolicy, enumerate_deterministic_policies, random_mdp, \
    return_distribution
from riskdp.suite import bernoulli_mdp, random_policy

H = 1e-3


# ------------------------------------------------------------- optimiser

def test_lattice_search_with_refinement_finds_interior_minimum():
    c = np.array([0.237, 0.5131, 0.2499])
    obj = Separable(3, lambda s, g: (g - c[s]) ** 2)
    val, alloc = dec.simplex_grid_optimize(obj, Mode.SIMPLEX_CAPPED, 0.1, refine=True)
    np.testing.assert_allclose(alloc.weights, c, atol=1e-6)
    assert val == pytest.approx(0.0, abs=1e-10)


def test_separable_and_plain_objectives_agree():
    c = np.array([0.3, 0.1, 0.6])
    sep = Separable(3, lambda s, g: np.abs(g - c[s]) * (s + 1))
    v1, a1 = dec.simplex_grid_optimize(sep, Mode.SIMPLEX_CAPPED, 0.05)
    v2, a2 = dec.simplex_grid_optimize(lambda x: float(np.sum(np.abs(x - c) * [1, 2, 3])),
                                       Mode.SIMPLEX_CAPPED, 0.05, n=3)
    assert v1 == pytest.approx(v2, abs=1e-12)
    np.testing.assert_allclose(a1.weights, a2.weights)


def test_maximisation_direction():
    obj = Separable(2, lambda s, g: g * (s + 1.0))
    val, alloc = dec.simplex_grid_optimize(obj, Mode.SIMPLEX_CAPPED, 0.1, direction="max")
    assert val == pytest.approx(2.0)
    np.testing.assert_allclose(alloc.weights, [0.0, 1.0])


def test_empty_feasible_set():
    obj = Separable(2, lambda s, g: g, constraint=lambda s, g: np.ones_like(g), budget=1.0)
    with pytest.raises(dec.EmptyFeasibleSet):
        dec.simplex_grid_optimize(obj, Mode.SIMPLEX_CAPPED, 0.1)


def test_step_must_divide_one():
    with pytest.raises(ValueError):
        dec.simplex_grid_optimize(Separable(2, lambda s, g: g), Mode.SIMPLEX_CAPPED, 0.3)


# ------------------------------------------------------------------ CVaR

@pytest.mark.parametrize("seed", range(6))
def test_cvar_evaluation_is_exact_up_to_grid(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, 3, 2, partial_actions=True)
    pi = random_policy(rng, m)
    for a in (0.05, 0.3, 0.7, 1.0):
        rep = dec.cvar_eval_decomposition(m, pi, a, h=H)
        direct = riskcore.cvar(return_distribution(m, pi), a)
        assert rep.value == pytest.approx(direct, abs=5 * H * 20)
        assert rep.recombined() == pytest.approx(rep.value, abs=1e-9)
        assert rep.allocation.is_feasible(a, m.initial)


def test_cvar_evaluation_on_mc_policy():
    m = ce.build(ce.MC)
    rep = dec.cvar_eval_decomposition(m, DeterministicPolicy((0, 0)), 0.5, h=H)
    assert rep.value == pytest.approx(-14.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_cvar_optimisation_is_an_upper_bound(seed):
    rng = np.random.default_rng(100 + seed)
    m = random_mdp(rng, 2, 3, partial_actions=True)
    a = float(rng.uniform(0.1, 0.9))
    grid = dec.cvar_opt_decomposition(m, a, h=H)
    exact = dec.cvar_opt_decomposition(m, a, exact=True)
    assert exact.value >= exact.oracle_value - 1e-9
    assert grid.value == pytest.approx(exact.value, abs=2e-2)
    assert exact.realized_value <= exact.oracle_value + 1e-9
    assert exact.allocation.is_feasible(a, m.initial)


def test_cvar_optimisation_on_mc():
    m = ce.build(ce.MC)
    rep = dec.cvar_opt_decomposition(m, 0.5, exact=True)
    assert rep.value == pytest.approx(golden.value("mc.cvar_opt@0.5"), abs=1e-9)
    assert rep.allocation.weights[0] == pytest.approx(golden.value("mc.cvar_opt_zeta_s1@0.5"), abs=1e-9)
    assert rep.oracle_gap == pytest.approx(4.0, abs=1e-9)


def test_exact_path_needs_two_states():
    m = random_mdp(np.random.default_rng(0), 3, 2)
    with pytest.raises(dec.NotTwoStates):
        dec.cvar_opt_decomposition(m, 0.5, exact=True)


def test_theta_curves():
    m = ce.build(ce.MC)
    t1 = dict(dec.theta_curve(m, DeterministicPolicy((0, 0)), 0.5, [0.0, 0.4, 1.0]))
    assert t1[0.4] == pytest.approx(golden.value("mc.theta_pi1(0.4)"), abs=1e-9)
    assert t1[0.0] == pytest.approx(golden.value("mc.theta_pi1(0)"), abs=1e-9)
    assert t1[1.0] == pytest.approx(golden.value("mc.theta_pi1(1)"), abs=1e-9)
    for z, v in dec.theta_curve(m, DeterministicPolicy((1, 0)), 0.5, 11):
        assert v == pytest.approx(10 - 10 * z, abs=1e-9)
    with pytest.raises(dec.NotTwoStates):
        dec.theta_curve(random_mdp(np.random.default_rng(0), 3, 1), DeterministicPolicy((0, 0, 0)), 0.5)


# ------------------------------------------------------------------ EVaR

def test_ni_decomposition_overestimates_on_me():
    m = ce.build(ce.ME)
    rep = dec.evar_ni_decomposition(m, DeterministicPolicy((0, 0)), 0.75)
    assert rep.value >= 1 / 3 - 1e-9
    assert rep.oracle_value < 1 / 3 - 1e-3
    assert rep.allocation.is_feasible(0.75, m.initial, tol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_corrected_decomposition_matches_evar(seed):
    rng = np.random.default_rng(200 + seed)
    m = random_mdp(rng, 2, 1)
    pi = DeterministicPolicy((0, 0))
    for a in (0.2, 0.6):
        cor = dec.evar_corrected_decomposition(m, pi, a)
        ni = dec.evar_ni_decomposition(m, pi, a)
        assert cor.value == pytest.approx(cor.oracle_value, abs=2e-3)
        assert ni.value >= ni.oracle_value - 1e-9
        assert cor.allocation.zeta is not None


def test_corrected_decomposition_rejects_zero_level():
    with pytest.raises(ValueError):
        dec.evar_corrected_decomposition(ce.build(ce.ME), DeterministicPolicy((0, 0)), 0.0)


# ------------------------------------------------------------------- VaR

@pytest.mark.parametrize("seed", range(10))
def test_var_decompositions_are_exact(seed):
    rng = np.random.default_rng(300 + seed)
    m = random_mdp(rng, int(rng.integers(1, 5)), 3, partial_actions=True, integer=bool(seed % 2))
    for a in (0.0, 0.1, 0.5, 0.93, 1.0):
        for pi in list(enumerate_deterministic_policies(m))[:3]:
            rep = dec.var_decomposition(m, pi, a)
            assert rep.value == rep.oracle_value
        opt = dec.var_opt_decomposition(m, a)
        q = dec.quantile_opt_decomposition(m, a)
        assert opt.value == opt.oracle_value
        assert q.value == q.oracle_value
        assert q.value <= opt.value
        if 0 < a:
            assert q.recombined() == q.value
        if a < 1:
            assert opt.allocation.is_feasible(a, m.initial)
            assert opt.recombined() == opt.value
        assert oracle.evaluate(m, opt.policy(), "var", a) == opt.value


def test_coin_quantile_and_var():
    b = bernoulli_mdp()
    assert dec.quantile_opt_decomposition(b, 0.5).value == golden.value("coin.q@0.5")
    assert dec.var_opt_decomposition(b, 0.5).value == golden.value("coin.var@0.5")


def test_reports_serialise():
    m = ce.build(ce.MC)
    for name, fn in dec.SCHEMES.items():
        if name in ("cvar-eval", "evar-ni", "evar-corrected", "var"):
            rep = fn(m, DeterministicPolicy((0, 0)), 0.5)
        else:
            rep = fn(m, 0.5)
        d = rep.to_dict(m)
        assert d["scheme"] == name
        assert dumps(d)


# -------------------------------------------------------- multi-horizon DP

def test_alpha_grid():
    g = dec.AlphaGrid.uniform(0.25)
    np.testing.assert_allclose(g.levels, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.resolution == 0.25
    assert len(g) == 5


def test_dp_horizon_one_matches_threshold_scan():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = random_mdp(rng, 3, 2, integer=True, reward_low=-3, reward_high=3)
        a = float(rng.choice(dec.AlphaGrid.uniform(1 / 64).levels[1:-1]))
        v0, _, _ = dec.var_dp_horizon(m, a, 1 / 64)
        assert v0 == dec.var_opt_decomposition(m, a).value


@pytest.mark.parametrize("seed", range(5))
def test_dp_is_a_tight_lower_bound(seed):
    rng = np.random.default_rng(400 + seed)
    m = random_mdp(rng, 2, 2, horizon=2, integer=True, reward_low=-3, reward_high=3)
    for a in (0.13, 0.5, 0.77):
        v0, vf, pol = dec.var_dp_horizon(m, a)
        best = oracle.optimize(m, "var", a).value
        got = oracle.evaluate(m, pol.as_history_policy(), "var", a)
        assert v0 <= best + 1e-9
        assert got >= v0 - 1e-9
        assert got <= best + 1e-9
        assert vf.q.shape == (2, 2, 2, 513)
        assert np.all(np.diff(vf.v(1), axis=-1) >= 0)
