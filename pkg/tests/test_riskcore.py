import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskdp import golden, riskcore
from riskdp.riskcore import EvarOptions, FiniteDistribution

DIST3 = FiniteDistribution([-50.0, 10.0, 100.0], [0.2, 0.5, 0.3])
COIN = FiniteDistribution([0.0, 1.0], [0.5, 0.5])


@st.composite
def distributions(draw, max_atoms=6):
    n = draw(st.integers(1, max_atoms))
    xs = draw(st.lists(st.integers(-20, 20), min_size=n, max_size=n))
    ws = draw(st.lists(st.integers(1, 9), min_size=n, max_size=n))
    w = np.array(ws, float)
    return riskcore.consolidate(FiniteDistribution(np.array(xs, float), w / w.sum()))


levels = st.floats(0.0, 1.0, allow_nan=False)
open_levels = st.floats(0.01, 0.99, allow_nan=False)


# --- reference implementations written straight from the definitions

def ref_var(d, a):
    # sup{z : P(X < z) <= a}
    if a >= 1:
        return math.inf
    best = -math.inf
    for x in d.outcomes:
        if d.probabilities[d.outcomes < x].sum() <= a + 1e-12:
            best = max(best, x)
    return best


def ref_lower_quantile(d, a):
    # inf{z : P(X <= z) >= a}
    if a <= 0:
        return -math.inf
    return min(x for x in d.outcomes if d.probabilities[d.outcomes <= x].sum() >= a - 1e-12)


def ref_cvar(d, a):
    # sup_z z - E[(z - X)+] / a, attained at an atom
    if a == 0:
        return float(d.outcomes.min())
    with np.errstate(over="ignore"):
        return max(z - np.sum(d.probabilities * np.maximum(z - d.outcomes, 0.0)) / a for z in d.outcomes)


def ref_evar_bounds(d, a, grid=400):
    """(lower, upper): best primal over a beta grid, best KL-feasible grid point."""
    x, q = d.outcomes, d.probabilities
    betas = np.exp(np.linspace(math.log(1e-6), math.log(1e6), 4000))
    shift = x.min()
    mgf = (q[None, :] * np.exp(-betas[:, None] * (x[None, :] - shift))).sum(axis=1)
    lower = float(np.max(shift - (np.log(mgf) - math.log(a)) / betas))
    if x.size > 3:
        return lower, math.inf
    i, j = np.meshgrid(np.arange(grid + 1), np.arange(grid + 1), indexing="ij")
    pts = np.stack([i, j, grid - i - j], axis=-1).reshape(-1, 3) / grid
    pts = pts[pts[:, 2] >= 0][:, :x.size]
    pts = pts[np.abs(pts.sum(axis=1) - 1) < 1e-12]
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(pts > 0, pts * np.log(pts / q), 0.0).sum(axis=1)
    ok = kl <= -math.log(a)
    return lower, float((pts[ok] @ x).min()) if ok.any() else math.inf


# --- examples

def test_three_atom_values():
    assert riskcore.var(DIST3, 0.5) == golden.value("dist3.var@0.5")
    assert riskcore.lower_quantile(DIST3, 0.9) == golden.value("dist3.q@0.9")
    assert riskcore.cvar(DIST3, 0.5) == pytest.approx(golden.value("dist3.cvar@0.5"), abs=1e-12)


def test_coin_quantiles_differ():
    assert riskcore.var(COIN, 0.5) == 1.0
    assert riskcore.lower_quantile(COIN, 0.5) == 0.0
    assert riskcore.cvar(COIN, 0.75) == pytest.approx(1 / 3, abs=1e-12)


def test_endpoints():
    assert riskcore.var(DIST3, 1.0) == math.inf
    assert riskcore.lower_quantile(DIST3, 0.0) == -math.inf
    assert riskcore.cvar(DIST3, 0.0) == -50.0
    assert riskcore.cvar(DIST3, 1.0) == pytest.approx(DIST3.mean())
    assert riskcore.evar(DIST3, 0.0).value == -50.0
    assert riskcore.evar(DIST3, 1.0).value == pytest.approx(DIST3.mean())


def test_kl_divergence_value():
    got = riskcore.kl_divergence([1 / 3, 2 / 3], [0.5, 0.5])
    assert got == pytest.approx(golden.value("coin.kl(1/3,2/3 || 1/2,1/2)"), abs=1e-15)
    assert riskcore.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert riskcore.kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_single_atom_is_exact():
    d = riskcore.point_mass(3.7)
    for a in (0.1, 0.7, 1.0):
        assert riskcore.cvar(d, a) == 3.7
        assert riskcore.evar(d, a).value == pytest.approx(3.7, abs=1e-12)


def test_coin_evar_matches_dual():
    res = riskcore.evar(COIN, 0.75, EvarOptions(dual=True))
    assert res.value == pytest.approx(res.dual_value, abs=1e-9)
    assert res.value < 1 / 3 - 1e-3


def test_bad_inputs_are_rejected():
    with pytest.raises(riskcore.NonFiniteOutcome):
        FiniteDistribution([0.0, math.inf], [0.5, 0.5])
    with pytest.raises(riskcore.BadMass):
        FiniteDistribution([0.0, 1.0], [0.5, 0.4])
    with pytest.raises(riskcore.RiskError):
        FiniteDistribution([0.0, 1.0], [1.2, -0.2])
    with pytest.raises(ValueError):
        riskcore.cvar(COIN, 1.5)


def test_dict_round_trip():
    d = FiniteDistribution.from_dict(DIST3.to_dict())
    assert np.array_equal(d.outcomes, DIST3.outcomes)
    assert np.array_equal(d.probabilities, DIST3.probabilities)


def test_mixture_and_consolidate():
    m = riskcore.mixture([COIN, riskcore.point_mass(1.0)], [0.5, 0.5])
    assert list(m.outcomes) == [0.0, 1.0]
    np.testing.assert_allclose(m.probabilities, [0.25, 0.75])


def test_measure_lookup():
    assert riskcore.measure("CVaR") is riskcore.measure("cvar")
    with pytest.raises(ValueError):
        riskcore.measure("median")


# --- properties against the references

@given(distributions(), levels)
def test_var_matches_definition(d, a):
    assert riskcore.var(d, a) == ref_var(d, a)


@given(distributions(), levels)
def test_lower_quantile_matches_definition(d, a):
    assert riskcore.lower_quantile(d, a) == ref_lower_quantile(d, a)


@given(distributions(), levels)
def test_cvar_matches_variational_form(d, a):
    assert riskcore.cvar(d, a) == pytest.approx(ref_cvar(d, a), abs=1e-9)


@given(distributions(), levels)
def test_cvar_matches_greedy_dual(d, a):
    assert riskcore.cvar(d, a) == pytest.approx(riskcore.cvar_dual_value(d, a), abs=1e-9)


@given(distributions(max_atoms=3), open_levels)
def test_evar_between_primal_grid_and_kl_grid(d, a):
    v = riskcore.evar(d, a).value
    lower, upper = ref_evar_bounds(d, a)
    scale = max(1.0, float(np.abs(d.outcomes).max()))
    assert v >= lower - 1e-9 * scale
    assert v <= upper + 1e-9 * scale
    if math.isfinite(upper):
        assert upper - v <= 5e-2 * scale


@given(distributions(), open_levels)
def test_evar_dual_agrees(d, a):
    res = riskcore.evar(d, a, EvarOptions(dual=True))
    scale = max(1.0, float(np.abs(d.outcomes).max()))
    assert res.value == pytest.approx(res.dual_value, abs=1e-6 * scale)


@given(distributions(), levels)
def test_ordering(d, a):
    tol = 1e-8 * max(1.0, float(np.abs(d.outcomes).max()))
    ev = riskcore.evar(d, a).value
    cv = riskcore.cvar(d, a)
    assert d.min() - tol <= ev <= cv + tol
    assert cv <= min(d.mean(), riskcore.var(d, a)) + tol


@given(distributions(), st.lists(levels, min_size=2, max_size=6))
def test_monotone_in_level(d, alphas):
    alphas = sorted(alphas)
    tol = 1e-8 * max(1.0, float(np.abs(d.outcomes).max()))
    for name in ("var", "q", "cvar", "evar"):
        rho = riskcore.measure(name)
        vals = [rho(d, a) for a in alphas]
        assert all(b >= a - tol for a, b in zip(vals, vals[1:])), name


@given(distributions(), open_levels, st.floats(0.1, 10.0), st.floats(-10.0, 10.0))
def test_cash_invariance_and_homogeneity(d, a, lam, c):
    t = d.shift_scale(lam, c)
    for name in ("var", "q", "cvar", "evar"):
        rho = riskcore.measure(name)
        rhs = lam * rho(d, a) + c
        assert rho(t, a) == pytest.approx(rhs, abs=1e-8 * max(1.0, abs(rhs))), name


def test_evar_levels_vectorised_matches_scalar(rng):
    d = riskcore.consolidate(FiniteDistribution(rng.normal(size=7), rng.dirichlet(np.ones(7))))
    lev = np.array([0.05, 0.3, 0.6, 0.95])
    vals, _ = riskcore.evar_levels(d, lev)
    np.testing.assert_allclose(vals, [riskcore.evar(d, a).value for a in lev], atol=1e-12)


def test_evar_closed_form_when_mass_is_large():
    # the lowest atom already carries more than alpha: EVaR is the minimum
    d = FiniteDistribution([0.0, 5.0], [0.6, 0.4])
    assert riskcore.evar(d, 0.5).value == pytest.approx(0.0, abs=1e-9)


def test_evar_just_below_one_stays_below_cvar():
    # small optimal beta: EVaR ~ mean - sqrt(2 var (-log alpha))
    d = FiniteDistribution([-7.0, -3.0, 0.0], [1 / 3, 1 / 3, 1 / 3])
    a = 1.0 - 2.0 ** -53
    var_ = float(d.probabilities @ (d.outcomes - d.mean()) ** 2)
    expected = d.mean() - math.sqrt(2 * var_ * -math.log(a))
    got = riskcore.evar(d, a).value
    assert got <= riskcore.cvar(d, a)
    assert got == pytest.approx(expected, abs=1e-12)
