import numpy as np
import pytest

from riskdp import kernels
from riskdp.kernels import _numpy, backends

BACKENDS = backends()
needs_numba = pytest.mark.skipif("numba" not in BACKENDS, reason="numba not importable")


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("numba", "numpy")
    assert "numpy" in BACKENDS


def test_compositions_are_complete_and_ordered():
    comp = _numpy.compositions(4, 3)
    assert len(comp) == 15
    assert np.all(comp.sum(axis=1) == 4)
    assert [tuple(r) for r in comp] == sorted(tuple(r) for r in comp)


def test_lattice_min_matches_brute_force(rng):
    tables = rng.normal(size=(3, 11))
    cons = np.abs(rng.normal(size=(3, 11)))
    budget = 1.5
    best, arg = np.inf, None
    for i in range(11):
        for j in range(11 - i):
            k = 10 - i - j
            if cons[0, i] + cons[1, j] + cons[2, k] <= budget + 1e-12:
                v = tables[0, i] + tables[1, j] + tables[2, k]
                if v < best:
                    best, arg = v, (i, j, k)
    val, idx, found = _numpy.lattice_min(tables, cons, budget, False, 1e-12)
    assert found == (arg is not None)
    if found:
        assert tuple(idx) == arg
        assert val == pytest.approx(best, abs=1e-14)


def test_lattice_min_reports_empty_set():
    tables = np.zeros((2, 5))
    cons = np.ones((2, 5))
    _, _, found = _numpy.lattice_min(tables, cons, 1.0, True, 1e-12)
    assert not found


@needs_numba
@pytest.mark.parametrize("strict", [False, True])
def test_lattice_min_backends_agree(rng, strict):
    nb = BACKENDS["numba"]
    for _ in range(20):
        parts = int(rng.integers(2, 5))
        tables = np.round(rng.normal(size=(parts, 21)), 1)
        tables[rng.uniform(size=tables.shape) < 0.1] = np.inf
        cons = np.abs(rng.normal(size=(parts, 21)))
        b = float(rng.uniform(0.5, 3.0))
        a = _numpy.lattice_min(tables, cons, b, strict, 1e-12)
        c = nb.lattice_min(tables, cons, b, strict, 1e-12)
        assert a[2] == c[2]
        if a[2]:
            assert a[0] == c[0]
            assert np.array_equal(a[1], c[1])


@needs_numba
def test_tail_integral_backends_agree(rng):
    x = np.sort(rng.normal(size=30))
    q = rng.dirichlet(np.ones(30))
    lev = np.concatenate([[0.0, 1.0], rng.uniform(size=50)])
    np.testing.assert_allclose(_numpy.tail_integral(x, q, lev), BACKENDS["numba"].tail_integral(x, q, lev),
                               rtol=1e-12, atol=1e-12)


@needs_numba
def test_evar_golden_backends_agree(rng):
    x = np.sort(rng.uniform(size=12))
    xn = (x - x[0]) / (x[-1] - x[0])
    q = rng.dirichlet(np.ones(12))
    lev = np.linspace(0.05, 0.95, 7)
    args = (xn, np.log(q), lev, 1e-8, 1e4, 1e12, 1e-10)
    a = _numpy.evar_golden(*args)
    b = BACKENDS["numba"].evar_golden(*args)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(a[2], b[2])


def test_tail_integral_is_cvar_times_level():
    x = np.array([-50.0, 10.0, 100.0])
    q = np.array([0.2, 0.5, 0.3])
    out = _numpy.tail_integral(x, q, np.array([0.0, 0.2, 0.5, 1.0]))
    np.testing.assert_allclose(out, [0.0, -10.0, -7.0, 25.0])


def test_env_flag_selects_numpy():
    import os
    import subprocess
    import sys

    env = dict(os.environ, RISKDP_PURE_NUMPY="1")
    code = ("from riskdp import kernels, counterexamples as ce;"
            "print(kernels.BACKEND, ce.verify_cvar_gap(exact=True)['rhs'])")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, rhs = out.stdout.split()
    assert backend == "numpy"
    assert float(rhs) == pytest.approx(4.0, abs=1e-9)
