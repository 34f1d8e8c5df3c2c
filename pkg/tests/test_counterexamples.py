import io

import numpy as np
import pytest

from riskdp import counterexamples as ce
from riskdp import golden


def test_cvar_gap_exact_and_grid():
    out = ce.verify_cvar_gap(exact=True)
    assert out["rhs"] == pytest.approx(4.0, abs=1e-9)
    assert out["zeta_s1"] == pytest.approx(0.6, abs=1e-9)
    for h in (1e-2, 1e-3, 1e-4):
        assert ce.verify_cvar_gap(h=h)["gap"] == pytest.approx(4.0, abs=2e-2)


def test_evar_gap():
    out = ce.verify_evar_gap()
    assert out["cvar"] == pytest.approx(1 / 3, abs=1e-12)
    assert out["kl_xi_star"] < out["kl_radius"]
    assert out["ni_value"] >= 1 / 3 - 1e-9


def test_m3_at_half():
    rows = ce.sweep_alpha(ce.M3, [0.5], h=1e-4)
    r = rows[0]
    assert r.oracle_value == pytest.approx(golden.value("m3.oracle_cvar@0.5"), abs=1e-9)
    assert r.oracle_action == "a3"
    assert r.decomposition_value == pytest.approx(golden.value("m3.cvar_opt@0.5"), abs=2e-2)
    assert r.realized_value == pytest.approx(golden.value("m3.realized@0.5"), abs=1e-9)
    assert r.suboptimal


def test_a3_region_endpoints():
    (lo, hi), = ce.optimal_region(ce.M3, "a3")
    assert lo == pytest.approx(golden.value("m3.a3_region_lo"), abs=golden.tol("m3.a3_region_lo"))
    assert hi == pytest.approx(golden.value("m3.a3_region_hi"), abs=golden.tol("m3.a3_region_hi"))


def test_a3_never_greedy_and_rows_ordered():
    rows = ce.sweep_alpha(ce.M3, np.linspace(0, 1, 41), exact=True)
    assert all(r.decomposition_action != "a3" for r in rows)
    for r in rows:
        assert r.realized_value <= r.oracle_value + 1e-9
        assert r.oracle_value <= r.decomposition_value + 1e-9


def test_suboptimal_region_grows_with_stake():
    alphas = np.linspace(0, 1, 41)
    regions = [ce.suboptimal_region(ce.CounterexampleSpec("M3", M=M), alphas, tol=1e-4) for M in (600, 1200, 2400)]
    assert all(regions)
    assert ce.region_contains(regions[1], regions[0], tol=1e-3)
    assert ce.region_contains(regions[2], regions[1], tol=1e-3)


def test_sweep_csv_format():
    rows = ce.sweep_alpha(ce.M3, [0.0, 0.5], exact=True)
    buf = io.StringIO()
    ce.write_sweep_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(ce.CSV_COLUMNS)
    assert lines[2].startswith("0.5,50,a3,")


def test_spec_validation():
    with pytest.raises(ValueError):
        ce.CounterexampleSpec("M4")
    with pytest.raises(ValueError):
        ce.CounterexampleSpec("M3", p_s2=1.0)
    with pytest.raises(ValueError):
        ce.CounterexampleSpec("M3", M=-1)


def test_grid_intervals_and_bisection():
    assert ce.grid_intervals([0, 1, 2, 3, 4], [False, True, True, False, True]) == [(1, 2), (4, 4)]
    assert ce.bisect_boundary(lambda x: x > 0.3, 0.0, 1.0, tol=1e-9) == pytest.approx(0.3, abs=1e-8)
    with pytest.raises(ValueError):
        ce.bisect_boundary(lambda x: True, 0.0, 1.0)


def test_property_violation_carries_values():
    e = ce.PropertyViolation("broken", lhs=1.0)
    assert isinstance(e, AssertionError)
    assert e.values == {"lhs": 1.0}
