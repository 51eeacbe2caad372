import math

import numpy as np
import pytest
from scipy.optimize import brentq

from regional_oc import pmp
from regional_oc.errors import TangentialCrossing
from regional_oc.geometry import RegionLabel
from regional_oc.problem import bundled_problem
from regional_oc.solve import Discretization, solution_from_controls, solve_regional
from regional_oc.tramway import TramwayInstance, optimal

ORACLE = optimal(TramwayInstance(0.0, -1.0, 2.0))
SQRT99 = math.sqrt(99) / 10


def refraction_oracle():
    """Crossing abscissa of the fastest path (0,-1) -> (2,1), speeds 1 and 2."""

    def T(c):
        return math.hypot(c, 1.0) + math.hypot(2.0 - c, 1.0) / 2.0

    grid = np.linspace(0.0, 2.0, 200_001)
    Tg = np.hypot(grid, 1.0) + np.hypot(2.0 - grid, 1.0) / 2.0
    k = int(np.argmin(Tg))

    def dT(c):
        return c / math.hypot(c, 1.0) - (2.0 - c) / (2.0 * math.hypot(2.0 - c, 1.0))

    # polish the grid minimum on the stationarity condition
    c = brentq(dT, grid[k - 1], grid[k + 1], xtol=1e-15)
    s1 = c / math.hypot(c, 1.0)
    s2 = (2.0 - c) / math.hypot(2.0 - c, 1.0)
    return c, T(c), s1 / s2


def test_refraction_oracle_is_snell():
    c, T, ratio = refraction_oracle()
    assert ratio == pytest.approx(0.5, abs=1e-9)
    assert T == pytest.approx(2.0188216, abs=1e-6)


def _oracle_solution(prob, M=20):
    a = ORACLE.a
    th = math.atan2(1.0, a)
    d1 = math.hypot(1.0, a)
    dH = (2.0 - 2 * a) / 10
    arcs = [(np.full((M, 1), th), np.full(M, d1)), (np.zeros((M, 0)), np.full(M, dH)),
            (np.full((M, 1), th), np.full(M, d1))]
    return solution_from_controls(prob, "1-H-2", arcs, Discretization(nodes=M))


# ---------------------------------------------------------------------------
# analytic inputs


def test_oracle_costates(tram_long):
    sol = _oracle_solution(tram_long)
    adj = pmp.reconstruct_adjoint(tram_long, sol)
    assert not adj.abnormal
    for arc in (adj.arcs[0], adj.arcs[2]):
        assert np.allclose(arc.P, ORACLE.P1, atol=1e-9)
    assert np.allclose(adj.arcs[1].P, ORACLE.Q_H, atol=1e-9)
    for arc in adj.arcs:
        assert np.allclose(arc.clock_costate, 0.0, atol=1e-9)


def test_oracle_junctions(tram_long):
    sol = _oracle_solution(tram_long)
    adj = pmp.reconstruct_adjoint(tram_long, sol)
    j1, j2 = pmp.verify_junctions(tram_long, sol, adj, tol_H=1e-9, tol_P=1e-6)
    assert (j1.kind, j2.kind) == ("entry", "exit")
    assert abs(j1.H_gap) <= 1e-9 and abs(j2.H_gap) <= 1e-9
    assert j1.tangential_residual <= 1e-6 and j2.tangential_residual <= 1e-6
    assert j1.nu == pytest.approx(ORACLE.nu1, abs=1e-9)
    assert j2.nu == pytest.approx(ORACLE.nu2, abs=1e-9)
    assert j1.nu == pytest.approx(j1.nu_direct, abs=1e-9)
    # hand evaluation of the entry formula
    assert (0.01 - 1.0) / SQRT99 == pytest.approx(ORACLE.nu1, abs=1e-12)


# ---------------------------------------------------------------------------
# solver outputs


def test_solved_costates(long_verify):
    adj = long_verify.adjoint
    assert np.allclose(adj.arcs[0].P, (0.1, SQRT99), atol=2e-3)
    assert np.allclose(adj.arcs[1].P, (0.1, 0.0), atol=2e-3)


def test_solved_junctions(long_verify):
    j1, j2 = long_verify.junctions
    assert all(j.passed for j in long_verify.junctions)
    assert abs(j1.H_gap) <= 2e-3 and abs(j2.H_gap) <= 2e-3
    assert abs(j1.clock_gap) <= 1e-3 and abs(j2.clock_gap) <= 1e-3
    assert j1.tangential_residual <= 1e-3 and j2.tangential_residual <= 1e-3
    assert j1.nu == pytest.approx(-0.99499, abs=2e-3)
    assert j2.nu == pytest.approx(0.99499, abs=2e-3)


def test_arc_conditions(long_verify, refraction_verify, identical_verify):
    for rep in (long_verify, refraction_verify, identical_verify):
        for a in rep.arcs:
            assert a.H_deviation <= 2e-3
            assert -1e-9 <= a.max_gap <= 2e-3
            assert a.passed
        assert rep.passed


def test_on_interface_costate_tangent(long_verify, tram_long):
    arc = long_verify.adjoint.arcs[1]
    assert arc.label == RegionLabel.H
    for x, P in zip(arc.X, arc.P):
        assert abs(P @ tram_long.iface.normal(x)) <= 1e-6


def test_identical_regions_no_jump(identical_verify):
    (j,) = identical_verify.junctions
    assert j.kind == "crossing"
    assert j.jump_norm <= 1e-6
    assert j.nu == pytest.approx(0.0, abs=1e-6)


def test_refraction_snell(refraction_verify, refraction_sol):
    c, T, _ = refraction_oracle()
    (j,) = refraction_verify.junctions
    assert j.snell_ratio == pytest.approx(0.5, abs=1e-4)
    assert refraction_sol.switch_points[0][0] == pytest.approx(c, abs=1e-4)
    assert refraction_sol.cost == pytest.approx(T, abs=1e-5)


def test_tramway_sensitivity(long_verify):
    s = long_verify.sensitivity
    assert s.passed
    assert np.allclose(-np.asarray(s.grad_x0), (0.1, SQRT99), atol=1e-3)
    assert np.allclose(s.grad_x0, -np.asarray(s.P_t0), atol=1e-3)
    assert np.max(np.abs(s.translation_sum)) <= 1e-6


def test_fixed_horizon_sensitivity():
    prob = bundled_problem("bolza_energy")
    rs = solve_regional(prob, 2)
    assert str(rs.best.word) == "1-2"
    assert rs.U == pytest.approx(1.25, abs=1e-4)
    rep = pmp.verify(prob, rs.best)
    s = rep.sensitivity
    assert rep.passed
    # U(tf) = |xf - x0|^2 / (2 (tf - t0)) for the straight energy-optimal path
    assert s.dU_dtf == pytest.approx(-0.625, abs=1e-3)
    assert s.dU_dtf == pytest.approx(-s.H_tf, abs=1e-3)
    assert s.dU_dt0 == pytest.approx(s.H_t0, abs=1e-3)


def test_tangential_crossing():
    prob = bundled_problem("tangential")
    M = 20
    arcs = [(np.zeros((M, 1)), np.ones(M)), (np.full((M, 1), math.pi / 2), np.ones(M))]
    sol = solution_from_controls(prob, "1-2", arcs, Discretization(nodes=M))
    assert sol.residual <= 1e-12
    with pytest.raises(TangentialCrossing):
        pmp.reconstruct_adjoint(prob, sol)
    rep = pmp.verify(prob, sol)
    assert not rep.passed
    assert "TangentialCrossing" in rep.error
