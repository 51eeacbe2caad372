import math

import numpy as np
import pytest

from regional_oc import expr as ex
from regional_oc.errors import AllStructuresInfeasible, BlowUp, EvalError
from regional_oc.geometry import Interface
from regional_oc.lift import build
from regional_oc.problem import bundled_problem
from regional_oc.solve import (
    CONVERGED,
    INFEASIBLE,
    Discretization,
    Shooting,
    integrate_arc,
    solve_regional,
    solve_structure,
)
from regional_oc.structures import StructureWord

A_STAR = 1 / (3 * math.sqrt(11))
F_UNIT = (ex.parse("cos(a1)"), ex.parse("sin(a1)"))


def test_integrate_constant_dynamics():
    s = integrate_arc(F_UNIT, (0, 0), np.zeros((10, 1)), np.ones(10))
    assert np.allclose(s.Y[-1], (1, 0), atol=1e-12, rtol=0)


def test_integrate_interface_dilation():
    iface = Interface(ex.parse("x2"), 2)
    s = integrate_arc((ex.parse("10"), ex.parse("0")), (0, 0), np.zeros((5, 0)), np.full(5, 0.5), iface=iface)
    assert np.allclose(s.Y[-1], (5, 0), atol=1e-12, rtol=0)


def test_integrate_harmonic_period():
    f = (ex.parse("x2"), ex.parse("-x1"))
    s = integrate_arc(f, (1, 0), np.zeros((20, 0)), np.ones(20), 8, 2 * math.pi)
    assert np.linalg.norm(s.Y[-1] - (1, 0)) <= 1e-6


def test_integrate_errors():
    with pytest.raises(EvalError):
        integrate_arc((ex.parse("1/x1"),), (0.0,), np.zeros((4, 0)), np.ones(4))
    with pytest.raises(BlowUp):
        integrate_arc((ex.parse("x1^2"),), (10.0,), np.zeros((40, 0)), np.ones(40), 4, 5.0)


def test_discretization_invariants():
    with pytest.raises(ValueError):
        Discretization(nodes=3)
    with pytest.raises(ValueError):
        Discretization(substeps=1)


def test_tramway_long_structures(long_regional):
    by_word = {str(s.word): s for s in long_regional.all}
    assert by_word["1-H-2"].status == CONVERGED
    assert by_word["1-H-2"].cost == pytest.approx(2.18997, abs=1e-2)
    assert by_word["1-H-2"].switch_points[0][0] == pytest.approx(A_STAR, abs=5e-3)
    assert by_word["1-2"].cost == pytest.approx(2 * math.sqrt(2), abs=1e-2)
    assert str(long_regional.best.word) == "1-H-2"


def test_tramway_short_selection(short_regional):
    assert str(short_regional.best.word) == "1-2"
    assert short_regional.U == pytest.approx(2 * math.sqrt(1.0025), abs=1e-2)


def test_min_property(long_regional, short_regional):
    for rs in (long_regional, short_regional):
        for s in rs.all:
            if s.status == CONVERGED:
                assert rs.U <= s.cost


def test_converged_junction_residuals(long_regional, tram_long):
    s = long_regional.best
    assert s.residual <= 1e-6
    for k in range(s.K - 1):
        assert np.linalg.norm(s.arcs[k].nodes[-1] - s.arcs[k + 1].nodes[0]) <= 1e-6
        assert abs(tram_long.iface.value(s.arcs[k].nodes[-1])) <= 1e-6
    assert np.linalg.norm(s.arcs[-1].nodes[-1] - tram_long.xf) <= 1e-6


def test_best_trajectory_reclassifies(long_regional, tram_long):
    best = long_regional.best
    iface = tram_long.iface
    for k, arc in enumerate(best.arcs):
        M = len(arc.clocks)
        for n, y in enumerate(arc.nodes):
            if (k > 0 and n <= 2) or (k < best.K - 1 and n >= M - 2):
                continue
            assert iface.classify(y) == arc.label


def test_structure_reproducible(tram_long):
    disc = Discretization(n_starts=2)
    a = solve_structure(tram_long, "1-H-2", disc)
    b = solve_structure(tram_long, "1-H-2", disc)
    assert repr(a.cost) == repr(b.cost)
    assert np.array_equal(a.x, b.x)


def test_refinement_does_not_raise_cost(tram_long):
    coarse = solve_structure(tram_long, "1-H-2", Discretization(nodes=10))
    fine = solve_structure(tram_long, "1-H-2", Discretization(nodes=20))
    assert fine.cost <= coarse.cost + 1e-6


def test_identical_regions_straight_line(identical_sol):
    assert identical_sol.status == CONVERGED
    assert identical_sol.cost == pytest.approx(math.sqrt(5), abs=1e-6)


def test_single_region_word():
    prob = bundled_problem("tramway_long").with_endpoints(xf=(2.0, -0.5))
    sol = solve_structure(prob, StructureWord.parse("1"), Discretization(n_starts=2))
    assert sol.status == CONVERGED
    assert sol.cost == pytest.approx(math.hypot(2.0, 0.5), abs=1e-6)


def test_all_infeasible_raises():
    prob = bundled_problem("tramway_long")
    # a far target and a starved optimiser: no start gets near feasibility
    disc = Discretization(n_starts=1, max_outer=2, inner_maxiter=5, nodes=4)
    with pytest.raises(AllStructuresInfeasible) as info:
        solve_regional(prob.with_endpoints(xf=(2000.0, 1.0)), 2, disc)
    assert all(s.status == INFEASIBLE for s in info.value.solutions)


def test_gradient_matches_finite_differences(tram_long):
    lp = build(tram_long, "1-H-2")
    sh = Shooting(lp, Discretization(nodes=6))
    rng = np.random.default_rng(1)
    x = sh.initial_guess(3, sh.tf_guess(rng), rng)
    lam = rng.normal(size=sh.n_cons)
    _, g = sh.al_value_and_grad(x, lam, 10.0)
    fd = sh.fd_full(x, lam, 10.0)
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))
