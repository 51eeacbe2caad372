import math

import numpy as np
import pytest

from regional_oc import expr as ex
from regional_oc.errors import InvalidWord
from regional_oc.lift import build, clock_nodes, pullback_time
from regional_oc.problem import bundled_problem
from regional_oc.solve import Discretization, integrate_arc, solution_from_controls
from regional_oc.tramway import TramwayInstance, cost_of_a


def test_dimensions(tram_long):
    lp = build(tram_long, "1-H-2")
    assert lp.lifted_dim == 9
    assert lp.n_junction_blocks == 2
    assert lp.n_interface_constraints == 2
    assert [j.kind for j in lp.junctions] == ["entry", "exit"]
    lp = build(tram_long, "1-2")
    assert lp.lifted_dim == 6 and lp.n_junction_blocks == 1 and lp.n_interface_constraints == 1
    assert lp.junctions[0].kind == "crossing"
    assert lp.n_controls(20) == 2 * 20 * 2


def test_single_arc_dimension():
    prob = bundled_problem("tramway_long").with_endpoints(xf=(2.0, -0.5))
    lp = build(prob, "1")
    assert lp.lifted_dim == 3 and lp.n_junction_blocks == 0


def test_invalid_word_rejected(tram_long):
    with pytest.raises(InvalidWord):
        build(tram_long, "1-1-2")
    with pytest.raises(InvalidWord):
        build(tram_long, "2-H-1")


def test_pullback_examples():
    w = np.full(10, 0.7)
    for tau in (0.0, 0.25, 0.5, 1.0):
        assert pullback_time(1.5, w, tau) == pytest.approx(1.5 + 0.7 * tau, abs=1e-15)
    assert pullback_time(3.0, [0.2, 5.0, 1.0], 0.0) == 3.0
    with pytest.raises(ValueError):
        pullback_time(0.0, w, 1.5)


def test_pullback_is_increasing():
    rng = np.random.default_rng(0)
    w = rng.uniform(1e-3, 5.0, size=17)
    taus = np.linspace(0, 1, 301)
    t = [pullback_time(0.0, w, s) for s in taus]
    assert np.all(np.diff(t) > 0)
    assert t[-1] == pytest.approx(clock_nodes(0.0, w)[-1])


def test_solved_entry_time(long_regional):
    best = long_regional.best
    a = 1 / (3 * math.sqrt(11))
    assert best.arcs[0].t_end == pytest.approx(math.hypot(1.0, a), abs=1e-3)


def _straight_tramway(prob, a, M, rng=None):
    """Controls of the walk-ride-walk path with offset ``a`` (optionally with
    random positive clock profiles of the same total duration)."""
    x0, x1 = prob.x0[0], prob.xf[0]
    d1 = math.hypot(1.0, a)
    dH = (x1 - x0 - 2 * a) / 10
    theta1, theta2 = math.atan2(1, a), math.atan2(1, a)

    def clocks(d):
        if rng is None:
            return np.full(M, d)
        w = rng.uniform(0.2, 2.0, size=M)
        return w * d / w.mean()

    return [
        (np.full((M, 1), theta1), clocks(d1)),
        (np.zeros((M, 0)), clocks(dH)),
        (np.full((M, 1), theta2), clocks(d1)),
    ]


@pytest.mark.parametrize("a", [0.0, 0.1, 1 / (3 * math.sqrt(11)), 0.6])
@pytest.mark.parametrize("seed", [None, 1, 2])
def test_lifted_cost_equals_original(tram_long, a, seed):
    rng = None if seed is None else np.random.default_rng(seed)
    arcs = _straight_tramway(tram_long, a, 12, rng)
    sol = solution_from_controls(tram_long, "1-H-2", arcs, Discretization(nodes=12))
    inst = TramwayInstance(0.0, -1.0, 2.0)
    assert sol.residual <= 1e-12
    assert abs(sol.cost - cost_of_a(inst, a)) <= 1e-8


def test_lifted_cost_with_control_dependent_running_cost():
    prob = bundled_problem("bolza_energy")
    # straight segment split at the crossing y = 0; speed (0.5, 1)
    M = 8
    rng = np.random.default_rng(5)
    arcs = []
    for _ in range(2):
        w = rng.uniform(0.3, 3.0, size=M)
        w *= 1.0 / w.mean()
        arcs.append((np.tile([0.5, 1.0], (M, 1)), w))
    sol = solution_from_controls(prob, "1-2", arcs, Discretization(nodes=M))
    assert sol.residual <= 1e-12
    assert abs(sol.cost - 1.25) <= 1e-8


def test_dilated_arc_reproduces_original_time():
    f = (ex.parse("x2"), ex.parse("-x1"))
    c = 2 * math.pi
    M, S = 20, 8
    lifted = integrate_arc(f, (1.0, 0.0), np.zeros((M, 0)), np.full(M, c), S, 1.0)
    orig = integrate_arc(f, (1.0, 0.0), np.zeros((M, 0)), np.ones(M), S, c)
    assert np.max(np.abs(lifted.Y - orig.Y)) <= 1e-12
    assert np.allclose(lifted.Y[-1], (1.0, 0.0), atol=1e-6)
