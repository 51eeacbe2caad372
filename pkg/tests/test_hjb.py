import copy
import json

import numpy as np
import pytest

from regional_oc.errors import NonConvergence, ProblemError
from regional_oc.geometry import RegionLabel
from regional_oc.hjb import GridValueFunction, compare, solve_grid
from regional_oc.problem import BUNDLED, problem_from_dict
from regional_oc.solve import RegionalSolution

TRAM_DOMAIN = (-1, 3, -2, 2)


def test_unit_speed_distance(identical):
    h, r = 0.05, 0.1
    g = solve_grid(identical, (-1, 3, -1, 3), h, r)
    X1, X2 = np.meshgrid(g.x1, g.x2)
    exact = np.maximum(0.0, np.hypot(X1 - 1.0, X2 - 1.0) - r)
    assert np.max(np.abs(g.values - exact)) <= 2 * h
    assert np.all(g.values >= 0)
    inside = np.hypot(X1 - 1.0, X2 - 1.0) <= r
    assert inside.any() and np.all(g.values[inside] == 0)


def test_tramway_value_at_start(tram_long):
    r = 0.05
    g = solve_grid(tram_long, TRAM_DOMAIN, 0.02, r)
    assert g(tram_long.x0) == pytest.approx(2.18997 - r, abs=5e-2)


def test_rail_nodes_ride_the_tram(tram_long):
    r = 0.05
    prob = tram_long.with_endpoints(xf=(2.0, 0.0))
    g = solve_grid(prob, TRAM_DOMAIN, 0.02, r)
    j = int(round((0.0 - TRAM_DOMAIN[2]) / 0.02))
    assert g.labels[j, 0] == int(RegionLabel.H)
    # exact transport along the rail; the ball is resolved to one cell
    for x in (-0.5, 0.0, 1.0):
        assert g((x, 0.0)) == pytest.approx((2.0 - x - r) / 10, abs=0.02 / 10 + 1e-12)


def test_tram_option_cannot_hurt(tram_long):
    with_rail = solve_grid(tram_long, TRAM_DOMAIN, 0.05, 0.1)
    without = solve_grid(tram_long, TRAM_DOMAIN, 0.05, 0.1, interface=False)
    on = with_rail.labels == int(RegionLabel.H)
    assert on.any()
    assert np.all(with_rail.values <= without.values + 1e-12)
    assert with_rail(tram_long.x0) < without(tram_long.x0) - 0.1


def test_sweeps_only_lower_values(refraction):
    early = solve_grid(refraction, TRAM_DOMAIN, 0.1, 0.15, tol=0.5)
    full = solve_grid(refraction, TRAM_DOMAIN, 0.1, 0.15)
    reached = np.isfinite(early.values)
    assert np.all(full.values[reached] <= early.values[reached])
    assert full.sweeps > early.sweeps


def test_jacobi_same_fixed_point(refraction):
    gs = solve_grid(refraction, TRAM_DOMAIN, 0.1, 0.15)
    jac = solve_grid(refraction, TRAM_DOMAIN, 0.1, 0.15, jacobi=True)
    assert np.max(np.abs(gs.values - jac.values)) <= 1e-8


def test_sweep_cap(refraction):
    with pytest.raises(NonConvergence):
        solve_grid(refraction, TRAM_DOMAIN, 0.1, 0.15, max_sweeps=2)


def test_csv_round_trip(tmp_path, refraction):
    g = solve_grid(refraction, TRAM_DOMAIN, 0.2, 0.25)
    path = tmp_path / "v.csv"
    g.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# x1_min x1_max x2_min x2_max h"
    back = GridValueFunction.from_csv(path)
    assert back.domain == g.domain and back.h == g.h
    assert np.allclose(back.values, g.values, rtol=1e-11, atol=0)


def test_rejects_non_planar_and_bolza():
    doc = json.loads((BUNDLED / "tramway_long.json").read_text())
    d3 = copy.deepcopy(doc)
    d3["state_dim"] = 3
    for key in ("1", "2"):
        d3["regions"][key]["f"].append("0")
    d3["regions"]["H"]["f"].append("0")
    d3["boundary"]["x0"].append(0)
    d3["boundary"]["xf"].append(0)
    with pytest.raises(ProblemError, match="2-D"):
        solve_grid(problem_from_dict(d3), TRAM_DOMAIN, 0.1, 0.1)
    bolza = problem_from_dict(json.loads((BUNDLED / "bolza_energy.json").read_text()))
    with pytest.raises(ProblemError, match="minimum-time"):
        solve_grid(bolza, TRAM_DOMAIN, 0.1, 0.1)


def test_domain_must_fit_the_spacing(tram_long):
    with pytest.raises(ValueError):
        solve_grid(tram_long, (-1, 3, -2, 2), 0.03, 0.05)


def test_compare_short_regime(tram_short, short_regional):
    g = solve_grid(tram_short, TRAM_DOMAIN, 0.02, 0.05)
    cmp = compare(g, short_regional, tram_short, 0.05)
    assert cmp.correction == pytest.approx(0.05, rel=1e-6)
    assert cmp.passed and cmp.discrepancy <= 5e-2


def test_compare_uses_terminal_speed(refraction, refraction_sol):
    g = solve_grid(refraction, TRAM_DOMAIN, 0.04, 0.05)
    cmp = compare(g, RegionalSolution(refraction_sol, [refraction_sol], refraction_sol.cost), refraction, 0.05)
    assert cmp.correction == pytest.approx(0.025, rel=1e-6)
    assert cmp.discrepancy <= 5e-2
