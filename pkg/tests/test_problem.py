import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regional_oc.errors import NonTangentCostate, NotOnInterface, ProblemError
from regional_oc.geometry import RegionLabel
from regional_oc.problem import (
    BUNDLED,
    ControlSet,
    ProblemFileError,
    hamiltonian_interface,
    hamiltonian_region,
    loads_problem,
    maximize_hamiltonian,
    pre_hamiltonian,
    problem_from_dict,
)

Q1 = np.array([0.1, math.sqrt(99) / 10])


@pytest.fixture(scope="module")
def doc():
    return json.loads((BUNDLED / "tramway_long.json").read_text())


def test_region_hamiltonian_examples(tram_long):
    h = hamiltonian_region(tram_long, RegionLabel.R1, (0, -1), Q1, -1.0)
    assert h.value == pytest.approx(0.0, abs=1e-12)
    assert h.argmax_control[0] == pytest.approx(math.atan2(Q1[1], Q1[0]), abs=1e-8)
    assert hamiltonian_region(tram_long, "1", (0, -1), (0, 0), -1.0).value == -1.0
    h = hamiltonian_region(tram_long, "2", (0, 1), (1, 0), 0.0)
    assert h.value == pytest.approx(1.0, abs=1e-14)
    assert h.argmax_control[0] == pytest.approx(0.0, abs=1e-8)


def test_interface_hamiltonian_examples(tram_long):
    assert hamiltonian_interface(tram_long, (0.3, 0), (0.1, 0), -1.0).value == pytest.approx(0.0, abs=1e-15)
    assert hamiltonian_interface(tram_long, (0.3, 0), (0, 0), -1.0).value == -1.0
    assert hamiltonian_interface(tram_long, (0.3, 0), (1, 0), 0.0).value == 10.0
    with pytest.raises(NotOnInterface):
        hamiltonian_interface(tram_long, (0.3, 0.1), (0.1, 0), -1.0)
    with pytest.raises(NonTangentCostate):
        hamiltonian_interface(tram_long, (0.3, 0), (0.1, 0.2), -1.0)


def test_hamiltonian_on_interface_label_rejected(tram_long):
    with pytest.raises(ValueError):
        hamiltonian_region(tram_long, "H", (0, 0), (0.1, 0), -1.0)


def test_argmax_inside_box(refraction):
    reg = refraction.regions[RegionLabel.H]
    h = maximize_hamiltonian(reg, (0.5, 0), (3.0, 0), -1.0)
    assert h.argmax_control[0] == 1.0
    assert h.value == pytest.approx(2.0)


_q = st.floats(-2, 2, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(_q, _q, st.floats(-1, 0))
def test_max_dominates_random_controls(tram_long, q1, q2, p0):
    reg = tram_long.regions[RegionLabel.R1]
    h = maximize_hamiltonian(reg, (0, -1), (q1, q2), p0)
    rng = np.random.default_rng(7)
    for a in rng.uniform(-math.pi, math.pi, size=200):
        assert h.value >= pre_hamiltonian(reg, (0, -1), (q1, q2), p0, [a]) - 1e-12


def test_max_dominates_2d_box(tmp_path):
    from regional_oc.problem import bundled_problem

    reg = bundled_problem("bolza_energy").regions[RegionLabel.R1]
    q = np.array([0.7, -1.9])
    h = maximize_hamiltonian(reg, (0, -1), q, -1.0)
    # unconstrained maximiser a = q lies inside the box
    assert np.allclose(h.argmax_control, q, atol=1e-7)
    rng = np.random.default_rng(3)
    for a in rng.uniform(-3, 3, size=(1000, 2)):
        assert h.value >= pre_hamiltonian(reg, (0, -1), q, -1.0, a) - 1e-12


@settings(max_examples=25, deadline=None)
@given(_q, _q, st.floats(-1, 0), st.floats(0.1, 10))
def test_positive_homogeneity(tram_long, q1, q2, p0, lam):
    reg = tram_long.regions[RegionLabel.R2]
    h1 = maximize_hamiltonian(reg, (0, 1), (q1, q2), p0)
    h2 = maximize_hamiltonian(reg, (0, 1), (lam * q1, lam * q2), lam * p0)
    assert h2.value == pytest.approx(lam * h1.value, abs=1e-9 * max(1, lam))
    if math.hypot(q1, q2) > 1e-3:
        d = (h1.argmax_control[0] - h2.argmax_control[0] + math.pi) % (2 * math.pi) - math.pi
        assert abs(d) <= 1e-6


def test_control_set():
    cs = ControlSet((-1.0, 0.0), (1.0, 2.0))
    assert cs.dim == 2
    assert np.allclose(cs.center, [0, 1])
    assert len(cs.corners()) == 4
    assert cs.sample_grid(64).shape == (64, 2)
    assert ControlSet((-1.0,), (1.0,)).sample_grid(64).shape == (64, 1)
    with pytest.raises(ValueError):
        ControlSet((1.0,), (0.0,))


def test_loader_records_labels(tram_long):
    assert tram_long.x0_label == RegionLabel.R1
    assert tram_long.xf_label == RegionLabel.R2
    assert tram_long.free_tf
    assert tram_long.speed_bound() == 10


def test_x0_equal_xf_rejected(doc):
    d = copy.deepcopy(doc)
    d["boundary"]["xf"] = [0, -1]
    with pytest.raises(ProblemError):
        problem_from_dict(d)


def test_min_time_requires_unit_cost_and_free_tf(doc):
    d = copy.deepcopy(doc)
    d["regions"]["1"]["l"] = "2"
    with pytest.raises(ProblemError):
        problem_from_dict(d)
    d = copy.deepcopy(doc)
    d["boundary"]["tf"] = 3
    with pytest.raises(ProblemError):
        problem_from_dict(d)


def test_abs_rejected_in_dynamics(doc):
    d = copy.deepcopy(doc)
    d["regions"]["2"]["f"] = ["abs(cos(a1))", "sin(a1)"]
    with pytest.raises(ProblemError):
        problem_from_dict(d)


def test_sign_convention_checked(doc):
    d = copy.deepcopy(doc)
    d["interface"]["psi"] = "-x2"
    with pytest.raises(ProblemError, match="convention"):
        problem_from_dict(d)


def test_non_tangent_interface_dynamics(doc):
    d = copy.deepcopy(doc)
    d["regions"]["H"]["f"] = ["10", "1"]
    with pytest.raises(ProblemError, match="tangent"):
        problem_from_dict(d)


def test_positioned_errors(doc):
    text = json.dumps(doc, indent=2).replace('"sin(a1)"', '"sin(a1))"', 1)
    with pytest.raises(ProblemFileError) as info:
        loads_problem(text)
    line = text.splitlines()[info.value.line - 1]
    assert "sin(a1))" in line
    assert line[info.value.column - 1] == ")"
    with pytest.raises(ProblemFileError) as info:
        loads_problem('{"state_dim": 2,\n  "mode": }')
    assert (info.value.line, info.value.column) == (2, 11)
    assert "line 2" in str(info.value)


def test_regions_must_be_complete(doc):
    d = copy.deepcopy(doc)
    del d["regions"]["H"]
    with pytest.raises(ProblemError):
        problem_from_dict(d)
