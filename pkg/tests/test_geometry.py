import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regional_oc import expr as ex
from regional_oc.errors import DegenerateNormal, NotOnInterface
from regional_oc.geometry import Interface, RegionLabel, check_tangency, classify, tangent_project

TRAM = Interface(ex.parse("x2"), 2, 1e-9)
DIAG = Interface(ex.parse("x1 + x2"), 2, 1e-9)
CIRCLE = Interface(ex.parse("x1^2 + x2^2 - 1"), 2, 1e-9)


def test_classify_examples():
    assert classify(TRAM, (0, -1)) == RegionLabel.R1
    assert classify(TRAM, (5, 0)) == RegionLabel.H
    assert classify(TRAM, (0, 1)) == RegionLabel.R2
    assert classify(TRAM, (0, 5e-10)) == RegionLabel.H


def test_label_order_and_text():
    assert RegionLabel.R1 < RegionLabel.H < RegionLabel.R2
    assert [RegionLabel.parse(s) for s in ("1", "H", "2")] == [RegionLabel.R1, RegionLabel.H, RegionLabel.R2]
    assert RegionLabel.H.text == "H"


def test_tangent_project_examples():
    assert np.allclose(tangent_project(TRAM, (0, 0), (3, 4)), (3, 0), atol=0)
    assert np.allclose(tangent_project(TRAM, (0, 0), (2, 0)), (2, 0), atol=0)
    assert np.allclose(tangent_project(DIAG, (1, -1), (1, 0)), (0.5, -0.5), atol=1e-15)


def test_tangent_project_off_interface():
    with pytest.raises(NotOnInterface):
        tangent_project(TRAM, (0, 0.5), (1, 1))


def test_degenerate_normal():
    cone = Interface(ex.parse("x1^2 - x2^2"), 2, 1e-9)
    with pytest.raises(DegenerateNormal):
        cone.normal((0, 0))


def test_tangency_examples():
    samples = [((t, 0.0), []) for t in np.linspace(-2, 2, 9)]
    assert check_tangency(TRAM, [ex.parse("10"), ex.parse("0")], samples).passed
    bad = check_tangency(TRAM, [ex.parse("0"), ex.parse("1")], samples)
    assert not bad.passed and bad.max_residual == pytest.approx(1.0)
    circ = [((math.cos(t), math.sin(t)), []) for t in np.linspace(0, 6, 13)]
    rot = check_tangency(CIRCLE, [ex.parse("x2"), ex.parse("-x1")], circ)
    assert rot.passed and rot.max_residual <= 1e-15


def test_snap_onto_circle():
    y = CIRCLE.snap((1.1, 0.2))
    assert abs(y[0] ** 2 + y[1] ** 2 - 1) <= 1e-14


_pt = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(_pt, _pt)
def test_classify_is_a_partition(a, b):
    lab = classify(DIAG, (a, b))
    s = a + b
    if abs(s) <= 1e-9:
        assert lab == RegionLabel.H
    else:
        assert lab == (RegionLabel.R1 if s < 0 else RegionLabel.R2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * math.pi), _pt, _pt, _pt, _pt)
def test_projection_idempotent_and_symmetric(t, v1, v2, w1, w2):
    x = CIRCLE.snap((math.cos(t), math.sin(t)))
    v, w = np.array([v1, v2]), np.array([w1, w2])
    Pv = CIRCLE.tangent_project(x, v)
    Pw = CIRCLE.tangent_project(x, w)
    assert np.allclose(CIRCLE.tangent_project(x, Pv), Pv, atol=1e-12)
    assert abs(Pv @ w - v @ Pw) <= 1e-12
    assert abs(Pv @ CIRCLE.gradient(x)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(_pt, _pt, _pt)
def test_tram_projection_zeros_second_coordinate(s, v1, v2):
    out = TRAM.tangent_project((s, 0.0), (v1, v2))
    assert out[0] == v1 and out[1] == 0.0
