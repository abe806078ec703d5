import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eegtok.nn.gradcheck import grad_check
from eegtok.phase_loss import (
    LANDSCAPE_COLUMNS,
    amplitude_loss,
    amplitude_mask,
    chord_identity,
    circular_phase_loss,
    direct_phase_loss,
    landscape_grid,
    loss_landscape,
    total_loss,
    unit_circle_angle_gradient,
)

EPS = 0.01
PI = math.pi
angles = st.floats(-PI, PI, exclude_min=True)


def test_amplitude_loss_examples():
    a = np.arange(6.0).reshape(2, 3)
    v, g = amplitude_loss(a, a)
    assert v == 0 and np.all(g == 0)
    v, g = amplitude_loss([2.0], [1.0])
    assert v == 1.0 and g.tolist() == [2.0]


def test_amplitude_loss_shape_mismatch():
    with pytest.raises(ValueError):
        amplitude_loss(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("seed", range(100))
def test_amplitude_loss_finite_differences(seed):
    rng = np.random.default_rng(seed)
    target = rng.standard_normal((4, 9))
    inputs = {"pred": rng.standard_normal((4, 9))}

    def fn(x):
        v, g = amplitude_loss(x["pred"], target)
        return v, {"pred": g}

    assert grad_check(fn, inputs) < 1e-6


def test_direct_loss_boundary_value_and_gradient():
    v, g = direct_phase_loss([PI - EPS], [-PI + EPS])
    assert v == pytest.approx((2 * PI - 2 * EPS) ** 2, rel=1e-9)
    assert v == pytest.approx(39.2275, abs=1e-4)
    assert abs(g[0]) == pytest.approx(4 * PI - 4 * EPS, rel=1e-9)
    assert abs(g[0]) == pytest.approx(12.5264, abs=1e-4)
    assert direct_phase_loss([0.3], [0.3])[0] == 0


def test_direct_loss_mask():
    v, g = direct_phase_loss([1.0, 2.0], [0.0, 0.0], mask=np.array([True, False]))
    assert v == 1.0 and g.tolist() == [2.0, 0.0]


def test_circular_loss_boundary_value():
    s, c = math.sin(PI - EPS), math.cos(PI - EPS)
    ls, lc, _, _ = circular_phase_loss([s], [c], [-PI + EPS])
    assert ls + lc == pytest.approx(2 - 2 * math.cos(2 * EPS), rel=1e-9)
    assert ls + lc == pytest.approx(4 * EPS**2, rel=1e-4)


def test_circular_loss_identity_and_closed_form():
    phi = np.array([1.0, 2.5])
    ls, lc, gs, gc = circular_phase_loss(np.sin(phi), np.cos(phi), phi)
    assert ls + lc == 0 and np.all(gs == 0) and np.all(gc == 0)
    ls, lc, _, _ = circular_phase_loss([math.sin(1.0)], [math.cos(1.0)], [2.5])
    assert ls + lc == pytest.approx(2 - 2 * math.cos(1.5), rel=1e-12)
    assert ls + lc == pytest.approx(4 * math.sin(0.75) ** 2, rel=1e-12)
    assert ls + lc == pytest.approx(1.8585256, abs=1e-7)


def test_circular_loss_mask_zeroes_gradient():
    mask = np.array([True, False, True])
    ls, lc, gs, gc = circular_phase_loss(np.zeros(3), np.zeros(3), np.array([0.1, 0.2, 0.3]), mask)
    assert gs[1] == 0 and gc[1] == 0
    assert ls + lc == pytest.approx(2.0)


def test_amplitude_mask_threshold():
    amp = np.array([[1.0, 1e-7, 2e-6, 0.0], [0.0, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(amplitude_mask(amp), [[True, False, True, False], [False] * 4])


@pytest.mark.parametrize("seed", range(100))
def test_circular_loss_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    target = rng.uniform(-PI, PI, (4, 9))
    mask = rng.random((4, 9)) > 0.2
    inputs = {"s": rng.standard_normal((4, 9)), "c": rng.standard_normal((4, 9))}

    def fn(x):
        ls, lc, gs, gc = circular_phase_loss(x["s"], x["c"], target, mask)
        return ls + lc, {"s": gs, "c": gc}

    assert grad_check(fn, inputs) < 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_direct_loss_finite_differences(seed):
    rng = np.random.default_rng(2000 + seed)
    target = rng.uniform(-PI, PI, (4, 9))
    inputs = {"a": rng.uniform(-PI, PI, (4, 9))}

    def fn(x):
        v, g = direct_phase_loss(x["a"], target)
        return v, {"a": g}

    assert grad_check(fn, inputs) < 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_unit_circle_angle_gradient_finite_differences(seed):
    rng = np.random.default_rng(3000 + seed)
    target = rng.uniform(-PI, PI, 5)
    inputs = {"a": rng.uniform(-PI, PI, 5)}

    def fn(x):
        ls, lc, _, _ = circular_phase_loss(np.sin(x["a"]), np.cos(x["a"]), target)
        return ls + lc, {"a": unit_circle_angle_gradient(x["a"], target)}

    assert grad_check(fn, inputs) < 1e-6


def test_chord_identity_examples():
    lhs, cf, sf = chord_identity(PI / 2, -PI / 2)
    assert lhs == pytest.approx(4) and cf == pytest.approx(4) and sf == pytest.approx(4)
    assert chord_identity(0.7, 0.7) == (0.0, 0.0, 0.0)


def test_chord_identity_sweep():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-PI, PI, (2, 100_000))
    lhs, cf, sf = chord_identity(a, b)
    assert max(np.max(np.abs(lhs - cf)), np.max(np.abs(lhs - sf)), np.max(np.abs(cf - sf))) < 1e-12


def test_total_loss_modes():
    assert total_loss("circular").total == 0
    rep = total_loss("baseline", amplitude_loss=1, direct_phase_loss=2, quantization_loss=0.5)
    assert rep.total == 3.5
    rep = total_loss("circular", amplitude_loss=1, sin_loss=0.2, cos_loss=0.3, quantization_loss=0.5,
                     direct_phase_loss=40.0)
    assert rep.total == pytest.approx(2.0, rel=1e-12)
    assert rep.direct_phase_loss == 40.0
    assert sum(rep.optimized_terms()) == pytest.approx(rep.total, rel=1e-9)
    with pytest.raises(ValueError):
        total_loss("other")


def test_landscape_zero_and_boundary():
    row = loss_landscape([0.0])[0]
    assert row.tolist() == [0.0, 0.0, 0.0, 0.0, 0.0]
    d = (PI - EPS) - (-PI + EPS)
    _, dv, dg, cv, cg = loss_landscape([d])[0]
    assert dv == pytest.approx(39.2275, abs=1e-4)
    assert dg == pytest.approx(12.5264, abs=1e-4)
    assert cv == pytest.approx(2 - 2 * math.cos(2 * EPS), rel=1e-9)
    assert len(LANDSCAPE_COLUMNS) == 5


def test_landscape_circular_gradient_peak():
    grid = np.linspace(-2 * PI, 2 * PI, 8001)
    table = loss_landscape(grid)
    peak = np.max(np.abs(table[:, 4]))
    assert peak == pytest.approx(2.0, abs=1e-6)
    at = np.abs(table[np.argmax(np.abs(table[:, 4])), 0])
    assert min(abs(at - PI / 2), abs(at - 3 * PI / 2)) < 1e-3


def test_landscape_rejects_out_of_range():
    with pytest.raises(ValueError):
        loss_landscape([7.0])


def test_landscape_grid():
    assert landscape_grid(1).tolist() == [0.0]
    g = landscape_grid(5)
    assert np.any(np.isclose(g, 2 * PI - 2 * EPS)) and 0.0 in g


@given(angles, angles)
def test_circular_gradient_bounded(p, t):
    g = unit_circle_angle_gradient(np.array([p]), np.array([t]))[0]
    assert abs(g) <= 2 + 1e-12
    assert g == pytest.approx(2 * math.sin(p - t), abs=1e-12)


@given(angles, angles)
def test_circular_loss_periodic(p, t):
    a = circular_phase_loss([math.sin(p)], [math.cos(p)], [t])
    b = circular_phase_loss([math.sin(p + 2 * PI)], [math.cos(p + 2 * PI)], [t])
    assert abs((a[0] + a[1]) - (b[0] + b[1])) < 1e-12


def test_direct_loss_not_periodic_witness():
    p, t = 0.5, 0.2
    assert direct_phase_loss([p], [t])[0] != pytest.approx(direct_phase_loss([p + 2 * PI], [t])[0])


def test_boundary_continuity():
    prev = None
    for eps in np.geomspace(1e-3, 1e-6, 20):
        s, c = math.sin(PI - eps), math.cos(PI - eps)
        ls, lc, _, _ = circular_phase_loss([s], [c], [-PI + eps])
        L = ls + lc
        # 2 - 2cos(2e) <= 4e^2 exactly; the slack covers float64 cancellation at tiny eps
        assert 0.999 <= L / (4 * eps**2) <= 1.0 + 1e-9
        if prev is not None:
            assert L < prev
        prev = L
        assert direct_phase_loss([PI - eps], [-PI + eps])[0] == pytest.approx(4 * PI**2, rel=1e-3)
