import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from gmrw.core import CoordinateGrid, ShapeError, grid_coordinates
from gmrw.matcher import TransitionMatrix
from gmrw.objective import (
    LOG_FLOOR,
    ObjectiveConfig,
    UndefinedLossError,
    crw_loss,
    expected_flow,
    smoothness_loss,
    supervised_loss,
    total_loss,
)

D = torch.float64


def test_perfect_cycle_has_floor_level_loss():
    eye = torch.eye(5, dtype=D)
    assert crw_loss(eye, eye).item() <= 1e-6


def test_uniform_two_by_two_gives_ln2():
    loss = crw_loss(torch.full((2, 2), 0.5, dtype=D), torch.eye(2, dtype=D))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-8)


def test_matching_shift_permutation_has_zero_loss():
    perm = torch.eye(6, dtype=D)[[1, 2, 3, 4, 5, 0]]
    assert crw_loss(perm, perm).item() <= 1e-6


def test_masked_rows_are_ignored_and_all_masked_is_undefined():
    probs = torch.tensor([[1.0, 0.0], [0.5, 0.5]], dtype=D)
    assert crw_loss(probs, torch.eye(2, dtype=D), np.array([True, False])).item() <= 1e-6
    with pytest.raises(UndefinedLossError):
        crw_loss(probs, torch.eye(2, dtype=D), np.array([False, False]))


def test_crw_shape_mismatch():
    with pytest.raises(ShapeError):
        crw_loss(torch.eye(2), torch.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_crw_is_non_negative_and_minimal_at_label(seed):
    g = torch.Generator().manual_seed(seed)
    probs = torch.softmax(torch.randn(6, 6, generator=g, dtype=D), -1)
    label = torch.eye(6, dtype=D)[torch.randperm(6, generator=g)]
    assert crw_loss(probs, label).item() >= 0
    assert crw_loss(label, label).item() <= crw_loss(probs, label).item()


def _two_cell_grid():
    return CoordinateGrid(np.array([[0.0, 0.0], [4.0, 0.0]]), 1, 2, 4)


def test_expected_flow_swap_example():
    a = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=D)
    flow = expected_flow(a, _two_cell_grid())
    assert flow.tolist() == [[4.0, 0.0], [-4.0, 0.0]]


def test_expected_flow_identity_and_uniform():
    grid = grid_coordinates(8, 8, 4)
    field = expected_flow(TransitionMatrix(torch.eye(4, dtype=D), (2, 2), (2, 2)), grid)
    assert np.array_equal(field.flow, np.zeros((4, 2)))
    uniform = torch.full((2, 2), 0.5, dtype=D)
    flow = expected_flow(uniform, _two_cell_grid())
    assert flow.tolist() == [[2.0, 0.0], [-2.0, 0.0]]


def _flow_grid(fn, h=6, w=7):
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return torch.as_tensor(np.stack(fn(xs, ys), axis=-1))


def test_smoothness_zero_for_constant_and_linear_flows():
    image = torch.rand(3, 6, 7, dtype=D)
    const = _flow_grid(lambda x, y: (np.full_like(x, 3.0), np.full_like(x, -1.0)))
    linear = _flow_grid(lambda x, y: (2 * x - y, 0.5 * y + x))
    assert smoothness_loss(const, image).item() == 0.0
    assert smoothness_loss(linear, image).item() == 0.0


def test_smoothness_quadratic_ramp_on_flat_image():
    image = torch.full((3, 6, 7), 0.5, dtype=D)
    quad = _flow_grid(lambda x, y: (x ** 2, x ** 2))
    assert smoothness_loss(quad, image).item() == pytest.approx(2.0, abs=1e-12)


def test_smoothness_is_damped_at_image_edges():
    quad = _flow_grid(lambda x, y: (x ** 2, x ** 2))
    edges = torch.zeros(3, 6, 7, dtype=D)
    edges[..., 4:] = 1.0
    assert smoothness_loss(quad, edges, 150.0).item() < 2.0


def test_smoothness_rejects_small_grid():
    with pytest.raises(ShapeError):
        smoothness_loss(torch.zeros(2, 5, 2), torch.zeros(3, 2, 5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5), st.floats(-0.3, 0.3))
def test_smoothness_invariances(seed, flow_offset, color_offset):
    g = torch.Generator().manual_seed(seed)
    flow = torch.randn(5, 6, 2, generator=g, dtype=D)
    image = torch.rand(3, 5, 6, generator=g, dtype=D) * 0.4 + 0.3
    base = smoothness_loss(flow, image).item()
    assert smoothness_loss(flow + flow_offset, image).item() == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert smoothness_loss(flow, image + color_offset).item() == pytest.approx(base, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize(
    "crw, smooth, weight, expected",
    [(0.5, 0.2, 0.0, 0.5), (0.5, 0.2, 1.0, 0.7), (math.log(2), 2.0, 0.1, 0.8931)],
)
def test_total_loss_examples(crw, smooth, weight, expected):
    report = total_loss(crw, smooth, ObjectiveConfig(smoothness_weight=weight))
    assert report.total.item() == pytest.approx(expected, abs=1e-4)


def test_disabled_smoothness_reports_zero_smooth_term():
    report = total_loss(0.5, 0.2, ObjectiveConfig(use_smoothness=False))
    assert report.smooth.item() == 0.0 and report.total.item() == 0.5


def test_objective_config_rejects_negative_weight():
    with pytest.raises(ValueError):
        ObjectiveConfig(smoothness_weight=-0.1)


@pytest.mark.parametrize("delta", [0.5, 1.0, 3.0])
def test_huber_closed_forms(delta):
    gt = torch.zeros(10, 2, dtype=D)
    assert supervised_loss(gt, gt, delta).item() == 0.0
    small = torch.tensor([[0.5 * delta, 0.0]] * 10, dtype=D)
    large = torch.tensor([[0.0, 2 * delta]] * 10, dtype=D)
    assert supervised_loss(small, gt, delta).item() == pytest.approx(0.125 * delta ** 2)
    assert supervised_loss(large, gt, delta).item() == pytest.approx(1.5 * delta ** 2)


@given(st.floats(0, 10), st.floats(0, 10))
def test_huber_symmetric_and_monotone(a, b):
    gt = torch.zeros(1, 2, dtype=D)
    la = supervised_loss(torch.tensor([[a, 0.0]], dtype=D), gt).item()
    assert la == supervised_loss(torch.tensor([[-a, 0.0]], dtype=D), gt).item()
    lb = supervised_loss(torch.tensor([[b, 0.0]], dtype=D), gt).item()
    assert (la <= lb) == (a <= b) or la == lb


def test_huber_gradient_finite_at_zero_error():
    pred = torch.zeros(3, 2, dtype=D, requires_grad=True)
    supervised_loss(pred, torch.zeros(3, 2, dtype=D)).backward()
    assert torch.isfinite(pred.grad).all()


def test_log_floor_value():
    assert LOG_FLOOR == 1e-9
