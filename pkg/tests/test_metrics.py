import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmrw.core import TrackSet
from gmrw.metrics import (
    MetricsConfig,
    UndefinedMetricError,
    average_jaccard,
    evaluate,
    occlusion_accuracy,
    positional_accuracy,
    query_frame_mask,
    sample_queries_strided,
)
from oracles import brute_force_metrics

THR = (1, 2, 4, 8, 16)


def test_strided_queries_always_visible_track():
    pos = np.zeros((1, 10, 2))
    q = sample_queries_strided((pos, np.ones((1, 10), bool)), 5)
    assert q.queries[:, 0].tolist() == [0, 5]


def test_strided_queries_off_grid_visibility_warns():
    vis = np.zeros((1, 10), bool)
    vis[0, 3] = True
    with pytest.warns(UserWarning):
        q = sample_queries_strided((np.zeros((1, 10, 2)), vis), 5)
    assert len(q) == 0


def test_stride_one_gives_one_query_per_visible_frame():
    vis = np.array([[True, False, True, True]])
    q = sample_queries_strided((np.zeros((1, 4, 2)), vis), 1)
    assert q.queries[:, 0].tolist() == [0, 2, 3]


def test_strided_query_coordinates_and_ids():
    pos = np.arange(20, dtype=float).reshape(1, 10, 2)
    q = sample_queries_strided(TrackSet(pos, np.ones((1, 10), bool), [[0, 0, 1]], ["a"]), 5)
    assert q.ids == ["a@0", "a@5"]
    assert q.queries[1].tolist() == [5, 10, 11]


def test_empty_track_list_rejected():
    with pytest.raises(UndefinedMetricError):
        sample_queries_strided((np.zeros((0, 4, 2)), np.zeros((0, 4), bool)))


def test_perfect_predictions():
    gt = np.random.rand(3, 5, 2) * 50
    delta, fractions = positional_accuracy(gt, gt, np.ones((3, 5), bool))
    assert delta == 1.0 and fractions == [1.0] * 5


def test_three_pixel_error_gives_point_six():
    delta, fractions = positional_accuracy([[[3.0, 0.0]]], [[[0.0, 0.0]]], [[True]], THR)
    assert fractions == [0, 0, 1, 1, 1] and delta == pytest.approx(0.6)


def test_threshold_ties_count_as_within():
    delta, fractions = positional_accuracy([[[0.0, 4.0]]], [[[0.0, 0.0]]], [[True]], THR)
    assert fractions == [0, 0, 1, 1, 1]


def test_errors_rescale_to_reference_resolution():
    # 1 px at 64 x 64 is 4 px at 256 x 256
    _, fractions = positional_accuracy([[[1.0, 0.0]]], [[[0.0, 0.0]]], [[True]], THR, frame_size=(64, 64))
    assert fractions == [0, 0, 1, 1, 1]


def test_no_visible_gt_is_undefined():
    with pytest.raises(UndefinedMetricError):
        positional_accuracy([[[0.0, 0.0]]], [[[0.0, 0.0]]], [[False]])


def test_occlusion_accuracy_examples():
    gt = np.array([[True, False], [True, True]])
    assert occlusion_accuracy(gt, gt) == 1.0
    assert occlusion_accuracy(~gt, gt) == 0.0
    pred = gt.copy()
    pred[1, 1] = False
    assert occlusion_accuracy(pred, gt) == 0.75
    with pytest.raises(UndefinedMetricError):
        occlusion_accuracy(np.zeros((0, 0), bool), np.zeros((0, 0), bool))


def test_average_jaccard_examples():
    gt = np.zeros((2, 1, 2))
    vis = np.ones((2, 1), bool)
    assert average_jaccard(gt, vis, gt, vis)[0] == 1.0
    assert average_jaccard(gt, ~vis, gt, vis)[0] == 0.0
    # point 0: true positive; point 1: predicted visible on an occluded gt point
    aj, per = average_jaccard(gt, vis, gt, np.array([[True], [False]]))
    assert aj == 0.5 and per == [0.5] * 5


def _random_instance(rng):
    n, t = int(rng.integers(1, 6)), int(rng.integers(2, 11))
    gt = rng.uniform(0, 64, (n, t, 2))
    pred = gt + rng.normal(0, rng.choice([0.5, 2, 8]), (n, t, 2))
    gt_vis = rng.random((n, t)) < 0.7
    gt_vis[:, 0] = True
    pred_vis = np.where(rng.random((n, t)) < 0.8, gt_vis, ~gt_vis)
    pred_vis[0, 0] = True
    mask = rng.random((n, t)) < 0.9
    mask[0, 0] = True
    return pred, pred_vis, gt, gt_vis, mask


def test_metrics_match_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pred, pv, gt, gv, mask = _random_instance(rng)
        frame_size = (64, 48)
        ref = brute_force_metrics(pred.tolist(), pv.tolist(), gt.tolist(), gv.tolist(), mask.tolist(),
                                  THR, scale=(256 / 48, 256 / 64))
        kw = dict(eval_mask=mask, frame_size=frame_size)
        delta, _ = positional_accuracy(pred, gt, gv, THR, **kw)
        aj, _ = average_jaccard(pred, pv, gt, gv, THR, **kw)
        oa = occlusion_accuracy(pv, gv, eval_mask=mask)
        assert abs(delta - ref[0]) <= 1e-9 and abs(oa - ref[1]) <= 1e-9 and abs(aj - ref[2]) <= 1e-9


def _trackset(rng, n=4, t=8):
    gt = rng.uniform(0, 64, (n, t, 2))
    vis = rng.random((n, t)) < 0.8
    q = np.array([[0, *gt[i, 0]] for i in range(n)])
    vis[:, 0] = True
    return TrackSet(gt, vis, q, [f"t{i}" for i in range(n)])


def test_evaluate_ignores_track_order(rng):
    gt = _trackset(rng)
    pred = TrackSet(gt.positions + rng.normal(0, 1, gt.positions.shape), rng.random(gt.visibility.shape) < 0.5,
                    gt.queries, gt.ids)
    order = [2, 0, 3, 1]
    a = evaluate(pred, gt, (64, 64)).to_dict()
    b = evaluate(pred.subset(order), gt.subset(order[::-1]), (64, 64)).to_dict()
    assert a == b


def test_evaluate_excludes_query_frame(rng):
    gt = _trackset(rng)
    pred = TrackSet(gt.positions.copy(), gt.visibility.copy(), gt.queries, gt.ids)
    pred.visibility[:, 0] = False  # only query frames are wrong
    report = evaluate(pred, gt, (64, 64))
    assert report.oa == 1.0 and report.aj == 1.0
    with_query = evaluate(pred, gt, (64, 64), MetricsConfig(exclude_query_frame=False))
    assert with_query.oa < 1.0
    assert query_frame_mask(gt.queries, 8)[:, 0].sum() == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
def test_noise_never_improves_scores(seed, extra):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 64, (4, 6, 2))
    vis = np.ones((4, 6), bool)
    direction = rng.normal(size=(4, 6, 2))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    base_err = rng.uniform(0, 3, (4, 6, 1))
    near = gt + direction * base_err
    far = gt + direction * (base_err + extra)
    assert positional_accuracy(far, gt, vis, frame_size=(64, 64))[0] <= \
        positional_accuracy(near, gt, vis, frame_size=(64, 64))[0]
    assert average_jaccard(far, vis, gt, vis, frame_size=(64, 64))[0] <= \
        average_jaccard(near, vis, gt, vis, frame_size=(64, 64))[0]


def test_report_values_in_unit_interval(rng):
    gt = _trackset(rng)
    pred = TrackSet(gt.positions + 5, ~gt.visibility, gt.queries, gt.ids)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = evaluate(pred, gt, (64, 64))
    for value in (report.aj, report.delta_avg, report.oa):
        assert 0.0 <= value <= 1.0
    assert report.delta_avg == pytest.approx(np.mean([f for _, f, _ in report.per_threshold]))
