"""TAP-Vid style scoring: positional accuracy, occlusion accuracy, Average Jaccard.

Errors are measured after rescaling both axes to a 256 x 256 reference frame,
so the default thresholds {1, 2, 4, 8, 16} px mean the same thing at any clip
resolution. A prediction exactly at a threshold counts as within it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from gmrw.core import GMRWError, ShapeError, TrackSet

DEFAULT_THRESHOLDS = (1, 2, 4, 8, 16)
REFERENCE_SIZE = (256, 256)  # (H, W)


class UndefinedMetricError(GMRWError, ValueError):
    pass


@dataclass
class MetricsConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    query_stride: int = 5
    reference_size: tuple = REFERENCE_SIZE
    exclude_query_frame: bool = True


@dataclass
class MetricsReport:
    aj: float
    delta_avg: float
    oa: float
    per_threshold: list  # [(threshold, fraction within, jaccard)]
    num_queries: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aj": self.aj,
            "delta_avg": self.delta_avg,
            "oa": self.oa,
            "per_threshold": [
                {"threshold": thr, "fraction": frac, "jaccard": jac}
                for thr, frac, jac in self.per_threshold
            ],
            "num_queries": self.num_queries,
            "notes": list(self.notes),
        }

    def summary(self) -> str:
        return (f"AJ={self.aj:.4f} delta_avg={self.delta_avg:.4f} "
                f"OA={self.oa:.4f} queries={self.num_queries}")


def _errors(pred, gt, frame_size=None, reference_size=REFERENCE_SIZE) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    diff = pred - gt
    if frame_size is not None:
        h, w = frame_size
        rh, rw = reference_size
        diff = diff * np.array([rw / w, rh / h])
    return np.sqrt((diff ** 2).sum(-1))


def _mask(eval_mask, shape) -> np.ndarray:
    if eval_mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(eval_mask, dtype=bool)
    if m.shape != shape:
        raise ShapeError(f"evaluation mask shape {m.shape} != {shape}")
    return m


def positional_accuracy(pred, gt, gt_visible, thresholds=DEFAULT_THRESHOLDS, *,
                        eval_mask=None, frame_size=None, reference_size=REFERENCE_SIZE):
    """Fraction of visible ground-truth points predicted within each threshold.

    Returns ``(delta_avg, [fraction per threshold])``.
    """
    err = _errors(pred, gt, frame_size, reference_size)
    gt_visible = np.asarray(gt_visible, dtype=bool)
    if gt_visible.shape != err.shape:
        raise ShapeError(f"visibility shape {gt_visible.shape} != {err.shape}")
    counted = gt_visible & _mask(eval_mask, err.shape)
    total = int(counted.sum())
    if total == 0:
        raise UndefinedMetricError("no visible ground-truth points to score")
    fractions = [int((counted & (err <= thr)).sum()) / total for thr in thresholds]
    return float(np.mean(fractions)), fractions


def occlusion_accuracy(pred_visible, gt_visible, *, eval_mask=None) -> float:
    pred_visible = np.asarray(pred_visible, dtype=bool)
    gt_visible = np.asarray(gt_visible, dtype=bool)
    if pred_visible.shape != gt_visible.shape:
        raise ShapeError(f"visibility shapes differ: {pred_visible.shape} vs {gt_visible.shape}")
    m = _mask(eval_mask, gt_visible.shape)
    total = int(m.sum())
    if total == 0:
        raise UndefinedMetricError("occlusion accuracy of an empty prediction set")
    return int(((pred_visible == gt_visible) & m).sum()) / total


def average_jaccard(pred, pred_visible, gt, gt_visible, thresholds=DEFAULT_THRESHOLDS, *,
                    eval_mask=None, frame_size=None, reference_size=REFERENCE_SIZE):
    """Threshold-averaged TP / (TP + FP + FN). Returns ``(aj, [jaccard per threshold])``."""
    err = _errors(pred, gt, frame_size, reference_size)
    pv = np.asarray(pred_visible, dtype=bool)
    gv = np.asarray(gt_visible, dtype=bool)
    if pv.shape != err.shape or gv.shape != err.shape:
        raise ShapeError("visibility arrays must match the position arrays")
    m = _mask(eval_mask, err.shape)
    jaccards = []
    for thr in thresholds:
        close = err <= thr
        tp = int((pv & gv & close & m).sum())
        fp = int((pv & (~gv | ~close) & m).sum())
        fn = int((gv & (~pv | ~close) & m).sum())
        if tp + fp + fn == 0:
            raise UndefinedMetricError(f"Jaccard denominator is empty at threshold {thr}")
        jaccards.append(tp / (tp + fp + fn))
    return float(np.mean(jaccards)), jaccards


def sample_queries_strided(tracks, query_stride: int = 5) -> TrackSet:
    """One query per visible frame on the ``query_stride`` grid of every track.

    ``tracks`` is a :class:`TrackSet` (its own queries are ignored) or a
    ``(positions, visibility)`` pair. Tracks yielding no query are skipped with
    a warning.
    """
    if isinstance(tracks, TrackSet):
        positions, visibility, base_ids = tracks.positions, tracks.visibility, tracks.ids
    else:
        positions, visibility = (np.asarray(a) for a in tracks)
        base_ids = [str(i) for i in range(len(positions))]
    if len(positions) == 0:
        raise UndefinedMetricError("no tracks to sample queries from")
    if query_stride < 1:
        raise ValueError(f"query_stride must be positive, got {query_stride}")
    rows, queries, ids = [], [], []
    for i in range(len(positions)):
        frames = [t for t in range(0, positions.shape[1], query_stride) if visibility[i, t]]
        if not frames:
            warnings.warn(f"track {base_ids[i]} has no visible frame on the stride-{query_stride} grid; skipped")
            continue
        for t in frames:
            rows.append(i)
            queries.append((t, positions[i, t, 0], positions[i, t, 1]))
            ids.append(f"{base_ids[i]}@{t}")
    if not rows:
        return TrackSet(np.zeros((0, positions.shape[1], 2)), np.zeros((0, positions.shape[1]), bool),
                        np.zeros((0, 3)), [])
    return TrackSet(positions[rows], visibility[rows], np.array(queries), ids)


def query_frame_mask(queries, num_frames: int, exclude_query_frame: bool = True) -> np.ndarray:
    q = np.asarray(queries).reshape(-1, 3)
    mask = np.ones((len(q), num_frames), dtype=bool)
    if exclude_query_frame:
        mask[np.arange(len(q)), q[:, 0].astype(int)] = False
    return mask


def align_tracks(pred: TrackSet, gt: TrackSet) -> TrackSet:
    """Reorder ``pred`` to follow ``gt`` by track id."""
    index = {k: i for i, k in enumerate(pred.ids)}
    missing = [k for k in gt.ids if k not in index]
    if missing:
        raise ShapeError(f"{len(missing)} ground-truth tracks have no prediction, e.g. {missing[0]!r}")
    if pred.num_frames != gt.num_frames:
        raise ShapeError(f"prediction has {pred.num_frames} frames, ground truth {gt.num_frames}")
    return pred.subset([index[k] for k in gt.ids])


def evaluate(pred: TrackSet, gt: TrackSet, frame_size=None,
             config: MetricsConfig | None = None) -> MetricsReport:
    """Score predictions against ground truth, matching tracks by id."""
    config = config or MetricsConfig()
    pred = align_tracks(pred, gt)
    mask = query_frame_mask(gt.queries, gt.num_frames, config.exclude_query_frame)
    kw = dict(eval_mask=mask, frame_size=frame_size, reference_size=tuple(config.reference_size))
    delta, fractions = positional_accuracy(pred.positions, gt.positions, gt.visibility,
                                           config.thresholds, **kw)
    aj, jaccards = average_jaccard(pred.positions, pred.visibility, gt.positions, gt.visibility,
                                   config.thresholds, **kw)
    oa = occlusion_accuracy(pred.visibility, gt.visibility, eval_mask=mask)
    notes = ["thresholds are inclusive (error <= threshold counts as within)",
             "predictions outside the frame are scored as given"]
    if frame_size is not None:
        notes.append(f"errors rescaled from {tuple(frame_size)} to {tuple(config.reference_size)}")
    if config.exclude_query_frame:
        notes.append("query frames excluded from scoring")
    per = [(thr, f, j) for thr, f, j in zip(config.thresholds, fractions, jaccards)]
    return MetricsReport(aj, delta, oa, per, len(gt), notes)
