"""Glue between generator, tracker and metrics for held-out sprite evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gmrw.core import TrackSet
from gmrw.data import SpriteSceneConfig, generate_sprite_clip
from gmrw.metrics import MetricsConfig, MetricsReport, evaluate, sample_queries_strided
from gmrw.tracker import TrackerConfig, track


def zero_motion_tracks(queries: TrackSet) -> TrackSet:
    """Baseline that leaves every query where it is and calls it always visible."""
    n, t = len(queries), queries.num_frames
    pos = np.repeat(queries.queries[:, None, 1:], t, axis=1)
    return TrackSet(pos, np.ones((n, t), dtype=bool), queries.queries, list(queries.ids))


@dataclass
class SuiteResult:
    model: MetricsReport
    baseline: MetricsReport
    per_clip: list

    def summary(self) -> str:
        return f"model {self.model.summary()} | zero-motion {self.baseline.summary()}"


def _mean_report(reports) -> MetricsReport:
    per = []
    for k, (thr, _, _) in enumerate(reports[0].per_threshold):
        per.append((thr, float(np.mean([r.per_threshold[k][1] for r in reports])),
                    float(np.mean([r.per_threshold[k][2] for r in reports]))))
    return MetricsReport(
        float(np.mean([r.aj for r in reports])),
        float(np.mean([r.delta_avg for r in reports])),
        float(np.mean([r.oa for r in reports])),
        per,
        int(sum(r.num_queries for r in reports)),
        reports[0].notes + [f"mean over {len(reports)} clips"],
    )


def evaluate_sprite_suite(model, scene: SpriteSceneConfig, seeds, tracker: TrackerConfig,
                          metrics: MetricsConfig | None = None) -> SuiteResult:
    """Track strided queries on generated clips and score model and zero-motion baseline."""
    metrics = metrics or MetricsConfig()
    model_reports, base_reports = [], []
    for seed in seeds:
        sample = generate_sprite_clip(replace(scene, seed=int(seed)))
        gt = sample_queries_strided(sample.gt, metrics.query_stride)
        if len(gt) == 0:
            continue
        size = (sample.clip.height, sample.clip.width)
        pred = track(sample.clip, gt.query_points(), model, tracker, ids=gt.ids)
        model_reports.append(evaluate(pred, gt, size, metrics))
        base_reports.append(evaluate(zero_motion_tracks(gt), gt, size, metrics))
    return SuiteResult(_mean_report(model_reports), _mean_report(base_reports), model_reports)
