"""Independent reference implementations used to check the package.

Everything here is written as plain per-cell Python loops, deliberately
sharing no code with the package.
"""

import math


def brute_force_metrics(pred, pred_vis, gt, gt_vis, mask, thresholds, scale=(1.0, 1.0)):
    """(delta_avg, oa, aj) by enumerating every (track, frame) cell."""
    n, t = len(gt), len(gt[0])
    within = {thr: 0 for thr in thresholds}
    tp = {thr: 0 for thr in thresholds}
    fp = {thr: 0 for thr in thresholds}
    fn = {thr: 0 for thr in thresholds}
    visible_cells = agree = cells = 0
    for i in range(n):
        for j in range(t):
            if not mask[i][j]:
                continue
            cells += 1
            pv, gv = bool(pred_vis[i][j]), bool(gt_vis[i][j])
            agree += pv == gv
            dx = (pred[i][j][0] - gt[i][j][0]) * scale[0]
            dy = (pred[i][j][1] - gt[i][j][1]) * scale[1]
            err = math.hypot(dx, dy)
            if gv:
                visible_cells += 1
            for thr in thresholds:
                close = err <= thr
                if gv and close:
                    within[thr] += 1
                if pv and gv and close:
                    tp[thr] += 1
                elif pv:
                    fp[thr] += 1
                if gv and not (pv and close):
                    fn[thr] += 1
    delta = sum(within[thr] / visible_cells for thr in thresholds) / len(thresholds)
    aj = sum(tp[thr] / (tp[thr] + fp[thr] + fn[thr]) for thr in thresholds) / len(thresholds)
    return delta, agree / cells, aj
