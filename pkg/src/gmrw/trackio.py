"""Line-delimited JSON track files.

The first line is a header, every following line one track::

    {"format": "gmrw-tracks", "version": 1, "num_frames": T, "height": H, "width": W}
    {"id": "3@5", "query": [t, x, y], "points": [[x, y], ...], "visible": [true, ...]}

Fields always appear in this order. ``points`` and ``visible`` have one entry
per frame. The same schema carries predictions, ground truth and query lists
(for queries, only ``id`` and ``query`` are read).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from gmrw.core import GMRWError, TrackSet

TRACK_FORMAT = "gmrw-tracks"
TRACK_VERSION = 1
_DECIMALS = 6


class SchemaError(GMRWError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


def _num(v: float):
    v = round(float(v), _DECIMALS)
    return 0.0 if v == 0 else v


def write_tracks(path, tracks: TrackSet, frame_size) -> None:
    h, w = (int(v) for v in frame_size)
    lines = [json.dumps({"format": TRACK_FORMAT, "version": TRACK_VERSION,
                         "num_frames": tracks.num_frames, "height": h, "width": w})]
    for i in range(len(tracks)):
        t, x, y = tracks.queries[i]
        lines.append(json.dumps({
            "id": str(tracks.ids[i]),
            "query": [int(t), _num(x), _num(y)],
            "points": [[_num(px), _num(py)] for px, py in tracks.positions[i]],
            "visible": [bool(v) for v in tracks.visibility[i]],
        }))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _require(cond, path, line, message):
    if not cond:
        raise SchemaError(path, line, message)


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise SchemaError(path, 1, f"header is not valid JSON ({exc.msg})") from exc
    _require(isinstance(header, dict) and header.get("format") == TRACK_FORMAT, path, 1,
             f"field 'format' must be {TRACK_FORMAT!r}")
    _require(header.get("version") == TRACK_VERSION, path, 1, f"field 'version' must be {TRACK_VERSION}")
    for key in ("num_frames", "height", "width"):
        _require(isinstance(header.get(key), int) and header[key] > 0, path, 1,
                 f"field {key!r} must be a positive integer")
    return header


def read_tracks(path, queries_only: bool = False) -> tuple[TrackSet, tuple[int, int]]:
    """Parse a track file. Returns the tracks and the (H, W) frame size."""
    path = str(path)
    header = read_header(path)
    t = header["num_frames"]
    ids, queries, points, visible = [], [], [], []
    seen = set()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if lineno == 1 or not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, lineno, f"invalid JSON ({exc.msg})") from exc
            _require(isinstance(rec, dict), path, lineno, "record must be an object")
            _require(isinstance(rec.get("id"), str), path, lineno, "field 'id' must be a string")
            _require(rec["id"] not in seen, path, lineno, f"duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            q = rec.get("query")
            _require(isinstance(q, list) and len(q) == 3 and all(_is_number(v) for v in q),
                     path, lineno, "field 'query' must be [t, x, y]")
            _require(float(q[0]).is_integer() and 0 <= q[0] < t, path, lineno,
                     f"field 'query' frame {q[0]} outside [0, {t})")
            ids.append(rec["id"])
            queries.append([float(v) for v in q])
            if queries_only:
                continue
            pts = rec.get("points")
            _require(isinstance(pts, list) and len(pts) == t, path, lineno,
                     f"field 'points' must list {t} [x, y] pairs")
            _require(all(isinstance(p, list) and len(p) == 2 and all(_is_number(v) for v in p)
                         for p in pts), path, lineno, "field 'points' entries must be numeric [x, y]")
            vis = rec.get("visible")
            _require(isinstance(vis, list) and len(vis) == t and all(isinstance(v, bool) for v in vis),
                     path, lineno, f"field 'visible' must list {t} booleans")
            points.append(pts)
            visible.append(vis)
    n = len(ids)
    if queries_only:
        pos = np.zeros((n, t, 2))
        vis = np.zeros((n, t), dtype=bool)
    else:
        pos = np.asarray(points, dtype=np.float64).reshape(n, t, 2)
        vis = np.asarray(visible, dtype=bool).reshape(n, t)
    return TrackSet(pos, vis, np.asarray(queries).reshape(n, 3), ids), (header["height"], header["width"])
