import json

import numpy as np
import pytest

from gmrw.core import TrackSet
from gmrw.trackio import SchemaError, read_header, read_tracks, write_tracks


@pytest.fixture
def tracks():
    pos = np.array([[[1.0, 2.0], [3.25, 4.5]], [[5.0, 6.0], [7.0, 8.123456789]]])
    vis = np.array([[True, False], [True, True]])
    return TrackSet(pos, vis, [[0, 1.0, 2.0], [1, 7.0, 8.0]], ["a", "b@1"])


def test_roundtrip(tmp_path, tracks):
    path = tmp_path / "t.jsonl"
    write_tracks(path, tracks, (48, 64))
    back, size = read_tracks(path)
    assert size == (48, 64) and back.ids == ["a", "b@1"]
    np.testing.assert_allclose(back.positions, tracks.positions, atol=1e-6)
    assert np.array_equal(back.visibility, tracks.visibility)


def test_field_order_is_fixed(tmp_path, tracks):
    path = tmp_path / "t.jsonl"
    write_tracks(path, tracks, (48, 64))
    lines = path.read_text().splitlines()
    assert list(json.loads(lines[0])) == ["format", "version", "num_frames", "height", "width"]
    assert list(json.loads(lines[1])) == ["id", "query", "points", "visible"]


def test_queries_only_skips_points(tmp_path):
    path = tmp_path / "q.jsonl"
    path.write_text('{"format": "gmrw-tracks", "version": 1, "num_frames": 3, "height": 8, "width": 8}\n'
                    '{"id": "x", "query": [2, 1.5, 3.0]}\n')
    q, _ = read_tracks(path, queries_only=True)
    assert q.query_points()[0] == (2, 1.5, 3.0)


def _write(tmp_path, header, *records):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join([json.dumps(header)] + [json.dumps(r) for r in records]) + "\n")
    return path


HEADER = {"format": "gmrw-tracks", "version": 1, "num_frames": 2, "height": 8, "width": 8}
GOOD = {"id": "a", "query": [0, 1, 1], "points": [[1, 1], [2, 2]], "visible": [True, True]}


@pytest.mark.parametrize(
    "record, line, field",
    [
        ({**GOOD, "points": [[1, 1]]}, 2, "points"),
        ({**GOOD, "visible": [1, 0]}, 2, "visible"),
        ({**GOOD, "query": [5, 1, 1]}, 2, "query"),
        ({**GOOD, "points": [["x", 1], [2, 2]]}, 2, "points"),
        ({k: v for k, v in GOOD.items() if k != "id"}, 2, "id"),
    ],
)
def test_schema_errors_name_line_and_field(tmp_path, record, line, field):
    path = _write(tmp_path, HEADER, record)
    with pytest.raises(SchemaError) as info:
        read_tracks(path)
    assert info.value.line == line and field in str(info.value)


def test_duplicate_ids_rejected(tmp_path):
    with pytest.raises(SchemaError, match="duplicate"):
        read_tracks(_write(tmp_path, HEADER, GOOD, GOOD))


def test_bad_header(tmp_path):
    with pytest.raises(SchemaError, match="format"):
        read_header(_write(tmp_path, {**HEADER, "format": "other"}))
    with pytest.raises(SchemaError, match="num_frames"):
        read_header(_write(tmp_path, {**HEADER, "num_frames": 0}))
