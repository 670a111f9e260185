"""Self-supervised any-point tracking with global-matching contrastive random walks."""

from gmrw.core import (
    CoordinateGrid,
    DimensionError,
    GMRWError,
    QueryPoint,
    RangeError,
    ShapeError,
    Track,
    TrackSet,
    VideoClip,
    grid_coordinates,
    validate_clip,
)

__version__ = "0.1.0"

__all__ = [
    "CoordinateGrid",
    "DimensionError",
    "GMRWError",
    "QueryPoint",
    "RangeError",
    "ShapeError",
    "Track",
    "TrackSet",
    "VideoClip",
    "grid_coordinates",
    "validate_clip",
]
