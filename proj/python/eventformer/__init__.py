"""Event-stream transformer classifier.

Streams are (N, 4) integer rows of x, y, t, p with nondecreasing timestamps.
The model consumes per-stream normalized attributes and returns class scores.
"""

from ._core import (
    ConfigError,
    EventStream,
    FormatError,
    Model,
    ShapeError,
    farthest_point_sampling,
    group_nearest,
    knn_temporal,
    load_dataset,
    load_events,
    normalize,
    sample,
    save_events,
    scan_dataset_root,
    synth_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EventStream",
    "FormatError",
    "Model",
    "ShapeError",
    "farthest_point_sampling",
    "group_nearest",
    "knn_temporal",
    "load_dataset",
    "load_events",
    "normalize",
    "sample",
    "save_events",
    "scan_dataset_root",
    "synth_dataset",
    "__version__",
]
