"""gazemesh: simulated multi-device synchronized gaze pipeline.

Clock sync over probe exchanges with RANSAC drift fitting, shared-view gaze
projection via planar homographies, a partitioned stream hub, collective
gaze metrics, deterministic renders, and a session orchestrator with a live
operator API.
"""

from .analysis import GazeSeries, HeatmapGrid
from .projection import Correspondence, Homography, TransformedGaze
from .scenesim import FeatureFrame, GazeSample, Scene, SimDevice, StreamMetrics, Target
from .streamhub import Record, SessionAnnotation, StreamHub
from .timesync import ClockModel, OffsetProbe, OffsetSample, TimeMap

__version__ = "0.1.0"

__all__ = [
    "ClockModel",
    "Correspondence",
    "FeatureFrame",
    "GazeSample",
    "GazeSeries",
    "HeatmapGrid",
    "Homography",
    "OffsetProbe",
    "OffsetSample",
    "Record",
    "Scene",
    "SessionAnnotation",
    "SimDevice",
    "StreamMetrics",
    "StreamHub",
    "Target",
    "TimeMap",
    "TransformedGaze",
    "__version__",
]
