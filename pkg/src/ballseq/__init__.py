"""Ball detection on heatmaps with temporal heads over frame histories."""

from .datamodel import BallCenter, BoundingBoxAnnotation, Heatmap, ImageFrame, SequenceSample, teaching_signal
from .estimators import BallDetector, HeatmapCenterExtractor, TemporalBallPredictor
from .exceptions import AnnotationError, CheckpointError, DataError, NumericError
from .ffnet import ModelSpec, SweatyNet, Variant, build_model, param_count
from .metrics import ConfusionCounts, compute_metrics
from .postproc import extract_center
from .temporal import FusionGate, HeadKind, TemporalHeadSpec, build_head

__version__ = "0.1.0"

__all__ = [
    "AnnotationError", "BallCenter", "BallDetector", "BoundingBoxAnnotation", "CheckpointError",
    "ConfusionCounts", "DataError", "FusionGate", "HeadKind", "Heatmap", "HeatmapCenterExtractor",
    "ImageFrame", "ModelSpec", "NumericError", "SequenceSample", "SweatyNet", "TemporalBallPredictor",
    "TemporalHeadSpec", "Variant", "build_head", "build_model", "compute_metrics", "extract_center",
    "param_count", "teaching_signal",
]
