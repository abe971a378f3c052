"""Deep metric learning with density-aware adaptive line segments."""
from .daal import (
    DaalConfig,
    IntraMode,
    LineSegmentSet,
    TotalLossWeights,
    daal_loss,
    ema_update,
    point_segment_distance,
)
from .estimator import DAALEmbedder
from .losses import ClassifierParams, LossResult, MarginSpec
from .metrics import EvalReport, kmeans, nmi, recall_at_k, recall_average

__all__ = [
    "ClassifierParams",
    "DAALEmbedder",
    "DaalConfig",
    "EvalReport",
    "IntraMode",
    "LineSegmentSet",
    "LossResult",
    "MarginSpec",
    "TotalLossWeights",
    "daal_loss",
    "ema_update",
    "kmeans",
    "nmi",
    "point_segment_distance",
    "recall_at_k",
    "recall_average",
]

__version__ = "0.1.0"
