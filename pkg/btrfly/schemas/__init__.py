from .annotation import AnnotationEntry, AnnotationSet
from .dataset import (
    DatasetManifest,
    FovPolicy,
    PhantomSpec,
    PreparedManifest,
    PreparedSample,
    PreparedScan,
    ScanRecord,
    Split,
)
from .heatmap import HeatmapStack
from .network import BtrflyConfig, EBDConfig, LocalizerConfig, WDConfig
from .projection import ProjectionKind, ProjectionSpec, View
from .sample import PairSample, ViewSample
from .report import LocalizationMetrics, MetricsReport, PrecisionRecall
from .training import AugmentationConfig, LocalizerTrainConfig, TrainConfig, TrainMode
from .volume import BoundingBox, Volume, VolumeGeometry

__all__ = [
    "AnnotationEntry",
    "AnnotationSet",
    "AugmentationConfig",
    "BoundingBox",
    "BtrflyConfig",
    "DatasetManifest",
    "EBDConfig",
    "FovPolicy",
    "HeatmapStack",
    "LocalizationMetrics",
    "LocalizerConfig",
    "LocalizerTrainConfig",
    "MetricsReport",
    "PairSample",
    "PhantomSpec",
    "PrecisionRecall",
    "PreparedManifest",
    "PreparedSample",
    "PreparedScan",
    "ProjectionKind",
    "ProjectionSpec",
    "ScanRecord",
    "Split",
    "TrainConfig",
    "TrainMode",
    "View",
    "ViewSample",
    "Volume",
    "VolumeGeometry",
    "WDConfig",
]
