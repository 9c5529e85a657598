from typing import Optional

from pydantic import BaseModel, Field

from btrfly.core.taxonomy import Region


class PrecisionRecall(BaseModel):
    """Per-scan precision, recall and F1"""
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)


class LocalizationDistances(BaseModel):
    d_mean: float = Field(..., ge=0.0)
    d_std: float = Field(..., ge=0.0)
    per_label: dict[str, float] = Field(default_factory=dict)


class ScanResult(BaseModel):
    scan_id: str
    n_truth: int
    n_pred: int
    n_identified: int
    pr: PrecisionRecall
    d_mean: Optional[float] = None


class RegionSummary(BaseModel):
    """Id rate (%) and localisation distance (mm) over one region or all vertebrae"""
    id_rate: float = Field(..., ge=0.0, le=100.0)
    n_vertebrae: int
    d_mean: Optional[float] = None
    d_std: Optional[float] = None


class ThresholdRow(BaseModel):
    threshold: float
    precision: float
    recall: float
    f1: float


class DistanceRow(BaseModel):
    d_th: float
    id_rate: dict[str, float]


class MetricsReport(BaseModel):
    """Schema for a dataset evaluation"""
    d_th_mm: float = 20.0
    overall: RegionSummary
    regions: dict[Region, RegionSummary] = Field(default_factory=dict)
    scans: list[ScanResult] = Field(default_factory=list)
    mean_precision: float = 0.0
    mean_recall: float = 0.0
    mean_f1: float = 0.0
    threshold_sweep: list[ThresholdRow] = Field(default_factory=list)
    best_threshold: Optional[ThresholdRow] = None
    distance_sweep: list[DistanceRow] = Field(default_factory=list)


class LocalizationMetrics(BaseModel):
    mean_iou: float = Field(..., ge=0.0, le=1.0)
    detection_rate: float = Field(..., ge=0.0, le=1.0)
    ious: list[float] = Field(default_factory=list)
