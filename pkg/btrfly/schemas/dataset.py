import json
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from btrfly.core.exceptions import EmptyDataset, InvalidLabel
from btrfly.core.taxonomy import NUM_VERTEBRAE, VertebraLabel
from btrfly.schemas.projection import ProjectionKind
from btrfly.schemas.volume import VolumeGeometry

MANIFEST_VERSION = 1


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class FovPolicy(str, Enum):
    CERVICAL = "cervical"
    THORACIC = "thoracic"
    LUMBAR = "lumbar"
    FULL = "full"
    MIXED = "mixed"


class PhantomSpec(BaseModel):
    """Parameters of one synthetic spine phantom"""
    n_vertebrae: int = Field(5, ge=1, le=NUM_VERTEBRAE)
    start_label: VertebraLabel = VertebraLabel.L1
    spacing_mm: float = Field(18.0, gt=0.0, description="Centroid-to-centroid distance along the spine")
    curvature: float = Field(4.0, ge=0.0, description="Amplitude (mm) of the curved spine path")
    noise_sd: float = Field(10.0, ge=0.0, description="Gaussian noise in HU inside the body")
    include_ribs: bool = False
    resolution_mm: float = Field(2.0, gt=0.0)
    lateral_fov_mm: float = Field(160.0, gt=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _label_range(self) -> "PhantomSpec":
        if int(self.start_label) + self.n_vertebrae - 1 > NUM_VERTEBRAE:
            raise InvalidLabel(
                f"{self.n_vertebrae} vertebrae from {self.start_label.name} run past S2"
            )
        return self

    @property
    def labels(self) -> list[VertebraLabel]:
        return [VertebraLabel(int(self.start_label) + i) for i in range(self.n_vertebrae)]


class ScanRecord(BaseModel):
    """One scan of a dataset manifest; paths relative to the manifest directory"""
    scan_id: str
    volume_path: str
    annotation_path: str
    split: Split
    fov: Optional[FovPolicy] = None
    has_ribs: bool = False


class _ManifestIO(BaseModel):

    def save(self, path: Path) -> None:
        Path(path).write_text(self.model_dump_json(indent=2))

    @classmethod
    def load(cls, path: Path):
        return cls.model_validate(json.loads(Path(path).read_text()))


class DatasetManifest(_ManifestIO):
    """Schema for a raw dataset: volumes + annotations + split assignment"""
    version: int = MANIFEST_VERSION
    seed: Optional[int] = None
    fov_policy: Optional[FovPolicy] = None
    scans: list[ScanRecord] = Field(default_factory=list)

    def by_split(self, split: Split) -> list[ScanRecord]:
        return [scan for scan in self.scans if scan.split is split]

    def require_scans(self, split: Optional[Split] = None) -> list[ScanRecord]:
        scans = self.scans if split is None else self.by_split(split)
        if not scans:
            raise EmptyDataset(f"manifest has no scans{'' if split is None else f' in split {split.value}'}")
        return scans


class PreparedSample(BaseModel):
    """Paired sagittal/coronal arrays; each .npz holds `image` (+ `image_mean`) and `target`"""
    scan_id: str
    split: Split
    aug_idx: int
    sagittal_path: str
    coronal_path: str
    seed: Optional[int] = None


class PreparedScan(BaseModel):
    """Geometry of the processed (resampled, padded) volume a sample was projected from"""
    scan_id: str
    split: Split
    geometry: VolumeGeometry
    annotation_path: str


class PreparedManifest(_ManifestIO):
    """Schema for a prepared dataset of 2D reformations and projected targets"""
    version: int = MANIFEST_VERSION
    source_manifest: str
    resolution_mm: float
    sigma_mm: float
    kind: ProjectionKind
    dual_input: bool = False
    n_aug: int
    scans: list[PreparedScan] = Field(default_factory=list)
    samples: list[PreparedSample] = Field(default_factory=list)

    def samples_in(self, split: Split) -> list[PreparedSample]:
        return [sample for sample in self.samples if sample.split is split]

    def scan(self, scan_id: str) -> PreparedScan:
        for scan in self.scans:
            if scan.scan_id == scan_id:
                return scan
        raise KeyError(scan_id)
