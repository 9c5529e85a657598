# btrfly/services/dataset.py
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch.utils.data import Dataset

from btrfly.core.config import settings
from btrfly.core.exceptions import EmptyDataset
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import (
    DatasetManifest,
    PreparedManifest,
    PreparedSample,
    PreparedScan,
    ScanRecord,
    Split,
)
from btrfly.schemas.projection import ProjectionKind, ProjectionSpec, View
from btrfly.schemas.sample import PairSample, ViewSample
from btrfly.schemas.volume import BoundingBox, Volume
from btrfly.services import localizer as localizer_service
from btrfly.services import reformation, volume_io

logger = logging.getLogger(__name__)

VIEWS = (View.SAGITTAL, View.CORONAL)


class PrepareOptions(BaseModel):
    """How scans are turned into 2D training pairs"""
    resolution_mm: float = Field(settings.WORKING_RESOLUTION_MM, gt=0.0)
    sigma_mm: float = Field(settings.LABEL_SIGMA_MM, gt=0.0)
    n_aug: int = Field(10, ge=1, description="Slab projections per training scan")
    kind: ProjectionKind = ProjectionKind.NAIVE_MIP
    dual_input: bool = False
    localizer_checkpoint: Optional[str] = Field(
        None, description="Localizer used for boxes/weights; annotations are used when absent"
    )
    bbox_pad_vox: int = Field(settings.BBOX_PAD_VOX, ge=0)
    seed: int = 0
    jobs: int = Field(1, ge=1)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@lru_cache(maxsize=2)
def _cached_localizer(path: str):
    return localizer_service.load_localizer(Path(path))


def _localization(
    volume: Volume,
    processed: Volume,
    annotations: AnnotationSet,
    options: PrepareOptions,
) -> tuple[BoundingBox, np.ndarray]:
    """Spine box and weight map on the processed grid, from the localizer or the annotations"""
    if options.localizer_checkpoint:
        model = _cached_localizer(options.localizer_checkpoint)
        result = localizer_service.localize_volume(model, volume, pad_vox=options.bbox_pad_vox)
    else:
        result = localizer_service.localize_from_annotations(volume, annotations, pad_vox=options.bbox_pad_vox)
    box = result.box.rescaled(result.geometry, processed)
    weights = volume_io.resample_to_geometry(result.heatmap, result.geometry, processed.geometry)
    return box, weights


def _spec(view: View, kind: ProjectionKind, box: Optional[BoundingBox]) -> ProjectionSpec:
    if kind is ProjectionKind.LOCALIZED_MIP:
        return ProjectionSpec(view=view, kind=kind, box=box)
    return ProjectionSpec(view=view, kind=ProjectionKind.NAIVE_MIP)


def prepare_scan(
    record: ScanRecord,
    root: Path,
    out_dir: Path,
    scan_index: int,
    options: PrepareOptions,
) -> tuple[PreparedScan, list[PreparedSample]]:
    """Projects one scan and writes {scan_id}/{view}/{aug_idx}.npz files"""
    volume = volume_io.load_volume(root / record.volume_path)
    annotations = volume_io.load_annotations(root / record.annotation_path, within=volume)
    processed = volume_io.preprocess(volume, options.resolution_mm)

    box, weights = None, None
    if options.kind is ProjectionKind.LOCALIZED_MIP or options.dual_input:
        box, weights = _localization(volume, processed, annotations, options)

    targets = {
        view: reformation.view_heatmap(processed, annotations, options.sigma_mm, view).data.astype(np.float32)
        for view in VIEWS
    }

    slab_kind = options.kind is ProjectionKind.NAIVE_MIP and record.split is Split.TRAIN
    n_aug = options.n_aug if slab_kind else 1
    samples = []
    for aug_idx in range(n_aug):
        paths = {}
        for view_idx, view in enumerate(VIEWS):
            seed = derive_seed(options.seed, scan_index, aug_idx, view_idx)
            spec = reformation.sample_slab(view, processed, seed) if slab_kind else _spec(view, options.kind, box)
            arrays = {
                "image": reformation.project(processed, spec).astype(np.float32),
                "target": targets[view],
            }
            if options.dual_input:
                mean_spec = ProjectionSpec(view=view, kind=ProjectionKind.WEIGHTED_MEANIP, weights=weights, box=box)
                arrays["image_mean"] = reformation.project(processed, mean_spec).astype(np.float32)
            relative = Path(record.scan_id) / view.value / f"{aug_idx}.npz"
            (out_dir / relative).parent.mkdir(parents=True, exist_ok=True)
            np.savez_compressed(out_dir / relative, **arrays)
            paths[view] = relative.as_posix()
        samples.append(
            PreparedSample(
                scan_id=record.scan_id,
                split=record.split,
                aug_idx=aug_idx,
                sagittal_path=paths[View.SAGITTAL],
                coronal_path=paths[View.CORONAL],
                seed=derive_seed(options.seed, scan_index, aug_idx),
            )
        )
    scan = PreparedScan(
        scan_id=record.scan_id,
        split=record.split,
        geometry=processed.geometry,
        annotation_path=str((root / record.annotation_path).resolve()),
    )
    logger.info("Prepared %s (%s): %d sample(s), grid %s", record.scan_id, record.split.value, n_aug, processed.shape)
    return scan, samples


def prepare_dataset(manifest_path: Path, out_dir: Path, options: Optional[PrepareOptions] = None) -> PreparedManifest:
    """
    Builds 2D training pairs for every scan of a dataset manifest.

    Training scans yield `n_aug` slab projections (naive kind) or one localized
    projection; validation and test scans yield the full projection used at test time.

    Returns:
        The prepared manifest, also written to out_dir/prepared_manifest.json

    Raises:
        EmptyDataset: the manifest lists no scans
    """
    options = options or PrepareOptions()
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(manifest_path)
    records = manifest.require_scans()
    root = manifest_path.parent

    jobs = [(record, root, out_dir, index, options) for index, record in enumerate(records)]
    if options.jobs > 1:
        with ProcessPoolExecutor(max_workers=options.jobs) as pool:
            results = list(pool.map(prepare_scan, *zip(*jobs)))
    else:
        results = [prepare_scan(*job) for job in jobs]

    prepared = PreparedManifest(
        source_manifest=str(manifest_path.resolve()),
        resolution_mm=options.resolution_mm,
        sigma_mm=options.sigma_mm,
        kind=options.kind,
        dual_input=options.dual_input,
        n_aug=options.n_aug,
        scans=[scan for scan, _ in results],
        samples=[sample for _, samples in results for sample in samples],
    )
    prepared.save(out_dir / "prepared_manifest.json")
    logger.info("Prepared dataset with %d samples in %s", len(prepared.samples), out_dir)
    return prepared


def _load_view(path: Path) -> ViewSample:
    with np.load(path) as arrays:
        return ViewSample(
            image=arrays["image"],
            target=arrays["target"],
            image_mean=arrays["image_mean"] if "image_mean" in arrays.files else None,
        )


class PreparedDataset(Dataset):
    """Reads prepared pairs of one split; items are un-augmented PairSamples"""

    def __init__(self, manifest_path: Path, split: Split = Split.TRAIN):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        self.manifest = PreparedManifest.load(self.manifest_path)
        self.samples = self.manifest.samples_in(split)
        self.split = split

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> PairSample:
        sample = self.samples[index]
        return PairSample(
            scan_id=sample.scan_id,
            sagittal=_load_view(self.root / sample.sagittal_path),
            coronal=_load_view(self.root / sample.coronal_path),
        )

    def require_samples(self) -> None:
        if not self.samples:
            raise EmptyDataset(f"{self.manifest_path} has no {self.split.value} samples")


def keep_samples(batch: list[PairSample]) -> list[PairSample]:
    """DataLoader collate that leaves samples as-is; augmentation happens in the loop"""
    return batch


def _pad_2d(array: np.ndarray, height: int, width: int, fill) -> np.ndarray:
    pad = [(0, height - array.shape[0]), (0, width - array.shape[1])] + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, pad, mode="constant", constant_values=fill)


def _pad_target(target: np.ndarray, height: int, width: int) -> np.ndarray:
    padded = _pad_2d(target, height, width, 0.0)
    padded[target.shape[0]:, :, 0] = 1.0
    padded[:, target.shape[1]:, 0] = 1.0
    return padded


class Batch(BaseModel):
    """Network-ready tensors, channels first"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sag: torch.Tensor
    cor: torch.Tensor
    sag_target: torch.Tensor
    cor_target: torch.Tensor
    sag_mean: Optional[torch.Tensor] = None
    cor_mean: Optional[torch.Tensor] = None
    scan_ids: list[str] = Field(default_factory=list)

    def to(self, device: torch.device) -> "Batch":
        moved = {
            name: (value.to(device) if isinstance(value, torch.Tensor) else value)
            for name, value in self.__dict__.items()
        }
        return Batch(**moved)


def collate_samples(samples: list[PairSample], factor: int) -> Batch:
    """Pads every view to a common size divisible by `factor` and stacks into tensors"""
    height = max(max(s.sagittal.image.shape[0], s.coronal.image.shape[0]) for s in samples)
    width = max(max(s.sagittal.image.shape[1], s.coronal.image.shape[1]) for s in samples)
    height += (-height) % factor
    width += (-width) % factor

    def images(view: str, field: str) -> Optional[torch.Tensor]:
        arrays = [getattr(getattr(s, view), field) for s in samples]
        if any(a is None for a in arrays):
            return None
        stacked = [reformation.to_network_input(_pad_2d(a, height, width, settings.HU_FLOOR)) for a in arrays]
        return torch.from_numpy(np.stack(stacked)[:, None])

    def targets(view: str) -> torch.Tensor:
        stacked = [_pad_target(getattr(s, view).target, height, width) for s in samples]
        return torch.from_numpy(np.ascontiguousarray(np.stack(stacked).transpose(0, 3, 1, 2), dtype=np.float32))

    return Batch(
        sag=images("sagittal", "image"),
        cor=images("coronal", "image"),
        sag_mean=images("sagittal", "image_mean"),
        cor_mean=images("coronal", "image_mean"),
        sag_target=targets("sagittal"),
        cor_target=targets("coronal"),
        scan_ids=[s.scan_id for s in samples],
    )
