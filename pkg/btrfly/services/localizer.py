# btrfly/services/localizer.py
import csv
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict

from btrfly.core.config import settings
from btrfly.core.exceptions import DivergenceError, NoSpineDetected, ShapeError
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import DatasetManifest, Split
from btrfly.schemas.report import LocalizationMetrics
from btrfly.schemas.training import LocalizerTrainConfig
from btrfly.schemas.volume import BoundingBox, GeometryLike, Volume, VolumeGeometry
from btrfly.services import checkpoint as checkpoint_service
from btrfly.services import reformation, volume_io
from btrfly.services.schedule import lr_at, seed_everything

logger = logging.getLogger(__name__)

ACTIVE_LEVEL = 0.5


class LocalizationResult(BaseModel):
    """Spine heatmap and box on the localizer grid"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    geometry: VolumeGeometry
    heatmap: np.ndarray
    box: BoundingBox


def localizer_target(volume: GeometryLike, annotations: AnnotationSet, sigma_mm: float = settings.LOCALIZER_SIGMA_MM) -> np.ndarray:
    """Single-channel target: pointwise max of all vertebra Gaussians (zeros without annotations)"""
    geometry = volume.geometry if isinstance(volume, Volume) else volume
    target = np.zeros(geometry.shape, dtype=np.float64)
    for label in annotations:
        np.maximum(target, reformation.gaussian_map(geometry, annotations.position(label), sigma_mm), out=target)
    return target


def localizer_input(volume: Volume, res_mm: float = settings.LOCALIZER_RESOLUTION_MM, factor: int = 8) -> Volume:
    """HU clipping, isotropic resampling and -1000 padding to a multiple of `factor`"""
    resampled = volume_io.resample_isotropic(volume_io.normalize_hu(volume), res_mm)
    return volume_io.pad_to_multiple(resampled, factor)


@torch.no_grad()
def localizer_forward(model: SpineLocalizerNet, volume: Volume) -> np.ndarray:
    """
    Spine heatmap in [0, 1] on the grid of `volume` (already at localizer resolution).

    Pads with -1000 to the network's downsampling factor and crops the output back.
    """
    model.eval()
    padded = volume_io.pad_to_multiple(volume, model.config.downsampling)
    device = next(model.parameters()).device
    x = torch.from_numpy(reformation.to_network_input(padded.data))[None, None].to(device)
    out = model(x)[0, 0].cpu().numpy().astype(np.float64)
    h, w, d = volume.shape
    return out[:h, :w, :d]


def extract_bbox(heatmap: np.ndarray, pad_vox: int = settings.BBOX_PAD_VOX) -> BoundingBox:
    """
    Box around voxels >= 0.5, spanning the full height along axis 0.

    Raises:
        NoSpineDetected: no voxel reaches 0.5
    """
    if heatmap.ndim != 3:
        raise ShapeError(f"expected a 3D heatmap, got shape {heatmap.shape}")
    active = np.argwhere(heatmap >= ACTIVE_LEVEL)
    if active.size == 0:
        raise NoSpineDetected("no voxel of the spine heatmap reaches 0.5")
    lower = active.min(axis=0) - pad_vox
    upper = active.max(axis=0) + pad_vox
    lower[0], upper[0] = 0, heatmap.shape[0] - 1
    box = BoundingBox(lower=tuple(int(v) for v in lower), upper=tuple(int(v) for v in upper), padding_vox=pad_vox)
    return box.clamped(heatmap.shape)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    overlap = [min(ua, ub) - max(la, lb) + 1 for la, ua, lb, ub in zip(a.lower, a.upper, b.lower, b.upper)]
    intersection = int(np.prod([max(0, n) for n in overlap]))
    union = a.volume_vox + b.volume_vox - intersection
    return intersection / union


def loc_metrics(pred_boxes: Sequence[BoundingBox], true_boxes: Sequence[BoundingBox]) -> LocalizationMetrics:
    """Mean IoU and the fraction of scans with IoU > 0.5"""
    if len(pred_boxes) != len(true_boxes):
        raise ValueError(f"{len(pred_boxes)} predicted boxes for {len(true_boxes)} scans")
    return summarize_ious([box_iou(p, t) for p, t in zip(pred_boxes, true_boxes)])


def summarize_ious(ious: list[float]) -> LocalizationMetrics:
    if not ious:
        return LocalizationMetrics(mean_iou=0.0, detection_rate=0.0, ious=[])
    return LocalizationMetrics(
        mean_iou=float(np.mean(ious)),
        detection_rate=float(np.mean([iou > ACTIVE_LEVEL for iou in ious])),
        ious=ious,
    )


def localize_volume(
    model: SpineLocalizerNet,
    volume: Volume,
    pad_vox: int = settings.BBOX_PAD_VOX,
    res_mm: float = settings.LOCALIZER_RESOLUTION_MM,
) -> LocalizationResult:
    prepared = localizer_input(volume, res_mm, model.config.downsampling)
    heatmap = localizer_forward(model, prepared)
    return LocalizationResult(geometry=prepared.geometry, heatmap=heatmap, box=extract_bbox(heatmap, pad_vox))


def localize_from_annotations(
    volume: Volume,
    annotations: AnnotationSet,
    pad_vox: int = settings.BBOX_PAD_VOX,
    res_mm: float = settings.LOCALIZER_RESOLUTION_MM,
    sigma_mm: float = settings.LOCALIZER_SIGMA_MM,
) -> LocalizationResult:
    """Reference localization from the annotation heatmap; the true box of a scan"""
    annotations.check_within(volume)
    prepared = localizer_input(volume, res_mm)
    heatmap = localizer_target(prepared, annotations, sigma_mm)
    return LocalizationResult(geometry=prepared.geometry, heatmap=heatmap, box=extract_bbox(heatmap, pad_vox))


def load_localizer(path: Path, device: Optional[torch.device] = None) -> SpineLocalizerNet:
    model = checkpoint_service.load_model(path, checkpoint_service.NetworkKind.LOCALIZER)
    return model.to(device or checkpoint_service.resolve_device())


def _load_scans(manifest_path: Path, split: Split, cfg: LocalizerTrainConfig):
    manifest = DatasetManifest.load(manifest_path)
    root = Path(manifest_path).parent
    scans = []
    for record in manifest.require_scans(split):
        raw = volume_io.load_volume(root / record.volume_path)
        annotations = volume_io.load_annotations(root / record.annotation_path, within=raw)
        volume = localizer_input(raw, cfg.resolution_mm, cfg.model.downsampling)
        scans.append((record.scan_id, volume, localizer_target(volume, annotations, cfg.sigma_mm)))
    return scans


def train_localizer(manifest_path: Path, cfg: LocalizerTrainConfig, out_dir: Path) -> Path:
    """
    Fits the spine localizer with an l2 loss against annotation heatmaps.

    One scan per step (scan sizes differ); Adam with the step-decayed rate.

    Returns:
        Path of the final checkpoint

    Raises:
        EmptyDataset: no training scans
        DivergenceError: the loss became NaN or infinite
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(cfg.seed, cfg.deterministic)
    device = checkpoint_service.resolve_device(cfg.device)
    scans = _load_scans(Path(manifest_path), Split.TRAIN, cfg)
    tensors = [
        (
            torch.from_numpy(reformation.to_network_input(volume.data))[None, None],
            torch.from_numpy(target.astype(np.float32))[None, None],
        )
        for _, volume, target in scans
    ]
    model = SpineLocalizerNet(cfg.model).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=cfg.adam_betas)
    rng = np.random.default_rng(cfg.seed)
    logger.info("Training localizer on %d scans for %d iterations (%s)", len(scans), cfg.total_iters, device)

    log_path = out_dir / "localizer_log.csv"
    with open(log_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "lr", "l2"])
        model.train()
        for iteration in range(cfg.total_iters):
            lr = lr_at(iteration, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            x, y = tensors[int(rng.integers(len(tensors)))]
            loss = F.mse_loss(model(x.to(device)), y.to(device))
            if not torch.isfinite(loss):
                logger.warning("Localizer loss is %s at iteration %d", loss.item(), iteration)
                raise DivergenceError("localizer loss diverged", iteration=iteration)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            writer.writerow([iteration, lr, loss.item()])
            if iteration % cfg.log_every == 0:
                logger.info("localizer iter=%d lr=%.2e l2=%.5f", iteration, lr, loss.item())
            if (iteration + 1) % cfg.checkpoint_every == 0:
                checkpoint_service.save_checkpoint(
                    out_dir / f"localizer_{iteration + 1:06d}.pt", model, iteration=iteration + 1, train_config=cfg
                )
    return checkpoint_service.save_checkpoint(
        out_dir / "localizer.pt", model, iteration=cfg.total_iters, train_config=cfg
    )


def evaluate_localizer(
    model: SpineLocalizerNet,
    manifest_path: Path,
    split: Split = Split.TEST,
    pad_vox: int = settings.BBOX_PAD_VOX,
) -> LocalizationMetrics:
    """Compares predicted boxes with boxes of the annotation heatmaps; a missed spine scores IoU 0"""
    manifest = DatasetManifest.load(manifest_path)
    root = Path(manifest_path).parent
    ious = []
    for record in manifest.require_scans(split):
        volume = volume_io.load_volume(root / record.volume_path)
        annotations = volume_io.load_annotations(root / record.annotation_path, within=volume)
        truth = localize_from_annotations(volume, annotations, pad_vox).box
        try:
            ious.append(box_iou(localize_volume(model, volume, pad_vox).box, truth))
        except NoSpineDetected:
            logger.warning("No spine detected in %s", record.scan_id)
            ious.append(0.0)
    return summarize_ious(ious)
