# btrfly/cli/common.py
from pathlib import Path
from typing import Optional

import click

from btrfly.core.exceptions import FormatError
from btrfly.models.btrfly import BtrflyNet
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import DatasetManifest, ScanRecord, Split
from btrfly.services import checkpoint as checkpoint_service
from btrfly.services import volume_io
from btrfly.services.localizer import load_localizer

SPLITS = click.Choice([s.value for s in Split])

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
output_dir = click.Path(file_okay=False, path_type=Path)


def checkpoint_option(required: bool = True):
    return click.option(
        "--checkpoint", "checkpoint", type=existing_file, required=required, help="Labeller checkpoint or bundle"
    )


def device_option():
    return click.option("--device", default=None, help="cpu, cuda or auto (default: DEVICE setting)")


def load_labeller(path: Path, device: Optional[str] = None) -> BtrflyNet:
    model = checkpoint_service.load_model(path, checkpoint_service.NetworkKind.LABELLER)
    return model.to(checkpoint_service.resolve_device(device))


def maybe_localizer(path: Optional[Path], device: Optional[str] = None) -> Optional[SpineLocalizerNet]:
    if path is None:
        return None
    return load_localizer(path, checkpoint_service.resolve_device(device))


def manifest_scans(manifest_path: Path, split: str) -> list[ScanRecord]:
    return DatasetManifest.load(manifest_path).require_scans(Split(split))


def scan_truth(manifest_path: Path, record: ScanRecord) -> AnnotationSet:
    """Ground truth of a scan, checked against the header of its volume"""
    root = manifest_path.parent
    geometry = volume_io.load_geometry(root / record.volume_path)
    return volume_io.load_annotations(root / record.annotation_path, within=geometry)


def load_predictions(directory: Path, scan_ids: list[str]) -> dict[str, AnnotationSet]:
    """Reads {scan_id}.json prediction files; a missing file means nothing was predicted"""
    if not directory.is_dir():
        raise FormatError(f"prediction directory {directory} does not exist")
    predictions = {}
    for scan_id in scan_ids:
        path = directory / f"{scan_id}.json"
        predictions[scan_id] = AnnotationSet.load(path) if path.exists() else AnnotationSet()
    return predictions
