# btrfly/cli/commands/infer.py
import logging
from pathlib import Path

import click

from btrfly.cli.common import (
    SPLITS,
    checkpoint_option,
    device_option,
    existing_file,
    load_labeller,
    manifest_scans,
    maybe_localizer,
    output_dir,
)
from btrfly.core.config import settings
from btrfly.schemas.annotation import AnnotationSet
from btrfly.services import volume_io
from btrfly.services.inference import InferenceOptions, infer_volume
from btrfly.services.reproducibility import write_run_record

logger = logging.getLogger(__name__)


@click.command()
@click.argument("source", type=existing_file)
@checkpoint_option()
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True)
@click.option("--localize", "localizer_path", type=existing_file, default=None, help="Localizer checkpoint; enables localized MIPs")
@click.option("--split", type=SPLITS, default="test", show_default=True, help="Scans to label when SOURCE is a manifest")
@click.option("--resolution", type=float, default=settings.WORKING_RESOLUTION_MM, show_default=True)
@device_option()
@click.option("--out", "out_dir", type=output_dir, default=Path("runs/predictions"), show_default=True)
def command(source, checkpoint, threshold, localizer_path, split, resolution, device, out_dir):
    """
    Predict vertebra centroids for a volume or for every scan of a manifest split.

    Writes one {scan_id}.json annotation file per scan, with confidences.
    """
    model = load_labeller(checkpoint, device)
    localizer = maybe_localizer(localizer_path, device)
    options = InferenceOptions(threshold=threshold, resolution_mm=resolution)
    if source.suffix == ".json":
        jobs = [(r.scan_id, source.parent / r.volume_path) for r in manifest_scans(source, split)]
    else:
        jobs = [(source.name.split(".")[0], source)]

    out_dir.mkdir(parents=True, exist_ok=True)
    for scan_id, volume_path in jobs:
        predicted: AnnotationSet = infer_volume(model, volume_io.load_volume(volume_path), options, localizer)
        predicted.save(out_dir / f"{scan_id}.json")
        labels = ", ".join(label.name for label in predicted) or "none"
        click.echo(f"{scan_id}: {labels}")
    write_run_record(
        out_dir,
        "infer",
        config=options,
        checkpoints=[checkpoint] + ([localizer_path] if localizer_path else []),
    )
