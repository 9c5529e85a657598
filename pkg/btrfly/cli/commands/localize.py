# btrfly/cli/commands/localize.py
import json
from pathlib import Path

import click

from btrfly.cli.common import device_option, existing_file, output_dir
from btrfly.core.config import settings
from btrfly.schemas.volume import Volume
from btrfly.services import volume_io
from btrfly.services.checkpoint import resolve_device
from btrfly.services.localizer import load_localizer, localize_volume
from btrfly.services.reproducibility import write_run_record


@click.command()
@click.argument("volume_path", type=existing_file)
@click.option("--checkpoint", type=existing_file, required=True, help="Localizer checkpoint")
@click.option("--pad", type=click.IntRange(min=0), default=settings.BBOX_PAD_VOX, show_default=True)
@device_option()
@click.option("--out", "out_dir", type=output_dir, default=Path("runs/localize"), show_default=True)
def command(volume_path, checkpoint, pad, device, out_dir):
    """Detect the spine and write its bounding box and heatmap."""
    model = load_localizer(checkpoint, resolve_device(device))
    result = localize_volume(model, volume_io.load_volume(volume_path), pad_vox=pad)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = volume_path.name.split(".")[0]
    heatmap_path = volume_io.save_volume(
        Volume(data=result.heatmap.astype("float32"), spacing=result.geometry.spacing, origin=result.geometry.origin),
        out_dir / f"{stem}_spine.nii.gz",
    )
    payload = {
        "box_lower_vox": list(result.box.lower),
        "box_upper_vox": list(result.box.upper),
        "heatmap_path": str(heatmap_path),
        "spacing_mm": list(result.geometry.spacing),
    }
    json_path = out_dir / f"{stem}_localization.json"
    json_path.write_text(json.dumps(payload, indent=2))
    write_run_record(out_dir, "localize", config={"pad_vox": pad, "volume": str(volume_path)}, checkpoints=[checkpoint])
    click.echo(json.dumps(payload))
