# btrfly/cli/commands/latent.py
from pathlib import Path

import click

from btrfly.cli.common import SPLITS, checkpoint_option, device_option, existing_file, load_labeller
from btrfly.schemas.dataset import Split
from btrfly.services.dataset import PreparedDataset
from btrfly.services.metrics import export_latent_codes
from btrfly.services.reproducibility import write_run_record


@click.command()
@click.argument("prepared_manifest", type=existing_file)
@checkpoint_option()
@click.option("--split", type=SPLITS, default="test", show_default=True)
@device_option()
@click.option("--out", "out_csv", type=click.Path(dir_okay=False, path_type=Path), default=Path("runs/latent/codes.csv"), show_default=True)
def command(prepared_manifest, checkpoint, split, device, out_csv):
    """Export bottleneck latent codes (one row per scan and code) as CSV."""
    model = load_labeller(checkpoint, device)
    dataset = PreparedDataset(prepared_manifest, Split(split))
    dataset.require_samples()
    frame = export_latent_codes(model, dataset, out_csv)
    write_run_record(out_csv.parent, "latent", config={"split": split}, checkpoints=[checkpoint])
    click.echo(f"{len(frame)} codes written to {out_csv}")
