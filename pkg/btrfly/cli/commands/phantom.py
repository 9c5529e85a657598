# btrfly/cli/commands/phantom.py
from pathlib import Path

import click

from btrfly.cli.common import output_dir
from btrfly.core.config import settings
from btrfly.schemas.dataset import FovPolicy
from btrfly.services.phantom import generate_dataset
from btrfly.services.reproducibility import write_run_record


@click.command()
@click.option("--n", "n_scans", type=click.IntRange(min=1), required=True, help="Number of scans")
@click.option("--policy", type=click.Choice([p.value for p in FovPolicy]), default=FovPolicy.MIXED.value, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ribs/--no-ribs", default=False, help="Add anterior rib arcs to thoracic levels")
@click.option("--resolution", type=click.FloatRange(min=0, min_open=True), default=settings.WORKING_RESOLUTION_MM, show_default=True)
@click.option("--noise-sd", type=click.FloatRange(min=0), default=None, help="HU noise inside the body")
@click.option("--out", "out_dir", type=output_dir, default=Path("phantoms"), show_default=True)
def command(n_scans, policy, seed, ribs, resolution, noise_sd, out_dir):
    """Generate a synthetic phantom dataset with exact centroids."""
    manifest = generate_dataset(
        n_scans,
        FovPolicy(policy),
        seed,
        out_dir,
        include_ribs=ribs,
        resolution_mm=resolution,
        noise_sd=noise_sd,
    )
    write_run_record(
        out_dir,
        "phantom",
        config={"n_scans": n_scans, "policy": policy, "ribs": ribs, "resolution_mm": resolution, "noise_sd": noise_sd},
        seeds={"seed": seed},
    )
    click.echo(f"{len(manifest.scans)} scans written to {out_dir / 'manifest.json'}")
