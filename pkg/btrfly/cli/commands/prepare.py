# btrfly/cli/commands/prepare.py
from pathlib import Path

import click

from btrfly.cli.common import existing_file, output_dir
from btrfly.core.config import settings
from btrfly.schemas.projection import ProjectionKind
from btrfly.services.dataset import PrepareOptions, prepare_dataset
from btrfly.services.reproducibility import write_run_record

TRAINABLE_KINDS = [ProjectionKind.NAIVE_MIP.value, ProjectionKind.LOCALIZED_MIP.value]


@click.command()
@click.argument("manifest", type=existing_file)
@click.option("--out", "out_dir", type=output_dir, default=None, help="Default: BTRFLY_CACHE_DIR/prepared/<dataset>")
@click.option("--kind", type=click.Choice(TRAINABLE_KINDS), default=ProjectionKind.NAIVE_MIP.value, show_default=True)
@click.option("--dual-input", is_flag=True, help="Also store the weighted meanIP of each view")
@click.option("--localizer", type=existing_file, default=None, help="Localizer checkpoint for boxes and weights")
@click.option("--n-aug", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--resolution", type=float, default=settings.WORKING_RESOLUTION_MM, show_default=True)
@click.option("--sigma", type=float, default=settings.LABEL_SIGMA_MM, show_default=True, help="Target spread (mm)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
def command(manifest, out_dir, kind, dual_input, localizer, n_aug, resolution, sigma, seed, jobs):
    """Project scans and targets into 2D training pairs."""
    out_dir = out_dir or settings.prepared_cache / manifest.parent.name
    options = PrepareOptions(
        resolution_mm=resolution,
        sigma_mm=sigma,
        n_aug=n_aug,
        kind=ProjectionKind(kind),
        dual_input=dual_input,
        localizer_checkpoint=str(localizer) if localizer else None,
        seed=seed,
        jobs=jobs,
    )
    prepared = prepare_dataset(manifest, out_dir, options)
    write_run_record(
        out_dir,
        "prepare",
        config=options,
        seeds={"seed": seed},
        checkpoints=[localizer] if localizer else None,
    )
    click.echo(f"{len(prepared.samples)} samples written to {Path(out_dir) / 'prepared_manifest.json'}")
