# btrfly/cli/commands/train.py
from pathlib import Path

import click

from btrfly.cli.common import device_option, existing_file, output_dir
from btrfly.schemas.training import LocalizerTrainConfig, TrainConfig, TrainMode, load_config
from btrfly.services.localizer import train_localizer
from btrfly.services.reproducibility import write_run_record
from btrfly.services.trainer import train


@click.command()
@click.argument("manifest", type=existing_file)
@click.option("--network", type=click.Choice(["labeller", "localizer"]), default="labeller", show_default=True)
@click.option("--mode", type=click.Choice([m.value for m in TrainMode]), default=None, help="Labeller regime")
@click.option("--config", "config_path", type=existing_file, default=None, help="YAML run configuration")
@click.option("--iters", type=click.IntRange(min=1), default=None, help="Total iterations")
@click.option("--batch-size", type=click.IntRange(min=1), default=None)
@click.option("--lr0", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--baseline", is_flag=True, help="Cor.+Sag. arms without fusion")
@click.option("--workers", type=click.IntRange(min=0), default=None, help="Data loader processes")
@device_option()
@click.option("--out", "out_dir", type=output_dir, default=Path("runs/train"), show_default=True)
def command(manifest, network, mode, config_path, iters, batch_size, lr0, seed, baseline, workers, device, out_dir):
    """
    Train the labeller on a prepared manifest, or the localizer on a dataset manifest.

    Flags override values from --config.
    """
    overrides = {"total_iters": iters, "lr0": lr0, "seed": seed, "device": device}
    if network == "localizer":
        cfg = load_config(LocalizerTrainConfig, config_path, overrides)
        final = train_localizer(manifest, cfg, out_dir)
        bundle = final
    else:
        overrides.update({"mode": mode, "batch_size": batch_size, "num_workers": workers})
        if baseline:
            overrides["model"] = {"arms_fused": False}
        cfg = load_config(TrainConfig, config_path, overrides)
        result = train(manifest, cfg, out_dir)
        final, bundle = result.checkpoint, result.bundle
    write_run_record(out_dir, f"train {network}", config=cfg, seeds={"seed": cfg.seed}, checkpoints=[final, bundle])
    click.echo(f"checkpoint: {final}")
    if bundle != final:
        click.echo(f"inference bundle: {bundle}")
