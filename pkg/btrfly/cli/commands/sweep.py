# btrfly/cli/commands/sweep.py
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
    scan_truth,
)
from btrfly.core.config import settings
from btrfly.services import metrics, plots, volume_io
from btrfly.services.inference import InferenceOptions, centroids_from_views, predict_volume
from btrfly.services.reproducibility import write_run_record


@click.command()
@click.argument("manifest", type=existing_file)
@checkpoint_option()
@click.option("--split", type=SPLITS, default="test", show_default=True)
@click.option("--t-grid", default="0:0.8:0.1", show_default=True, help="start:stop:step or comma list")
@click.option("--dth-grid", default="5:30:5", show_default=True, help="start:stop:step or comma list (mm)")
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, max_open=True), default=0.0, show_default=True, help="T used for the d_th sweep")
@click.option("--d-th", type=click.FloatRange(min=0, min_open=True), default=metrics.DEFAULT_D_TH_MM, show_default=True, help="d_th used for the T sweep")
@click.option("--localize", "localizer_path", type=existing_file, default=None)
@click.option("--resolution", type=float, default=settings.WORKING_RESOLUTION_MM, show_default=True)
@device_option()
@click.option("--out", "out_dir", type=output_dir, default=Path("runs/sweep"), show_default=True)
def command(manifest, checkpoint, split, t_grid, dth_grid, threshold, d_th, localizer_path, resolution, device, out_dir):
    """Precision/recall over T and id rate over d_th, as CSV tables and plots."""
    thresholds = metrics.parse_grid(t_grid)
    distances = metrics.parse_grid(dth_grid)
    if any(not 0.0 <= t < 1.0 for t in thresholds):
        raise click.BadParameter("thresholds must lie in [0, 1)", param_hint="--t-grid")
    if any(d <= 0 for d in distances):
        raise click.BadParameter("distances must be positive", param_hint="--dth-grid")

    model = load_labeller(checkpoint, device)
    localizer = maybe_localizer(localizer_path, device)
    options = InferenceOptions(resolution_mm=resolution)
    records = manifest_scans(manifest, split)
    truths = {r.scan_id: scan_truth(manifest, r) for r in records}
    views = {
        r.scan_id: predict_volume(model, volume_io.load_volume(manifest.parent / r.volume_path), options, localizer)
        for r in records
    }

    def predictions_at(t: float):
        return {sid: centroids_from_views(v.sagittal, v.coronal, v.geometry, t) for sid, v in views.items()}

    pr_rows = metrics.sweep_threshold({t: predictions_at(t) for t in thresholds}, truths, d_th)
    best = metrics.best_threshold(pr_rows)
    dth_rows = metrics.sweep_dth(predictions_at(threshold), truths, distances)

    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.threshold_frame(pr_rows).to_csv(out_dir / "pr_curve.csv", index=False)
    metrics.distance_frame(dth_rows).to_csv(out_dir / "dth_curve.csv", index=False)
    plots.plot_pr_curve(pr_rows, out_dir / "pr_curve", best)
    plots.plot_dth_curves(dth_rows, out_dir / "dth_curve")

    report = metrics.evaluate_predictions(predictions_at(best.threshold if best else threshold), truths, d_th)
    report = report.model_copy(update={"threshold_sweep": pr_rows, "best_threshold": best, "distance_sweep": dth_rows})
    metrics.save_report(report, out_dir)
    write_run_record(
        out_dir,
        "sweep",
        config={"split": split, "t_grid": thresholds, "dth_grid": distances, "threshold": threshold, "d_th_mm": d_th},
        checkpoints=[checkpoint] + ([localizer_path] if localizer_path else []),
    )
    click.echo(metrics.threshold_frame(pr_rows).to_string(index=False))
    if best is not None:
        click.echo(f"F1-optimal T = {best.threshold:.2f} (F1 {best.f1:.3f})")
