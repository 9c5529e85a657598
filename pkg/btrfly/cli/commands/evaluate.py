# btrfly/cli/commands/evaluate.py
from concurrent.futures import ThreadPoolExecutor

import click

from btrfly.cli.common import SPLITS, existing_file, load_predictions, manifest_scans, output_dir, scan_truth
from btrfly.services.metrics import DEFAULT_D_TH_MM, evaluate_predictions, report_table, save_report
from btrfly.services.reproducibility import write_run_record


@click.command()
@click.argument("manifest", type=existing_file)
@click.option("--predictions", "predictions_dir", type=output_dir, required=True, help="Directory written by infer")
@click.option("--split", type=SPLITS, default="test", show_default=True)
@click.option("--d-th", type=click.FloatRange(min=0, min_open=True), default=DEFAULT_D_TH_MM, show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True, help="Scans read in parallel")
@click.option("--out", "out_dir", type=output_dir, default=None, help="Default: the predictions directory")
def command(manifest, predictions_dir, split, d_th, jobs, out_dir):
    """Score predictions: id rate, distances and precision/recall."""
    records = manifest_scans(manifest, split)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        annotations = list(pool.map(lambda record: scan_truth(manifest, record), records))
    truths = {record.scan_id: truth for record, truth in zip(records, annotations)}
    preds = load_predictions(predictions_dir, list(truths))
    report = evaluate_predictions(preds, truths, d_th)
    out_dir = out_dir or predictions_dir
    path = save_report(report, out_dir)
    write_run_record(
        out_dir,
        "evaluate",
        config={"split": split, "d_th_mm": d_th, "jobs": jobs, "predictions": str(predictions_dir)},
    )
    click.echo(report_table(report))
    click.echo(f"report: {path}")
