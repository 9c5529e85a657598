# btrfly/services/metrics.py
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from btrfly.core.exceptions import EmptyOverlap
from btrfly.core.taxonomy import Region, VertebraLabel, region_of
from btrfly.models.btrfly import BtrflyNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.report import (
    DistanceRow,
    LocalizationDistances,
    MetricsReport,
    PrecisionRecall,
    RegionSummary,
    ScanResult,
    ThresholdRow,
)
from btrfly.services.dataset import PreparedDataset, collate_samples

logger = logging.getLogger(__name__)

DEFAULT_D_TH_MM = 20.0
OVERALL = "overall"


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.subtract(a, b)))


def identify(pred: AnnotationSet, truth: AnnotationSet, d_th: float = DEFAULT_D_TH_MM) -> dict[VertebraLabel, bool]:
    """
    Identification flag per ground-truth label.

    v is identified when it is predicted, lies closer than `d_th` mm to its
    true centroid and no other true centroid is strictly closer.
    """
    if d_th <= 0:
        raise ValueError(f"d_th must be positive, got {d_th}")
    flags = {}
    for label in truth:
        if label not in pred:
            flags[label] = False
            continue
        p = pred.position(label)
        own = _distance(p, truth.position(label))
        nearest = all(own <= _distance(p, truth.position(other)) for other in truth if other is not label)
        flags[label] = own < d_th and nearest
    return flags


def localization_distances(pred: AnnotationSet, truth: AnnotationSet) -> LocalizationDistances:
    """
    Raises:
        EmptyOverlap: no label is both predicted and annotated
    """
    common = [label for label in truth if label in pred]
    if not common:
        raise EmptyOverlap("predictions and annotations share no vertebra")
    per_label = {label.name: _distance(pred.position(label), truth.position(label)) for label in common}
    values = np.fromiter(per_label.values(), dtype=np.float64)
    return LocalizationDistances(d_mean=float(values.mean()), d_std=float(values.std()), per_label=per_label)


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2.0 * precision * recall / (precision + recall)


def precision_recall(pred: AnnotationSet, truth: AnnotationSet, d_th: float = DEFAULT_D_TH_MM) -> PrecisionRecall:
    """Per-scan P, R and F1; identified labels are the true positives"""
    tp = sum(identify(pred, truth, d_th).values())
    recall = tp / len(truth) if len(truth) else 1.0
    precision = tp / len(pred) if len(pred) else 1.0
    return PrecisionRecall(precision=precision, recall=recall, f1=f1_score(precision, recall))


def _region_key(label: VertebraLabel) -> str:
    return region_of(label).value


def _identification_frame(
    preds: Mapping[str, AnnotationSet], truths: Mapping[str, AnnotationSet], d_th: float
) -> pd.DataFrame:
    """One row per annotated vertebra: scan, label, region, identified, distance (NaN when missed)"""
    rows = []
    for scan_id, truth in truths.items():
        pred = preds.get(scan_id, AnnotationSet())
        for label, identified in identify(pred, truth, d_th).items():
            distance = _distance(pred.position(label), truth.position(label)) if label in pred else np.nan
            rows.append(
                {
                    "scan_id": scan_id,
                    "label": label.name,
                    "region": _region_key(label),
                    "identified": identified,
                    "distance": distance,
                }
            )
    return pd.DataFrame(rows, columns=["scan_id", "label", "region", "identified", "distance"])


def _summary(frame: pd.DataFrame) -> RegionSummary:
    distances = frame["distance"].dropna()
    return RegionSummary(
        id_rate=100.0 * float(frame["identified"].mean()) if len(frame) else 0.0,
        n_vertebrae=len(frame),
        d_mean=float(distances.mean()) if len(distances) else None,
        d_std=float(distances.std(ddof=0)) if len(distances) else None,
    )


def evaluate_predictions(
    preds: Mapping[str, AnnotationSet],
    truths: Mapping[str, AnnotationSet],
    d_th: float = DEFAULT_D_TH_MM,
) -> MetricsReport:
    """
    Dataset-level report.

    The id rate pools all annotated vertebrae of the dataset; precision and
    recall are computed per scan and averaged. Distances cover labels present
    in both sets only.
    """
    frame = _identification_frame(preds, truths, d_th)
    regions = {
        Region(name): _summary(group) for name, group in frame.groupby("region", sort=False)
    }
    scans = []
    for scan_id, truth in truths.items():
        pred = preds.get(scan_id, AnnotationSet())
        pr = precision_recall(pred, truth, d_th)
        try:
            d_mean: Optional[float] = localization_distances(pred, truth).d_mean
        except EmptyOverlap:
            d_mean = None
        scans.append(
            ScanResult(
                scan_id=scan_id,
                n_truth=len(truth),
                n_pred=len(pred),
                n_identified=int(sum(identify(pred, truth, d_th).values())),
                pr=pr,
                d_mean=d_mean,
            )
        )
    report = MetricsReport(
        d_th_mm=d_th,
        overall=_summary(frame),
        regions=regions,
        scans=scans,
        mean_precision=float(np.mean([s.pr.precision for s in scans])) if scans else 0.0,
        mean_recall=float(np.mean([s.pr.recall for s in scans])) if scans else 0.0,
        mean_f1=float(np.mean([s.pr.f1 for s in scans])) if scans else 0.0,
    )
    logger.info(
        "Evaluated %d scans: id rate %.1f%%, mean R %.3f", len(scans), report.overall.id_rate, report.mean_recall
    )
    return report


def identification_rate(
    preds: Mapping[str, AnnotationSet], truths: Mapping[str, AnnotationSet], d_th: float = DEFAULT_D_TH_MM
) -> float:
    """Pooled id rate in percent"""
    frame = _identification_frame(preds, truths, d_th)
    return 100.0 * float(frame["identified"].mean()) if len(frame) else 0.0


def sweep_threshold(
    preds_by_threshold: Mapping[float, Mapping[str, AnnotationSet]],
    truths: Mapping[str, AnnotationSet],
    d_th: float = DEFAULT_D_TH_MM,
) -> list[ThresholdRow]:
    """
    Mean per-scan P/R/F1 for each threshold.

    Args:
        preds_by_threshold: T -> predictions obtained by fusing with threshold T
    """
    rows = []
    for threshold, preds in preds_by_threshold.items():
        for scan_id, truth in truths.items():
            pr = precision_recall(preds.get(scan_id, AnnotationSet()), truth, d_th)
            rows.append({"threshold": threshold, **pr.model_dump()})
    frame = pd.DataFrame(rows, columns=["threshold", "precision", "recall", "f1"])
    table = frame.groupby("threshold", sort=True).mean().reset_index()
    return [ThresholdRow(**record) for record in table.to_dict(orient="records")]


def best_threshold(rows: Sequence[ThresholdRow]) -> Optional[ThresholdRow]:
    """F1-optimal row; the lowest threshold wins ties"""
    if not rows:
        return None
    return max(sorted(rows, key=lambda r: r.threshold), key=lambda r: r.f1)


def sweep_dth(
    preds: Mapping[str, AnnotationSet],
    truths: Mapping[str, AnnotationSet],
    d_th_values: Iterable[float],
) -> list[DistanceRow]:
    """Pooled id rate (%) overall and per region for every distance threshold"""
    rows = []
    for d_th in d_th_values:
        frame = _identification_frame(preds, truths, d_th)
        rates = {OVERALL: _summary(frame).id_rate}
        for region, group in frame.groupby("region", sort=False):
            rates[region] = _summary(group).id_rate
        rows.append(DistanceRow(d_th=d_th, id_rate=rates))
    return rows


def parse_grid(text: str) -> list[float]:
    """'start:stop:step' (stop included) or a comma separated list"""
    if ":" not in text:
        return [float(v) for v in text.split(",") if v.strip()]
    start, stop, step = (float(v) for v in text.split(":"))
    if step <= 0:
        raise ValueError(f"grid step must be positive, got {step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def threshold_frame(rows: Sequence[ThresholdRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=["threshold", "precision", "recall", "f1"])


def distance_frame(rows: Sequence[DistanceRow]) -> pd.DataFrame:
    return pd.DataFrame([{"d_th": row.d_th, **row.id_rate} for row in rows])


def report_table(report: MetricsReport) -> str:
    """Human-readable summary: id rate and distances per region, then mean P/R/F1"""
    groups = [(OVERALL, report.overall)] + [(region.value, summary) for region, summary in report.regions.items()]
    frame = pd.DataFrame(
        [
            {
                "group": name,
                "vertebrae": summary.n_vertebrae,
                "id_rate_%": summary.id_rate,
                "d_mean_mm": summary.d_mean,
                "d_std_mm": summary.d_std,
            }
            for name, summary in groups
        ]
    )
    lines = [
        f"d_th = {report.d_th_mm:g} mm, {len(report.scans)} scans",
        frame.to_string(index=False, float_format=lambda v: f"{v:.2f}"),
        f"mean precision {report.mean_precision:.3f}  mean recall {report.mean_recall:.3f}  mean F1 {report.mean_f1:.3f}",
    ]
    if report.best_threshold is not None:
        best = report.best_threshold
        lines.append(f"F1-optimal T = {best.threshold:.2f} (P {best.precision:.3f}, R {best.recall:.3f}, F1 {best.f1:.3f})")
    return "\n".join(lines)


def save_report(report: MetricsReport, out_dir: Path) -> Path:
    """Writes metrics.json and metrics.txt"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(report.model_dump_json(indent=2))
    (out_dir / "metrics.txt").write_text(report_table(report) + "\n")
    return out_dir / "metrics.json"


def export_latent_codes(model: BtrflyNet, dataset: PreparedDataset, out_csv: Optional[Path] = None) -> pd.DataFrame:
    """
    Bottleneck codes, one per scan (its first prepared sample).

    The butterfly gives one row per scan (view "fused"); the Cor.+Sag.
    baseline gives a sagittal and a coronal row.
    """
    device = next(model.parameters()).device
    model.eval()
    seen, rows = set(), []
    for index, sample in enumerate(dataset.samples):
        if sample.scan_id in seen:
            continue
        seen.add(sample.scan_id)
        batch = collate_samples([dataset[index]], model.config.downsampling).to(device)
        codes = model.latent_code(batch.sag, batch.cor, batch.sag_mean, batch.cor_mean)
        views = ("fused",) if len(codes) == 1 else ("sagittal", "coronal")
        for view, code in zip(views, codes):
            values = code[0].cpu().numpy()
            rows.append({"scan_id": sample.scan_id, "view": view, **{f"c{i}": float(v) for i, v in enumerate(values)}})
    frame = pd.DataFrame(rows)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out_csv, index=False)
        logger.info("Wrote %d latent codes to %s", len(frame), out_csv)
    return frame
