# btrfly/services/phantom.py
"""
Synthetic spine phantoms with exact centroids.

Axis 0 runs cranio-caudally, axis 1 antero-posteriorly (posterior at low
indices) and axis 2 laterally. Vertebrae are bright ellipsoids placed on a
gently curved path inside a soft-tissue cylinder; thoracic levels can carry
anterior rib arcs, which overlap the spine in a coronal MIP but lie outside
the spine's antero-posterior extent.
"""
import logging
import math
from pathlib import Path
from typing import Optional

import numpy as np

from btrfly.core.config import settings
from btrfly.core.taxonomy import NUM_VERTEBRAE, Region, VertebraLabel, labels_in_region
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import DatasetManifest, FovPolicy, PhantomSpec, ScanRecord, Split
from btrfly.schemas.volume import Volume
from btrfly.services import volume_io

logger = logging.getLogger(__name__)

SOFT_TISSUE_HU = 40.0
BONE_HU = 300.0
RIB_HU = 600.0

BODY_RADIUS_FRACTION = 0.45
SPINE_AP_FRACTION = 0.3
RIB_RADIUS_MM = 55.0
RIB_HALF_ANGLE_DEG = 60.0
RIB_THICKNESS_MM = 3.0

SPLIT_FRACTIONS = {Split.TRAIN: 0.7, Split.VAL: 0.15, Split.TEST: 0.15}
MIXED_CYCLE = (FovPolicy.CERVICAL, FovPolicy.THORACIC, FovPolicy.LUMBAR, FovPolicy.FULL)


def _grid(shape: tuple[int, int, int], res: float) -> list[np.ndarray]:
    """Broadcastable physical coordinates (mm) of the three axes"""
    axes = [np.arange(n, dtype=np.float64) * res for n in shape]
    return [axes[0][:, None, None], axes[1][None, :, None], axes[2][None, None, :]]


def _snap(value_mm: float, res: float) -> float:
    return round(value_mm / res) * res


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, AnnotationSet]:
    """
    Builds one phantom and its centroids.

    Centroids sit exactly on voxel centres, strictly increasing along axis 0
    with the label index. The result only depends on `spec`.
    """
    rng = np.random.default_rng(spec.seed)
    res = spec.resolution_mm
    n = spec.n_vertebrae
    height = math.ceil((n + 1) * spec.spacing_mm / res)
    width = max(1, round(spec.lateral_fov_mm / res))
    shape = (height, width, width)
    z, y, x = _grid(shape, res)

    fov = width * res
    centre = fov / 2.0
    body_radius = BODY_RADIUS_FRACTION * fov
    in_body = (y - centre) ** 2 + (x - centre) ** 2 <= body_radius ** 2
    data = np.full(shape, settings.HU_FLOOR, dtype=np.float64)
    data = np.where(in_body, SOFT_TISSUE_HU, data)

    entries = {}
    path_length = (n + 1) * spec.spacing_mm
    semi_h = 0.35 * spec.spacing_mm
    for k, label in enumerate(spec.labels):
        along = (k + 1) * spec.spacing_mm + rng.uniform(-0.1, 0.1) * spec.spacing_mm
        phase = 2.0 * math.pi * along / path_length
        ap = SPINE_AP_FRACTION * fov + spec.curvature * math.sin(phase)
        lateral = centre + rng.uniform(-1.0, 1.0)
        centroid = (_snap(along, res), _snap(ap, res), _snap(lateral, res))
        entries[label] = centroid
        semi = (semi_h, 12.0 + rng.uniform(-1.0, 1.0), 15.0 + rng.uniform(-1.0, 1.0))
        inside = (
            ((z - centroid[0]) / semi[0]) ** 2
            + ((y - centroid[1]) / semi[1]) ** 2
            + ((x - centroid[2]) / semi[2]) ** 2
        ) <= 1.0
        data = np.where(inside, BONE_HU, data)
        if spec.include_ribs and label in labels_in_region(Region.THORACIC):
            data = np.where(_rib_arc(z, y, x, centroid[0], centre), RIB_HU, data)

    if spec.noise_sd > 0:
        noise = rng.normal(0.0, spec.noise_sd, size=shape)
        data = np.where(in_body, data + noise, data)

    volume = Volume(data=data.astype(np.float32), spacing=(res, res, res), origin=(0.0, 0.0, 0.0))
    return volume, AnnotationSet(entries=entries)


def _rib_arc(z: np.ndarray, y: np.ndarray, x: np.ndarray, level_mm: float, centre: float) -> np.ndarray:
    """Anterior arc at one height: radius RIB_RADIUS_MM about the body axis, within +-60 degrees"""
    radius = np.sqrt((y - centre) ** 2 + (x - centre) ** 2)
    angle = np.degrees(np.arctan2(x - centre, y - centre))
    return (
        (np.abs(z - level_mm) <= RIB_THICKNESS_MM)
        & (np.abs(radius - RIB_RADIUS_MM) <= RIB_THICKNESS_MM)
        & (np.abs(angle) <= RIB_HALF_ANGLE_DEG)
    )


def _label_window(policy: FovPolicy, rng: np.random.Generator) -> tuple[VertebraLabel, int]:
    """(start label, count) of a scan covering the policy's region"""
    if policy is FovPolicy.FULL:
        return VertebraLabel.C1, NUM_VERTEBRAE
    labels = labels_in_region(Region(policy.value))
    count = int(rng.integers(max(2, len(labels) // 2), len(labels), endpoint=True))
    start = int(rng.integers(0, len(labels) - count, endpoint=True))
    return labels[start], count


def split_counts(n_scans: int) -> dict[Split, int]:
    """70/15/15 with at least one training scan"""
    n_val = round(SPLIT_FRACTIONS[Split.VAL] * n_scans)
    n_test = round(SPLIT_FRACTIONS[Split.TEST] * n_scans)
    return {Split.TRAIN: n_scans - n_val - n_test, Split.VAL: n_val, Split.TEST: n_test}


def generate_dataset(
    n_scans: int,
    fov_policy: FovPolicy,
    seed: int,
    out_dir: Path,
    include_ribs: bool = False,
    resolution_mm: float = settings.WORKING_RESOLUTION_MM,
    noise_sd: Optional[float] = None,
) -> DatasetManifest:
    """
    Writes `n_scans` phantoms (NIfTI + JSON annotations) and manifest.json.

    The mixed policy cycles cervical, thoracic, lumbar and full-spine scans;
    splits are assigned on a seeded permutation.
    """
    if n_scans < 1:
        raise ValueError(f"n_scans must be >= 1, got {n_scans}")
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    counts = split_counts(n_scans)
    splits = [Split.TRAIN] * counts[Split.TRAIN] + [Split.VAL] * counts[Split.VAL] + [Split.TEST] * counts[Split.TEST]
    splits = [splits[i] for i in rng.permutation(n_scans)]

    records = []
    for index in range(n_scans):
        policy = MIXED_CYCLE[index % len(MIXED_CYCLE)] if fov_policy is FovPolicy.MIXED else fov_policy
        scan_rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        start, count = _label_window(policy, scan_rng)
        spec_kwargs = {} if noise_sd is None else {"noise_sd": noise_sd}
        spec = PhantomSpec(
            n_vertebrae=count,
            start_label=start,
            spacing_mm=float(scan_rng.uniform(16.0, 20.0)),
            curvature=float(scan_rng.uniform(0.0, 6.0)),
            include_ribs=include_ribs,
            resolution_mm=resolution_mm,
            seed=int(scan_rng.integers(2**31)),
            **spec_kwargs,
        )
        volume, annotations = generate_phantom(spec)
        scan_id = f"phantom_{index:04d}"
        volume_path = Path("volumes") / f"{scan_id}.nii.gz"
        annotation_path = Path("annotations") / f"{scan_id}.json"
        volume_io.save_volume(volume, out_dir / volume_path)
        annotations.save(out_dir / annotation_path)
        records.append(
            ScanRecord(
                scan_id=scan_id,
                volume_path=volume_path.as_posix(),
                annotation_path=annotation_path.as_posix(),
                split=splits[index],
                fov=policy,
                has_ribs=include_ribs and any(l in labels_in_region(Region.THORACIC) for l in annotations),
            )
        )
        logger.debug("Generated %s: %s..%s (%s)", scan_id, start.name, spec.labels[-1].name, splits[index].value)

    manifest = DatasetManifest(seed=seed, fov_policy=fov_policy, scans=records)
    manifest.save(out_dir / "manifest.json")
    logger.info("Generated %d phantoms (%s) in %s", n_scans, fov_policy.value, out_dir)
    return manifest
