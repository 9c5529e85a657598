from pathlib import Path

import numpy as np
import pytest
import torch

from btrfly.core.exceptions import EmptyDataset, OutOfBounds
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import DatasetManifest, PreparedManifest, ScanRecord, Split
from btrfly.schemas.projection import ProjectionKind
from btrfly.schemas.sample import PairSample, ViewSample
from btrfly.services import volume_io
from btrfly.services.dataset import PrepareOptions, PreparedDataset, collate_samples, derive_seed, prepare_dataset


def test_prepared_layout(prepared_dataset, phantom_dataset):
    manifest = PreparedManifest.load(prepared_dataset)
    source = DatasetManifest.load(phantom_dataset)
    root = prepared_dataset.parent
    assert len(manifest.scans) == len(source.scans)
    for record in source.scans:
        samples = [s for s in manifest.samples if s.scan_id == record.scan_id]
        assert len(samples) == (2 if record.split is Split.TRAIN else 1)
        for sample in samples:
            assert sample.sagittal_path == f"{record.scan_id}/sagittal/{sample.aug_idx}.npz"
            assert (root / sample.sagittal_path).exists() and (root / sample.coronal_path).exists()


def test_items_share_height_and_match_geometry(prepared_dataset):
    dataset = PreparedDataset(prepared_dataset, Split.VAL)
    pair = dataset[0]
    h, w, d = dataset.manifest.scan(pair.scan_id).geometry.shape
    assert pair.sagittal.image.shape == (h, w)
    assert pair.coronal.image.shape == (h, d)
    assert pair.sagittal.target.shape == (h, w, 27)
    target = pair.sagittal.target
    np.testing.assert_allclose(target[..., 0], 1.0 - target[..., 1:].max(axis=-1), atol=1e-6)
    assert pair.sagittal.image_mean is None


def test_val_projection_is_full_range_mip(prepared_dataset):
    manifest = PreparedManifest.load(prepared_dataset)
    source = DatasetManifest.load(manifest.source_manifest)
    dataset = PreparedDataset(prepared_dataset, Split.VAL)
    pair = dataset[0]
    record = next(r for r in source.scans if r.scan_id == pair.scan_id)
    volume = volume_io.load_volume(Path(manifest.source_manifest).parent / record.volume_path)
    processed = volume_io.preprocess(volume, manifest.resolution_mm)
    np.testing.assert_allclose(pair.sagittal.image, processed.data.max(axis=2), atol=1e-4)


def test_seeds_are_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def test_localized_dual_input_preparation(phantom_dataset, tmp_path):
    options = PrepareOptions(
        resolution_mm=4.0, sigma_mm=6.0, kind=ProjectionKind.LOCALIZED_MIP, dual_input=True, n_aug=3
    )
    manifest = prepare_dataset(phantom_dataset, tmp_path, options)
    assert manifest.dual_input and manifest.kind is ProjectionKind.LOCALIZED_MIP
    assert len(manifest.samples) == len(manifest.scans)
    pair = PreparedDataset(tmp_path / "prepared_manifest.json", Split.TRAIN)[0]
    assert pair.sagittal.image_mean is not None
    assert pair.sagittal.image_mean.shape == pair.sagittal.image.shape
    assert pair.coronal.image_mean.shape == pair.coronal.image.shape


def test_empty_split(prepared_dataset, tmp_path):
    manifest = PreparedManifest.load(prepared_dataset)
    manifest.model_copy(update={"samples": []}).save(tmp_path / "prepared_manifest.json")
    dataset = PreparedDataset(tmp_path / "prepared_manifest.json", Split.TRAIN)
    assert len(dataset) == 0
    with pytest.raises(EmptyDataset):
        dataset.require_samples()


def _view(h, w, value=0.0):
    target = np.zeros((h, w, 27), dtype=np.float32)
    target[..., 0] = 1.0
    target[0, 0, 0], target[0, 0, 5] = 0.0, 1.0
    return ViewSample(image=np.full((h, w), value, dtype=np.float32), target=target)


def test_collate_pads_to_common_multiple():
    samples = [
        PairSample(scan_id="a", sagittal=_view(10, 6, 100.0), coronal=_view(10, 7, 100.0)),
        PairSample(scan_id="b", sagittal=_view(13, 5), coronal=_view(13, 5)),
    ]
    batch = collate_samples(samples, factor=8)
    assert batch.sag.shape == (2, 1, 16, 8)
    assert batch.cor.shape == (2, 1, 16, 8)
    assert batch.sag_target.shape == (2, 27, 16, 8)
    assert batch.sag_mean is None
    assert batch.scan_ids == ["a", "b"]
    # padding is air in the image and background in the target
    assert batch.sag[0, 0, 12, 7] == batch.sag[1, 0, 15, 7]
    assert batch.sag[0, 0, 12, 7] < batch.sag[0, 0, 0, 0]
    assert torch.all(batch.sag_target[:, 0, 13:, :] == 1.0)
    assert torch.all(batch.sag_target[:, 1:, 13:, :] == 0.0)
    assert batch.sag_target[0, 5, 0, 0] == 1.0


def test_prepare_rejects_centroid_outside_volume(tmp_path, small_phantom):
    volume, _ = small_phantom
    volume_io.save_volume(volume, tmp_path / "scan.nii.gz")
    AnnotationSet(entries={"L1": (500.0, 10.0, 10.0)}).save(tmp_path / "scan.json")
    DatasetManifest(
        scans=[ScanRecord(scan_id="scan", volume_path="scan.nii.gz", annotation_path="scan.json", split=Split.TRAIN)]
    ).save(tmp_path / "manifest.json")
    with pytest.raises(OutOfBounds):
        prepare_dataset(tmp_path / "manifest.json", tmp_path / "prepared", PrepareOptions(resolution_mm=4.0, n_aug=1))
