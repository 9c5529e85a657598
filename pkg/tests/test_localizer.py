import numpy as np
import pytest
import torch

from btrfly.core.exceptions import NoSpineDetected, OutOfBounds, ShapeError
from btrfly.models.localizer import SpineLocalizerNet
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.dataset import Split
from btrfly.schemas.training import LocalizerTrainConfig
from btrfly.schemas.volume import BoundingBox, Volume, physical_to_voxel
from btrfly.services import checkpoint as checkpoint_service
from btrfly.services.localizer import (
    box_iou,
    evaluate_localizer,
    extract_bbox,
    loc_metrics,
    localize_from_annotations,
    localizer_forward,
    localizer_target,
    train_localizer,
)


def test_target_peaks_at_annotations(small_phantom):
    volume, annotations = small_phantom
    target = localizer_target(volume, annotations, sigma_mm=10.0)
    assert target.shape == volume.shape
    assert target.max() == pytest.approx(1.0)
    assert target.min() >= 0.0


def test_target_peaks_exactly_at_annotation_voxels(small_phantom):
    volume, annotations = small_phantom
    target = localizer_target(volume, annotations, sigma_mm=10.0)
    peaks = {physical_to_voxel(annotations.position(label), volume) for label in annotations}
    for voxel in peaks:
        assert target[voxel] == pytest.approx(1.0)
    at_one = {tuple(int(i) for i in v) for v in np.argwhere(target >= 1.0 - 1e-9)}
    assert at_one == peaks


def test_target_without_annotations_is_zero(small_phantom):
    volume, _ = small_phantom
    assert not localizer_target(volume, AnnotationSet()).any()


def test_forward_crops_back_and_stays_in_unit_range(tiny_localizer_config):
    model = SpineLocalizerNet(tiny_localizer_config)
    volume = Volume(data=np.random.default_rng(0).uniform(-1000, 1000, (10, 9, 7)), spacing=(4.0, 4.0, 4.0))
    heatmap = localizer_forward(model, volume)
    assert heatmap.shape == (10, 9, 7)
    assert heatmap.min() >= 0.0 and heatmap.max() <= 1.0


def test_network_rejects_unpadded_input(tiny_localizer_config):
    with pytest.raises(ShapeError):
        SpineLocalizerNet(tiny_localizer_config)(torch.zeros(1, 1, 6, 8, 8))


def test_extract_bbox_example():
    heatmap = np.zeros((40, 30, 30))
    heatmap[5, 10, 20] = 0.9
    box = extract_bbox(heatmap, pad_vox=2)
    assert box.lower == (0, 8, 18)
    assert box.upper == (39, 12, 22)


def test_extract_bbox_ignores_sub_threshold_voxels():
    heatmap = np.full((8, 8, 8), 0.49)
    heatmap[3, 3, 3] = 0.5
    box = extract_bbox(heatmap, pad_vox=0)
    assert box.lower == (0, 3, 3) and box.upper == (7, 3, 3)


def test_extract_bbox_uniform_ones_is_full_volume():
    box = extract_bbox(np.ones((6, 7, 8)), pad_vox=3)
    assert box.lower == (0, 0, 0)
    assert box.upper == (5, 6, 7)


def test_extract_bbox_without_spine():
    with pytest.raises(NoSpineDetected):
        extract_bbox(np.full((4, 4, 4), 0.3))
    with pytest.raises(ShapeError):
        extract_bbox(np.ones((4, 4)))


def test_iou_example_and_symmetry():
    a = BoundingBox(lower=(0, 0, 0), upper=(9, 9, 9))
    b = BoundingBox(lower=(5, 5, 5), upper=(14, 14, 14))
    assert box_iou(a, b) == pytest.approx(125 / 1875)
    assert box_iou(b, a) == pytest.approx(box_iou(a, b))
    assert box_iou(a, a) == pytest.approx(1.0)
    assert box_iou(a, BoundingBox(lower=(20, 20, 20), upper=(21, 21, 21))) == 0.0


def test_loc_metrics():
    a = BoundingBox(lower=(0, 0, 0), upper=(9, 9, 9))
    b = BoundingBox(lower=(5, 5, 5), upper=(14, 14, 14))
    metrics = loc_metrics([a, a], [a, b])
    assert metrics.mean_iou == pytest.approx((1 + 125 / 1875) / 2)
    assert metrics.detection_rate == pytest.approx(0.5)
    with pytest.raises(ValueError):
        loc_metrics([a], [a, b])


def test_reference_box_covers_annotations(small_phantom):
    volume, annotations = small_phantom
    result = localize_from_annotations(volume, annotations, pad_vox=0, res_mm=4.0, sigma_mm=10.0)
    assert result.heatmap.shape == result.geometry.shape
    assert result.box.lower[0] == 0 and result.box.upper[0] == result.geometry.shape[0] - 1


def test_train_and_evaluate_localizer(phantom_dataset, tiny_localizer_config, tmp_path):
    cfg = LocalizerTrainConfig(
        total_iters=2, model=tiny_localizer_config, checkpoint_every=1, log_every=1, device="cpu", seed=1
    )
    path = train_localizer(phantom_dataset, cfg, tmp_path)
    assert path == tmp_path / "localizer.pt"
    assert (tmp_path / "localizer_000001.pt").exists()
    assert len((tmp_path / "localizer_log.csv").read_text().splitlines()) == 3

    model = checkpoint_service.load_model(path, checkpoint_service.NetworkKind.LOCALIZER)
    metrics = evaluate_localizer(model, phantom_dataset, Split.TEST)
    assert len(metrics.ious) == 1
    assert 0.0 <= metrics.mean_iou <= 1.0


def test_extract_bbox_grows_with_padding():
    heatmap = np.zeros((20, 30, 30))
    heatmap[8:11, 12:15, 14:17] = 0.8
    boxes = [extract_bbox(heatmap, pad_vox=pad) for pad in range(0, 20, 3)]
    for smaller, larger in zip(boxes, boxes[1:]):
        assert all(lo_l <= lo_s for lo_s, lo_l in zip(smaller.lower, larger.lower))
        assert all(up_l >= up_s for up_s, up_l in zip(smaller.upper, larger.upper))
        assert larger.volume_vox >= smaller.volume_vox


def test_reference_box_rejects_centroid_outside_volume(small_phantom):
    volume, _ = small_phantom
    with pytest.raises(OutOfBounds):
        localize_from_annotations(volume, AnnotationSet(entries={"L1": (500.0, 10.0, 10.0)}))
