import numpy as np
import pytest
from pydantic import ValidationError

from btrfly.core.exceptions import EmptyProjection, OutOfBounds, ShapeError
from btrfly.core.taxonomy import VertebraLabel
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.heatmap import HeatmapStack, with_background
from btrfly.schemas.network import BtrflyConfig, WDConfig
from btrfly.schemas.projection import ProjectionKind, ProjectionSpec, View
from btrfly.schemas.training import TrainConfig, TrainMode, load_config
from btrfly.schemas.volume import BoundingBox, Volume, VolumeGeometry, physical_to_voxel, voxel_to_physical


def test_volume_validation():
    with pytest.raises(ShapeError):
        Volume(data=np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        Volume(data=np.zeros((0, 4, 4)))
    with pytest.raises(ValidationError):
        Volume(data=np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))


def test_physical_voxel_round_trip():
    geometry = VolumeGeometry(shape=(10, 10, 10), spacing=(2.0, 2.0, 2.0), origin=(-5.0, 0.0, 1.0))
    assert physical_to_voxel(voxel_to_physical((3, 4, 5), geometry), geometry) == (3, 4, 5)
    # ties go to the lower index
    assert physical_to_voxel((-4.0, 1.0, 2.0), geometry) == (0, 0, 0)
    with pytest.raises(OutOfBounds):
        physical_to_voxel((100.0, 0.0, 1.0), geometry)


def test_bounding_box_helpers():
    box = BoundingBox(lower=(0, 0, 0), upper=(9, 9, 9))
    assert box.size == (10, 10, 10)
    assert box.volume_vox == 1000
    assert BoundingBox(lower=(-3, 2, 2), upper=(20, 5, 5)).clamped((10, 10, 10)).lower == (0, 2, 2)
    with pytest.raises(ShapeError):
        BoundingBox(lower=(5, 0, 0), upper=(4, 0, 0))


def test_bounding_box_rescaled_between_grids():
    coarse = VolumeGeometry(shape=(10, 10, 10), spacing=(4.0, 4.0, 4.0))
    fine = VolumeGeometry(shape=(20, 20, 20), spacing=(2.0, 2.0, 2.0))
    box = BoundingBox(lower=(1, 2, 3), upper=(4, 5, 6)).rescaled(coarse, fine)
    assert box.lower == (2, 4, 6)
    assert box.upper == (8, 10, 12)


def test_annotation_set_round_trip(tmp_path):
    annotations = AnnotationSet(entries={"L1": (1.0, 2.0, 3.0), 21: (5.0, 6.0, 7.0)}, confidences={"L2": 0.5})
    assert annotations.labels == [VertebraLabel.L1, VertebraLabel.L2]
    path = tmp_path / "ann.json"
    annotations.save(path)
    loaded = AnnotationSet.load(path)
    assert loaded.entries == annotations.entries
    assert loaded.confidences == {VertebraLabel.L2: 0.5}


def test_annotation_check_within():
    volume = Volume(data=np.zeros((4, 4, 4)), spacing=(2.0, 2.0, 2.0))
    AnnotationSet(entries={"C1": (6.0, 0.0, 6.0)}).check_within(volume)
    with pytest.raises(OutOfBounds):
        AnnotationSet(entries={"C1": (9.0, 0.0, 0.0)}).check_within(volume)


def test_heatmap_channel_validation():
    with pytest.raises(ShapeError):
        HeatmapStack(data=np.zeros((4, 4, 10)))
    stack = HeatmapStack(data=with_background(np.zeros((4, 4, 26))))
    assert stack.spatial_shape == (4, 4)
    np.testing.assert_array_equal(stack.data[..., 0], 1.0)
    assert stack.without_background().data.shape == (4, 4, 26)


def test_projection_spec_requirements():
    assert View.SAGITTAL.collapsed_axis == 2
    assert View.CORONAL.collapsed_axis == 1
    with pytest.raises(EmptyProjection):
        ProjectionSpec(view=View.SAGITTAL, kind=ProjectionKind.SLAB_MIP)
    with pytest.raises(EmptyProjection):
        ProjectionSpec(view=View.CORONAL, kind=ProjectionKind.LOCALIZED_MIP)
    with pytest.raises(ValidationError):
        ProjectionSpec(view=View.CORONAL, kind=ProjectionKind.WEIGHTED_MEANIP)


def test_network_configs():
    assert BtrflyConfig().arm_bottleneck_channels == 512
    assert BtrflyConfig().downsampling == 8
    assert WDConfig().spp_length == 1820
    with pytest.raises(ValidationError):
        BtrflyConfig(bottleneck_channels=15)


def test_load_config_flags_win(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("mode: pe_eb\nbatch_size: 8\nmodel:\n  base_filters: 8\n  arms_fused: true\n")
    cfg = load_config(TrainConfig, path, {"batch_size": 2, "seed": None, "model": {"arms_fused": False}})
    assert cfg.mode is TrainMode.PE_EB
    assert cfg.batch_size == 2
    assert cfg.seed == 0
    assert cfg.model.base_filters == 8
    assert cfg.model.arms_fused is False
