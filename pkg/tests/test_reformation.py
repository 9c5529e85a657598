import math
from collections import Counter

import numpy as np
import pytest

from btrfly.core.exceptions import EmptyDataset, EmptyProjection
from btrfly.core.taxonomy import VertebraLabel
from btrfly.schemas.annotation import AnnotationSet
from btrfly.schemas.projection import ProjectionKind, ProjectionSpec, View
from btrfly.schemas.volume import BoundingBox, Volume, VolumeGeometry
from btrfly.services import reformation


def point_volume() -> Volume:
    data = np.full((6, 5, 4), -1000.0)
    data[2, 3, 1] = 500.0
    return Volume(data=data)


def test_naive_mip_of_point_source():
    volume = point_volume()
    sag = reformation.project(volume, ProjectionSpec(view=View.SAGITTAL))
    cor = reformation.project(volume, ProjectionSpec(view=View.CORONAL))
    assert sag.shape == (6, 5) and cor.shape == (6, 4)
    assert sag[2, 3] == 500.0 and cor[2, 1] == 500.0
    assert (sag == -1000.0).sum() == sag.size - 1


def test_weighted_meanip_uniform_weights_is_mean():
    data = np.random.default_rng(0).normal(size=(3, 4, 5))
    volume = Volume(data=data)
    spec = ProjectionSpec(view=View.CORONAL, kind=ProjectionKind.WEIGHTED_MEANIP, weights=np.ones(data.shape))
    np.testing.assert_allclose(reformation.project(volume, spec), data.mean(axis=1))


def test_weighted_meanip_zero_weights_fill():
    volume = Volume(data=np.ones((2, 3, 4)))
    spec = ProjectionSpec(view=View.SAGITTAL, kind=ProjectionKind.WEIGHTED_MEANIP, weights=np.zeros((2, 3, 4)))
    np.testing.assert_array_equal(reformation.project(volume, spec), -1000.0)


def test_localized_mip_excludes_occluder():
    data = np.full((4, 10, 10), 0.0)
    data[:, 2:4, 4:6] = 300.0
    data[:, 8, 4:6] = 900.0
    volume = Volume(data=data)
    box = BoundingBox(lower=(0, 1, 3), upper=(3, 5, 7))
    naive = reformation.project(volume, ProjectionSpec(view=View.CORONAL))
    localized = reformation.project(volume, ProjectionSpec(view=View.CORONAL, kind=ProjectionKind.LOCALIZED_MIP, box=box))
    assert naive.max() == 900.0
    assert localized.max() == 300.0


def test_empty_slab():
    spec = ProjectionSpec(view=View.SAGITTAL, kind=ProjectionKind.SLAB_MIP, slab_range=(0, 0))
    with pytest.raises(EmptyProjection):
        reformation.project(point_volume(), spec)


def test_mip_commutes_with_monotone_map():
    data = np.random.default_rng(1).normal(size=(4, 5, 6))
    spec = ProjectionSpec(view=View.SAGITTAL)
    np.testing.assert_allclose(
        reformation.project(Volume(data=np.exp(data)), spec),
        np.exp(reformation.project(Volume(data=data), spec)),
    )


@pytest.mark.parametrize("extent", [100, 2, 1, 7])
def test_sample_slab_ranges(extent):
    volume = Volume(data=np.zeros((2, 2, extent)))
    for seed in range(200):
        spec = reformation.sample_slab(View.SAGITTAL, volume, seed)
        start, count = spec.slab_range
        assert math.ceil(extent / 2) <= count <= extent
        assert 0 <= start <= extent - count
    assert reformation.sample_slab(View.SAGITTAL, volume, 9) == reformation.sample_slab(View.SAGITTAL, volume, 9)


def test_heatmap_identities():
    geometry = VolumeGeometry(shape=(20, 20, 20), spacing=(2.0, 2.0, 2.0))
    annotations = AnnotationSet(entries={"T4": (10.0, 20.0, 20.0), "T5": (30.0, 20.0, 14.0)})
    heatmap = reformation.make_heatmap_3d(geometry, annotations, sigma_mm=4.0)
    data = heatmap.data
    assert data.shape == (20, 20, 20, 27)
    np.testing.assert_allclose(data[..., 0], 1.0 - data[..., 1:].max(axis=-1), atol=1e-12)
    t4 = int(VertebraLabel.T4)
    assert data[5, 10, 10, t4] == 1.0
    assert data[7, 10, 10, t4] == pytest.approx(math.exp(-0.5), abs=1e-9)
    assert not data[..., int(VertebraLabel.C1)].any()


def test_empty_annotations_give_pure_background():
    heatmap = reformation.make_heatmap_3d(VolumeGeometry(shape=(3, 3, 3)), AnnotationSet(), sigma_mm=2.0)
    np.testing.assert_array_equal(heatmap.data[..., 0], 1.0)
    np.testing.assert_array_equal(heatmap.data[..., 1:], 0.0)


def test_project_heatmap_keeps_peaks():
    geometry = VolumeGeometry(shape=(10, 10, 10))
    # same (i, j), different k
    annotations = AnnotationSet(entries={"L1": (4.0, 5.0, 1.0), "L2": (4.0, 5.0, 8.0)})
    heatmap = reformation.make_heatmap_3d(geometry, annotations, sigma_mm=1.5)
    sag = reformation.project_heatmap(heatmap, View.SAGITTAL)
    assert sag.data.shape == (10, 10, 27)
    assert sag.channel(VertebraLabel.L1)[4, 5] == 1.0
    assert sag.channel(VertebraLabel.L2)[4, 5] == 1.0
    np.testing.assert_allclose(sag.data[..., 0], 1.0 - sag.foreground.max(axis=-1))
    cor = reformation.project_heatmap(heatmap, View.CORONAL)
    assert cor.channel(VertebraLabel.L2)[4, 8] == 1.0


def test_median_frequency_weights():
    def sets(counts: Counter) -> list[AnnotationSet]:
        out = []
        for label, n in counts.items():
            out += [AnnotationSet(entries={label: (0.0, 0.0, 0.0)})] * n
        return out

    weights = reformation.median_frequency_weights(sets(Counter({"C1": 10, "C2": 20, "C3": 40})))
    assert weights[VertebraLabel.C1] == 2.0
    assert weights[VertebraLabel.C2] == 1.0
    assert weights[VertebraLabel.C3] == 0.5
    assert weights[VertebraLabel.S2] == 0.0

    uniform = reformation.median_frequency_weights(sets(Counter({"L1": 3, "L2": 3})))
    assert uniform[VertebraLabel.L1] == uniform[VertebraLabel.L2] == 1.0

    vector = reformation.class_weight_vector(weights)
    assert vector.shape == (27,) and vector[0] == 1.0 and vector[1] == 2.0


def test_median_frequency_weights_empty():
    with pytest.raises(EmptyDataset):
        reformation.median_frequency_weights([])
    with pytest.raises(EmptyDataset):
        reformation.median_frequency_weights([AnnotationSet()])


@pytest.mark.parametrize("view", [View.SAGITTAL, View.CORONAL])
@pytest.mark.parametrize("span", [None, slice(3, 7)])
def test_view_heatmap_matches_projected_3d_target(view, span):
    geometry = VolumeGeometry(shape=(16, 12, 12), spacing=(2.0, 2.0, 2.0), origin=(-4.0, 1.0, 0.0))
    annotations = AnnotationSet(
        entries={"T11": (2.0, 9.0, 3.0), "T12": (12.0, 11.0, 20.0), "L1": (22.0, 15.0, 11.0)}
    )
    projected = reformation.project_heatmap(reformation.make_heatmap_3d(geometry, annotations, 3.0), view, span)
    direct = reformation.view_heatmap(geometry, annotations, 3.0, view, span)
    assert direct.data.shape == projected.data.shape
    np.testing.assert_allclose(direct.data, projected.data, atol=1e-12)


def test_heatmap_3d_in_single_precision():
    geometry = VolumeGeometry(shape=(8, 8, 8))
    annotations = AnnotationSet(entries={"C3": (4.0, 4.0, 4.0)})
    heatmap = reformation.make_heatmap_3d(geometry, annotations, 2.0, dtype=np.float32)
    assert heatmap.data.dtype == np.float32
    assert heatmap.data[4, 4, 4, int(VertebraLabel.C3)] == 1.0
    assert heatmap.data[4, 4, 4, 0] == 0.0
    np.testing.assert_array_equal(heatmap.data[..., 0], 1.0 - heatmap.data[..., 1:].max(axis=-1))
