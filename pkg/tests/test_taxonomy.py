import pytest

from btrfly.core.exceptions import InvalidLabel
from btrfly.core.taxonomy import (
    NUM_CHANNELS,
    Region,
    VertebraLabel,
    label_from_index,
    label_from_name,
    labels_in_region,
    region_of,
)


def test_index_name_bijection():
    assert len(VertebraLabel) == 26 == NUM_CHANNELS - 1
    for label in VertebraLabel:
        assert label_from_index(int(label)) is label
        assert label_from_name(label.name) is label
    assert [label.name for label in VertebraLabel][:3] == ["C1", "C2", "C3"]
    assert VertebraLabel.T1 < VertebraLabel.L1 < VertebraLabel.S2


@pytest.mark.parametrize("index", [0, 27, -1])
def test_out_of_range_index(index):
    with pytest.raises(InvalidLabel):
        label_from_index(index)


def test_unknown_name():
    with pytest.raises(InvalidLabel):
        label_from_name("X9")


@pytest.mark.parametrize(
    "label, region",
    [
        (VertebraLabel.C3, Region.CERVICAL),
        (VertebraLabel.C7, Region.CERVICAL),
        (VertebraLabel.T1, Region.THORACIC),
        (VertebraLabel.T12, Region.THORACIC),
        (VertebraLabel.L5, Region.LUMBAR),
        (VertebraLabel.S1, Region.LUMBAR),
        (VertebraLabel.S2, Region.LUMBAR),
    ],
)
def test_region_of(label, region):
    assert region_of(label) is region


def test_regions_partition_taxonomy():
    sizes = {region: len(labels_in_region(region)) for region in Region}
    assert sizes == {Region.CERVICAL: 7, Region.THORACIC: 12, Region.LUMBAR: 7}
