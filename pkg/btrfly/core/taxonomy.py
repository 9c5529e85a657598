"""Vertebra taxonomy and channel layout.

Channel 0 of every 27-channel stack is background; channel ``i`` (1..26)
holds vertebra ``VertebraLabel(i)``, in cranio-caudal order.
"""
from enum import Enum, IntEnum

from btrfly.core.exceptions import InvalidLabel

BACKGROUND_CHANNEL = 0
NUM_VERTEBRAE = 26
NUM_CHANNELS = NUM_VERTEBRAE + 1


class VertebraLabel(IntEnum):
    C1 = 1
    C2 = 2
    C3 = 3
    C4 = 4
    C5 = 5
    C6 = 6
    C7 = 7
    T1 = 8
    T2 = 9
    T3 = 10
    T4 = 11
    T5 = 12
    T6 = 13
    T7 = 14
    T8 = 15
    T9 = 16
    T10 = 17
    T11 = 18
    T12 = 19
    L1 = 20
    L2 = 21
    L3 = 22
    L4 = 23
    L5 = 24
    S1 = 25
    S2 = 26

    def __str__(self) -> str:
        return self.name


class Region(str, Enum):
    CERVICAL = "cervical"
    THORACIC = "thoracic"
    LUMBAR = "lumbar"


def label_from_index(index: int) -> VertebraLabel:
    """
    Returns the vertebra for a channel index.

    Raises:
        InvalidLabel: index outside 1..26 (0 is background)
    """
    try:
        return VertebraLabel(int(index))
    except (ValueError, TypeError):
        raise InvalidLabel(f"vertebra index must be in 1..{NUM_VERTEBRAE}, got {index!r}")


def label_from_name(name: str) -> VertebraLabel:
    try:
        return VertebraLabel[name.strip().upper()]
    except (KeyError, AttributeError):
        raise InvalidLabel(f"unknown vertebra name {name!r}")


def index_of(label: VertebraLabel) -> int:
    return int(label)


def region_of(label: VertebraLabel) -> Region:
    """C1-C7 cervical, T1-T12 thoracic, L1-L5 lumbar; S1/S2 are grouped with lumbar."""
    label = label_from_index(label)
    if label <= VertebraLabel.C7:
        return Region.CERVICAL
    if label <= VertebraLabel.T12:
        return Region.THORACIC
    return Region.LUMBAR


def labels_in_region(region: Region) -> list[VertebraLabel]:
    return [label for label in VertebraLabel if region_of(label) is region]
