from typing import Optional


class BtrflyError(Exception):
    """Base error of the toolkit; `detail` is the human readable message"""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidLabel(BtrflyError):
    """Vertebra index or name outside the C1..S2 taxonomy"""


class OutOfBounds(BtrflyError):
    """Point or index outside a volume's extent"""


class FormatError(BtrflyError):
    """Unreadable or non-3D image file"""


class EmptyProjection(BtrflyError):
    """Projection over an empty slab or box"""


class EmptyDataset(BtrflyError):
    """No usable scans or labels"""


class ShapeError(BtrflyError):
    """Array dimensions incompatible with the operation"""


class DivergenceError(BtrflyError):
    """Training produced a non-finite loss"""

    def __init__(self, detail: str, iteration: Optional[int] = None):
        super().__init__(detail)
        self.iteration = iteration


class NoSpineDetected(BtrflyError):
    """Localizer heatmap has no voxel at or above the activation threshold"""


class EmptyOverlap(BtrflyError):
    """Prediction and ground truth share no vertebra label"""
