from .adversaries import EnergyDiscriminator, WassersteinDiscriminator, as_adversary_input
from .btrfly import BtrflyNet, count_parameters
from .localizer import SpineLocalizerNet

__all__ = [
    "BtrflyNet",
    "EnergyDiscriminator",
    "SpineLocalizerNet",
    "WassersteinDiscriminator",
    "as_adversary_input",
    "count_parameters",
]
