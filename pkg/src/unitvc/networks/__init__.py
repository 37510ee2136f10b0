from .blocks import ResidualBlock, ResidualStack, length_regulate, lengths_to_mask, nearest_interpolate
from .discriminator import Discriminator
from .encoders import AttributeEncoder
from .model import KINDS, AttributeVector, VoiceConversionModel
from .prosody import DurationNet, PitchEnergyNet, decode_durations, log_duration_target
from .synthesizer import EnergyNet, FilterNet, SourceNet

__all__ = [
    "AttributeEncoder",
    "AttributeVector",
    "Discriminator",
    "DurationNet",
    "EnergyNet",
    "FilterNet",
    "KINDS",
    "PitchEnergyNet",
    "ResidualBlock",
    "ResidualStack",
    "SourceNet",
    "VoiceConversionModel",
    "decode_durations",
    "length_regulate",
    "lengths_to_mask",
    "log_duration_target",
    "nearest_interpolate",
]
