"""Small dense inference engine whose reductions follow a PlatformProfile."""

from hspi.engine.layers import AvgPool2d, Conv2d, Flatten, Layer, Linear, MaxPool2d, ReLU
from hspi.engine.model import Gradient, Model, Tape, backward, cross_entropy, forward, softmax

__all__ = [
    "AvgPool2d", "Conv2d", "Flatten", "Layer", "Linear", "MaxPool2d", "ReLU",
    "Gradient", "Model", "Tape", "backward", "cross_entropy", "forward", "softmax",
]
