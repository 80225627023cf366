from .adam import Adam
from .hyper import HyperConfig, HyperModulator, body_point_sample, encode_points, sample_body_points
from .mlp import Mlp, Modulation
from .model import DrapeModel, NetworkDims

__all__ = [
    "Adam", "DrapeModel", "HyperConfig", "HyperModulator", "Mlp", "Modulation", "NetworkDims",
    "body_point_sample", "encode_points", "sample_body_points",
]
