"""Score-based generative speech enhancement in the complex STFT domain."""
from .dsp import StftConfig, TransformConfig
from .sampler import SamplerConfig, pc_sample
from .scorenet import NetConfig, ScoreNet
from .sde import SdeParams
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "NetConfig",
    "SamplerConfig",
    "ScoreNet",
    "SdeParams",
    "StftConfig",
    "TrainConfig",
    "TransformConfig",
    "pc_sample",
    "train",
]
