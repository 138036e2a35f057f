"""Air-writing character recognition from fingertip trajectories."""

from .errors import AirwriteError
from .model import CharacterModel, ModelConfig, Prediction
from .trajectory import FeatureSequence, Trajectory, TrajectoryPoint, prepare
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AirwriteError",
    "CharacterModel",
    "FeatureSequence",
    "ModelConfig",
    "Prediction",
    "TrainConfig",
    "Trajectory",
    "TrajectoryPoint",
    "prepare",
    "train",
    "__version__",
]
