from .checkpoint import CheckpointError, IntegrityError, load, save
from .network import (
    Architecture,
    CacheMismatchError,
    ClassProbs,
    Network,
    ShapeError,
    argmax_high,
    backward,
    forward,
    init_network,
    loss,
    predict,
    predict_batch,
)
from .training import EpochStats, TrainConfig, train, write_history

__all__ = [
    "Architecture", "CacheMismatchError", "CheckpointError", "ClassProbs", "EpochStats",
    "IntegrityError", "Network", "ShapeError", "TrainConfig", "argmax_high", "backward",
    "forward", "init_network", "load", "loss", "predict", "predict_batch", "save", "train",
    "write_history",
]
