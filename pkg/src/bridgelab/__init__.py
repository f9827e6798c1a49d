"""Intermediate-domain bridging for cross-domain re-identification on a
NumPy autodiff stack."""
from .backbone import NetConfig, StagedNetwork
from .config import TrainConfig, load_config
from .errors import (BridgeLabError, ConfigurationError, DomainError, EvaluationError,
                     ParseError, StateError)
from .trainer import TrainResult, train_dg, train_uda

__version__ = "0.1.0"

__all__ = [
    "NetConfig", "StagedNetwork", "TrainConfig", "load_config", "TrainResult",
    "train_uda", "train_dg", "BridgeLabError", "ConfigurationError", "DomainError",
    "EvaluationError", "ParseError", "StateError", "__version__",
]
