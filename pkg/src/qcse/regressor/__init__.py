"""Single-ended attenuation regressor: features, network, training, model files."""
from .estimator import AttenuationRegressor, predict_attenuation
from .features import NormStats, apply_norm, extract_features, fit_norm_stats
from .network import Network, NetworkConfig, full_config, param_count, reduced_config
from .serialize import ModelBundle, ModelFormatError, load_model, save_model
from .training import TrainConfig, TrainingDiverged, train

__all__ = [
    "AttenuationRegressor", "predict_attenuation", "NormStats", "apply_norm",
    "extract_features", "fit_norm_stats", "Network", "NetworkConfig", "full_config",
    "param_count", "reduced_config", "ModelBundle", "ModelFormatError", "load_model",
    "save_model", "TrainConfig", "TrainingDiverged", "train",
]
