"""Estimator wrapper tying features, normalisation, network and training together."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..audio import AudioClip
from ..enhancer import H_MAX_DB
from .features import NormStats, apply_norm, extract_features, fit_norm_stats
from .network import Network, full_config, reduced_config
from .serialize import ModelBundle
from .training import TrainConfig, train

PREDICT_BATCH = 32


def _as_float32_stats(stats: NormStats) -> NormStats:
    # the model file stores float32; keep the in-memory copy identical so a
    # saved-and-reloaded model predicts bit-for-bit the same values
    return NormStats(stats.mean.astype(np.float32), stats.std.astype(np.float32))


def network_forward(net: Network, stats: NormStats, X, batch: int = PREDICT_BATCH) -> np.ndarray:
    """Clamped inference-mode outputs for unnormalised ``(n, C, T, F)`` features."""
    X = np.asarray(X)
    out = []
    for start in range(0, X.shape[0], batch):
        Z = apply_norm(X[start:start + batch], stats).astype(net.dtype)
        out.append(net.forward(Z, train=False))
    if not out:
        return np.zeros(0)
    return np.clip(np.concatenate(out).astype(np.float64), 0.0, H_MAX_DB)


def predict_attenuation(net: Network, stats: NormStats, x: AudioClip, s_est: AudioClip,
                        pool=(1, 1)) -> float:
    """Single-ended estimate of the background attenuation for one 4 s segment."""
    feats = extract_features(x, s_est, pool=tuple(pool))
    return float(network_forward(net, stats, feats[None])[0])


class AttenuationRegressor(BaseEstimator, RegressorMixin):
    """Predicts the attenuation ``h`` (dB) from ``(n, 2, T, F)`` log-magnitude features.

    ``architecture`` is ``"reduced"`` (desk scale, sized from the input) or
    ``"full"`` (the published 2 x 374 x 257 network). Features are normalised
    with statistics fitted on the training set.
    """

    def __init__(self, architecture="reduced", filters=(8, 16, 32), dense_units=64, dropout=0.3,
                 output_bias_init=14.0, batch_size=64, momentum=0.5, nesterov=True,
                 lr_main=1e-5, epochs_main=60, lr_refine=1e-6, epochs_refine=3, seed=0):
        self.architecture = architecture
        self.filters = filters
        self.dense_units = dense_units
        self.dropout = dropout
        self.output_bias_init = output_bias_init
        self.batch_size = batch_size
        self.momentum = momentum
        self.nesterov = nesterov
        self.lr_main = lr_main
        self.epochs_main = epochs_main
        self.lr_refine = lr_refine
        self.epochs_refine = epochs_refine
        self.seed = seed

    def _network_config(self, input_shape):
        if self.architecture == "full":
            cfg = full_config()
            if tuple(input_shape) != cfg.input_shape:
                raise ValueError(f"full architecture expects input {cfg.input_shape}, "
                                 f"got {tuple(input_shape)}")
        elif self.architecture == "reduced":
            cfg = reduced_config(input_shape, tuple(self.filters), self.dense_units, self.dropout)
        else:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        return type(cfg)(cfg.input_shape, cfg.layers, float(self.output_bias_init))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.momentum, self.nesterov, self.lr_main,
                           self.epochs_main, self.lr_refine, self.epochs_refine)

    def fit(self, X, y, sample_weight=None, callback=None):
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 4:
            raise ValueError(f"expected (n, C, T, F) features, got shape {X.shape}")
        if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
            raise ValueError("empty training set or feature/target length mismatch")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("features and targets must be finite")
        self.norm_stats_ = _as_float32_stats(fit_norm_stats(X))
        Z = apply_norm(X, self.norm_stats_).astype(np.float32)
        self.network_ = Network(self._network_config(X.shape[1:]), seed=self.seed)
        self.history_ = train(self.network_, Z, y, sample_weight, self.train_config(),
                              seed=self.seed, callback=callback)
        self.train_target_mean_ = float(np.mean(y))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return network_forward(self.network_, self.norm_stats_, np.asarray(X, dtype=np.float32))

    def bundle(self, meta: dict | None = None) -> ModelBundle:
        check_is_fitted(self, "network_")
        info = {"train_target_mean": self.train_target_mean_, "params": self.get_params()}
        info.update(meta or {})
        return ModelBundle(self.network_, self.norm_stats_, info)

    @classmethod
    def from_bundle(cls, bundle: ModelBundle) -> "AttenuationRegressor":
        params = dict(bundle.meta.get("params", {}))
        est = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in params.items()})
        est.network_ = bundle.network
        est.norm_stats_ = bundle.stats
        est.history_ = []
        est.train_target_mean_ = float(bundle.meta.get("train_target_mean", float("nan")))
        est.n_features_in_ = int(np.prod(bundle.network.config.input_shape))
        return est
