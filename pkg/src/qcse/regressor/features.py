"""Log-magnitude STFT features and per-(channel, bin) normalisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..audio import FEATURE_STFT, AudioClip, StftConfig, stft

FEATURE_RATE = 12000
SEGMENT_SAMPLES = 48000
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-6


def log_magnitude(clip: AudioClip, config: StftConfig = FEATURE_STFT) -> np.ndarray:
    return np.log(np.maximum(np.abs(stft(clip, config).frames), LOG_FLOOR))


def mean_pool(data: np.ndarray, factors: tuple) -> np.ndarray:
    """Average non-overlapping blocks over the last two axes; ragged edge blocks keep
    their own (smaller) count, so the output size is ``ceil(size / factor)``."""
    ft, ff = factors
    if (ft, ff) == (1, 1):
        return data
    t_idx = np.arange(0, data.shape[-2], ft)
    f_idx = np.arange(0, data.shape[-1], ff)
    summed = np.add.reduceat(np.add.reduceat(data, t_idx, axis=-2), f_idx, axis=-1)
    t_cnt = np.diff(np.append(t_idx, data.shape[-2]))
    f_cnt = np.diff(np.append(f_idx, data.shape[-1]))
    return summed / (t_cnt[:, None] * f_cnt[None, :])


def extract_features(x: AudioClip, s_est: AudioClip, config: StftConfig = FEATURE_STFT,
                     n_samples: int | None = SEGMENT_SAMPLES, sample_rate: int = FEATURE_RATE,
                     pool: tuple = (1, 1)) -> np.ndarray:
    """Stack ``[log|X|, log|S_est|]`` into a ``(2, T, F)`` array.

    With the default 4 s / 12 kHz segment this is ``(2, 374, 257)``; ``pool``
    averages blocks of frames and bins for the reduced network.
    """
    for name, clip in (("mixture", x), ("speech estimate", s_est)):
        if clip.sample_rate != sample_rate:
            raise ValueError(f"{name} is at {clip.sample_rate} Hz, expected {sample_rate} Hz")
        if n_samples is not None and len(clip) != n_samples:
            raise ValueError(f"{name} has {len(clip)} samples, expected {n_samples}")
    if len(x) != len(s_est):
        raise ValueError("mixture and speech estimate lengths differ")
    feats = np.stack([log_magnitude(x, config), log_magnitude(s_est, config)])
    return mean_pool(feats, tuple(pool))


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray  # (C, F)
    std: np.ndarray   # (C, F)

    def apply(self, tensor: np.ndarray) -> np.ndarray:
        return apply_norm(tensor, self)


def fit_norm_stats(features) -> NormStats:
    """Mean and std per (channel, bin), pooled over all frames of all items."""
    features = list(features) if not isinstance(features, np.ndarray) else features
    if len(features) == 0:
        raise ValueError("cannot fit normalisation statistics on an empty set")
    total = None
    count = 0
    for item in features:
        s = np.asarray(item, dtype=np.float64).sum(axis=1)
        total = s if total is None else total + s
        count += item.shape[1]
    mean = total / count
    # two passes keep the variance accurate next to the log floor (about -23)
    sq = None
    for item in features:
        d = (np.asarray(item, dtype=np.float64) - mean[:, None, :]) ** 2
        sq = d.sum(axis=1) if sq is None else sq + d.sum(axis=1)
    std = np.maximum(np.sqrt(sq / count), STD_FLOOR)
    return NormStats(mean, std)


def apply_norm(tensor: np.ndarray, stats: NormStats) -> np.ndarray:
    return (tensor - stats.mean[..., :, None, :]) / stats.std[..., :, None, :]


class FeatureNormalizer(BaseEstimator, TransformerMixin):
    """Fits :class:`NormStats` on ``(n, C, T, F)`` features and standardises them."""

    def fit(self, X, y=None):
        self.stats_ = fit_norm_stats(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return apply_norm(np.asarray(X), self.stats_)
