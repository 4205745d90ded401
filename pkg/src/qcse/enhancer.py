"""Speech/background separation and the attenuation remix ``y = s_est + g * b_est``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import SEPARATOR_STFT, AudioClip, AudioError, Spectrogram, StftConfig, istft, stft

SEPARATOR_RATE = 48000
H_MIN_DB = 0.0
H_MAX_DB = 40.0


def db_to_gain(h_db: float) -> float:
    return 10.0 ** (-h_db / 20.0)


def gain_to_db(g: float) -> float:
    return -20.0 * math.log10(g)


def check_attenuation(h_db: float) -> float:
    h_db = float(h_db)
    if not (H_MIN_DB <= h_db <= H_MAX_DB) or math.isnan(h_db):
        raise ValueError(f"attenuation {h_db} dB outside [{H_MIN_DB}, {H_MAX_DB}]")
    return h_db


def clamp_attenuation(h_db: float) -> float:
    return min(max(float(h_db), H_MIN_DB), H_MAX_DB)


@dataclass(frozen=True)
class SeparatorConfig:
    noise_floor_gain: float = 0.1
    smoothing_attack: float = 0.010
    smoothing_release: float = 0.050
    noise_update_rate: float = 0.98
    oversubtraction: float = 1.5
    # one-pole smoothing of the power spectrum seen by the noise tracker and the gain rule
    power_smoothing: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.noise_floor_gain <= 1.0:
            raise ValueError("noise_floor_gain must be in (0, 1]")
        for name in ("smoothing_attack", "smoothing_release", "oversubtraction"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.noise_update_rate < 1.0:
            raise ValueError("noise_update_rate must be in (0, 1)")
        if not 0.0 <= self.power_smoothing < 1.0:
            raise ValueError("power_smoothing must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class SeparationResult:
    speech_est: AudioClip
    background_est: AudioClip

    @property
    def mixture(self) -> AudioClip:
        return self.speech_est.with_samples(self.speech_est.samples + self.background_est.samples)


def _one_pole(prev, target, coef):
    return coef * prev + (1.0 - coef) * target


def spectral_gains(power: np.ndarray, cfg: SeparatorConfig, frame_rate: float) -> np.ndarray:
    """Per-bin gains in ``[noise_floor_gain, 1]`` for a ``(T, F)`` power spectrogram.

    A minimum-tracking noise estimate feeds a power-subtraction rule, and the
    resulting gains are smoothed over time with separate attack (rising gain)
    and release (falling gain) time constants.
    """
    n_frames = power.shape[0]
    gains = np.empty_like(power)
    attack = math.exp(-1.0 / (cfg.smoothing_attack * frame_rate))
    release = math.exp(-1.0 / (cfg.smoothing_release * frame_rate))
    tiny = np.finfo(np.float64).tiny

    smoothed = power[0].copy()
    noise = power[0].copy()
    gain_prev = None
    for t in range(n_frames):
        smoothed = _one_pole(smoothed, power[t], cfg.power_smoothing)
        below = smoothed < noise
        noise = np.where(below, smoothed, _one_pole(noise, smoothed, cfg.noise_update_rate))
        raw = 1.0 - cfg.oversubtraction * noise / np.maximum(smoothed, tiny)
        raw = np.clip(raw, cfg.noise_floor_gain, 1.0)
        if gain_prev is None:
            g = raw
        else:
            coef = np.where(raw > gain_prev, attack, release)
            g = _one_pole(gain_prev, raw, coef)
        gains[t] = g
        gain_prev = g
    return gains


def separate(x: AudioClip, cfg: SeparatorConfig | None = None,
             stft_config: StftConfig = SEPARATOR_STFT) -> SeparationResult:
    """Split ``x`` into a speech estimate and the residual background ``x - s_est``."""
    cfg = cfg or SeparatorConfig()
    if len(x) < stft_config.window_len:
        raise AudioError(
            f"input of {len(x)} samples is shorter than one separator frame "
            f"({stft_config.window_len})")
    hop = stft_config.hop
    # pad so every input sample lies in the fully overlapped region
    n = len(x)
    n_frames = -(-(n + hop) // hop)
    padded = np.zeros((n_frames + 1) * hop)
    padded[hop: hop + n] = x.samples
    spec = stft(x.with_samples(padded), stft_config)
    gains = spectral_gains(np.abs(spec.frames) ** 2, cfg, x.sample_rate / hop)
    masked = Spectrogram(spec.frames * gains, stft_config, x.sample_rate, spec.n_samples)
    s_est = istft(masked).samples[hop: hop + n]
    return SeparationResult(x.with_samples(s_est), x.with_samples(x.samples - s_est))


def remix(sep: SeparationResult, h_db: float) -> AudioClip:
    g = db_to_gain(check_attenuation(h_db))
    return sep.speech_est.with_samples(sep.speech_est.samples + g * sep.background_est.samples)


class SpectralSeparator(BaseEstimator, TransformerMixin):
    """Stateless estimator wrapper around :func:`separate`.

    ``transform`` accepts an :class:`AudioClip` (or a list of them) and returns
    the matching :class:`SeparationResult` objects, so the separator can be
    swapped for any other object exposing the same method.
    """

    def __init__(self, noise_floor_gain=0.1, smoothing_attack=0.010, smoothing_release=0.050,
                 noise_update_rate=0.98, oversubtraction=1.5, power_smoothing=0.85):
        self.noise_floor_gain = noise_floor_gain
        self.smoothing_attack = smoothing_attack
        self.smoothing_release = smoothing_release
        self.noise_update_rate = noise_update_rate
        self.oversubtraction = oversubtraction
        self.power_smoothing = power_smoothing

    @classmethod
    def from_config(cls, cfg: SeparatorConfig) -> "SpectralSeparator":
        return cls(**cfg.__dict__)

    @property
    def config(self) -> SeparatorConfig:
        return SeparatorConfig(**self.get_params())

    def fit(self, X=None, y=None):
        return self

    def separate(self, x: AudioClip) -> SeparationResult:
        return separate(x, self.config)

    def transform(self, X):
        if isinstance(X, AudioClip):
            return self.separate(X)
        return [self.separate(x) for x in X]
