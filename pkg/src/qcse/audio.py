"""Audio containers, WAV I/O, resampling and the sine-window STFT.

Every signal in the pipeline travels as an :class:`AudioClip`. The STFT uses
no edge padding: the first frame starts at sample 0 and only complete frames
are kept, so ``T = (N - window_len) // hop + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

MIN_RATE = 8000
MAX_RATE = 192000


class AudioError(ValueError):
    """Raised for unreadable, unsupported or degenerate audio."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono float64 samples at full scale +-1.0 with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"AudioClip expects 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("AudioClip samples contain NaN or Inf")
        rate = int(self.sample_rate)
        if rate != self.sample_rate or not MIN_RATE <= rate <= MAX_RATE:
            raise AudioError(f"sample rate {self.sample_rate} outside {MIN_RATE}..{MAX_RATE}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    window_len: int
    hop: int
    fft_len: int
    window_kind: str = "sine"

    def __post_init__(self):
        if self.window_len < 2 or self.window_len % 2:
            raise ValueError("window_len must be an even number >= 2")
        if self.hop * 2 != self.window_len:
            raise ValueError("hop must be window_len / 2 (50% overlap)")
        if self.fft_len < self.window_len:
            raise ValueError("fft_len must be >= window_len")
        if self.window_kind != "sine":
            raise ValueError(f"unsupported window kind {self.window_kind!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1

    def window(self) -> np.ndarray:
        return sine_window(self.window_len)


# 21.3 ms frames at the 48 kHz separator rate, and the regressor front end at 12 kHz.
SEPARATOR_STFT = StftConfig(window_len=1024, hop=512, fft_len=1024)
FEATURE_STFT = StftConfig(window_len=256, hop=128, fft_len=512)


def sine_window(n: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(n) + 0.5) / n)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT frames, shape ``(T, F)``."""

    frames: np.ndarray
    config: StftConfig
    sample_rate: int
    n_samples: int = field(default=-1)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[1] != self.config.n_bins:
            raise ValueError(
                f"frames must have shape (T, {self.config.n_bins}), got {frames.shape}")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self):
        return self.frames.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)


# ---------------------------------------------------------------------------
# WAV I/O

def load_wav(path) -> AudioClip:
    """Read a PCM16, PCM24 or float32 WAV file and downmix it to mono."""
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.shape[0] == 0:
        raise AudioError(f"{path}: zero-length audio")
    return AudioClip(samples, rate)


def save_wav(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    """Write ``clip`` as ``pcm16`` (clipped to full scale) or ``float32``."""
    if fmt == "pcm16":
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    elif fmt == "float32":
        data = clip.samples.astype("<f4")
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    scipy.io.wavfile.write(Path(path), clip.sample_rate, data)


# ---------------------------------------------------------------------------
# Resampling

TAPS_PER_PHASE = 64
KAISER_BETA = 8.0


def resampling_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc prototype for a polyphase ``up/down`` converter.

    Unit DC gain; ``resample_poly`` applies the factor ``up`` itself.
    """
    factor = max(up, down)
    n_taps = TAPS_PER_PHASE * factor + 1
    return scipy.signal.firwin(n_taps, 1.0 / factor, window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(int(target_rate), clip.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    if len(clip) == 0:
        return AudioClip(np.zeros(0), target_rate)
    y = scipy.signal.resample_poly(clip.samples, up, down, window=resampling_filter(up, down))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.concatenate([y, np.zeros(n_out - y.shape[0])])
    return AudioClip(y, target_rate)


# ---------------------------------------------------------------------------
# STFT

def frame_signal(samples: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    n_frames = (samples.shape[0] - window_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(samples, window_len)
    return view[: (n_frames - 1) * hop + 1 : hop]


def stft(clip: AudioClip, config: StftConfig) -> Spectrogram:
    if len(clip) < config.window_len:
        raise AudioError(
            f"clip of {len(clip)} samples is shorter than one window ({config.window_len})")
    frames = frame_signal(clip.samples, config.window_len, config.hop) * config.window()
    coefs = np.fft.rfft(frames, n=config.fft_len, axis=1)
    return Spectrogram(coefs, config, clip.sample_rate, len(clip))


def istft(spec: Spectrogram) -> AudioClip:
    """Weighted overlap-add with the sine window as synthesis window.

    The squared sine window sums to one at 50 % overlap, so the interior
    (samples covered by two frames) is reconstructed exactly. The first and
    last half-window carry only one frame and are left unnormalised.
    """
    cfg = spec.config
    n_frames = spec.frames.shape[0]
    if spec.frames.shape[1] != cfg.n_bins:
        raise ValueError("spectrogram bins do not match its config")
    length = (n_frames - 1) * cfg.hop + cfg.window_len if n_frames else 0
    out = np.zeros(max(length, spec.n_samples))
    if n_frames:
        chunks = np.fft.irfft(spec.frames, n=cfg.fft_len, axis=1)[:, : cfg.window_len]
        chunks = chunks * cfg.window()
        # hop = window/2: even frames tile the first half of each pair, odd the second
        for start in (0, 1):
            part = chunks[start::2].reshape(-1)
            off = start * cfg.hop
            out[off: off + part.shape[0]] += part
    return AudioClip(out, spec.sample_rate)


def interior_slice(n_samples: int, config: StftConfig) -> slice:
    """Samples covered by two overlapping frames, where istft(stft(x)) == x."""
    n_frames = config.n_frames(n_samples)
    end = (n_frames - 1) * config.hop + config.window_len
    return slice(config.hop, max(config.hop, end - config.hop))


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return math.sqrt(float(np.mean(x * x))) if x.size else 0.0
