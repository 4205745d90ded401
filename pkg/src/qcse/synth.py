"""Deterministic synthetic speech and background material for desk-scale runs.

Speech is a chain of voiced syllables (harmonic source with a gliding pitch
through two or three formant resonators) with occasional fricative bursts and
pauses. Backgrounds come in four families: coloured stationary noise,
amplitude-modulated babble-like noise, harmonic music chords and
"effects" (swelling band-limited noise with decaying resonant impacts). Everything is a function of the seed.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.signal

from .audio import AudioClip, save_wav

BACKGROUND_KINDS = ("noise", "babble", "music", "effects")


def _resonator(x, freq, bw, rate):
    r = np.exp(-np.pi * bw / rate)
    theta = 2 * np.pi * freq / rate
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return scipy.signal.lfilter(b, a, x)


def _voiced(rng, n, rate):
    f0_start, f0_end = rng.uniform(90, 240, size=2)
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    n_harm = int(4000 // max(f0_start, f0_end))
    k = np.arange(1, n_harm + 1)[:, None]
    src = np.sum(np.sin(k * phase[None, :]) / k, axis=0)
    out = np.zeros(n)
    formants = [(rng.uniform(300, 900), 80), (rng.uniform(900, 2300), 120),
                (rng.uniform(2300, 3300), 200)]
    for freq, bw in formants[: rng.integers(2, 4)]:
        out += _resonator(src, freq, bw, rate)
    env = np.sin(np.pi * np.linspace(0, 1, n)) ** 0.7
    return out * env


def _fricative(rng, n, rate):
    noise = rng.standard_normal(n)
    lo = rng.uniform(2500, 4000)
    sos = scipy.signal.butter(4, [lo, min(lo + 2500, 0.45 * rate)], btype="band", fs=rate,
                              output="sos")
    env = np.hanning(n)
    return scipy.signal.sosfilt(sos, noise) * env * 0.5


def speech_like(seed: int, duration: float, rate: int = 48000) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n_total = int(round(duration * rate))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.02, 0.15) * rate)
    while pos < n_total:
        if rng.random() < 0.2:
            n = int(rng.uniform(0.05, 0.12) * rate)
            seg = _fricative(rng, n, rate)
        else:
            n = int(rng.uniform(0.12, 0.32) * rate)
            seg = _voiced(rng, n, rate)
        seg = seg / (np.max(np.abs(seg)) + 1e-12) * rng.uniform(0.4, 1.0)
        end = min(pos + n, n_total)
        out[pos:end] += seg[: end - pos]
        gap = rng.uniform(0.3, 0.6) if rng.random() < 0.15 else rng.uniform(0.02, 0.12)
        pos = end + int(gap * rate)
    return 0.5 * out / (np.max(np.abs(out)) + 1e-12)


def _colored_noise(rng, n, exponent):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0], dtype=float)
    f[0] = 1.0
    return np.fft.irfft(spec / f ** (exponent / 2.0), n=n)


def background_like(kind: str, seed: int, duration: float, rate: int = 48000) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    if kind == "noise":
        out = _colored_noise(rng, n, rng.uniform(0.0, 1.5))
    elif kind == "babble":
        out = np.zeros(n)
        for _ in range(rng.integers(3, 6)):
            mod = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 6.3))
            sos = scipy.signal.butter(2, [rng.uniform(200, 500), rng.uniform(1500, 3500)],
                                      btype="band", fs=rate, output="sos")
            out += scipy.signal.sosfilt(sos, rng.standard_normal(n)) * mod
    elif kind == "music":
        out = np.zeros(n)
        note_len = int(rng.uniform(0.25, 0.6) * rate)
        root = rng.uniform(110, 330)
        for start in range(0, n, note_len):
            seg_n = min(note_len, n - start)
            tt = np.arange(seg_n) / rate
            chord = root * 2 ** (rng.choice([0, 3, 4, 5, 7, 9, 12], size=3, replace=False) / 12)
            decay = np.exp(-tt * rng.uniform(1.5, 5.0))
            seg = np.zeros(seg_n)
            for f in chord:
                for k in range(1, 6):
                    if k * f < 0.45 * rate:
                        seg += np.sin(2 * np.pi * k * f * tt + rng.uniform(0, 6.3)) / k ** 1.3
            out[start:start + seg_n] = seg * decay
    elif kind == "effects":
        # wind/traffic-like texture with a few decaying resonant impacts
        sos = scipy.signal.butter(2, rng.uniform(400, 2000), fs=rate, output="sos")
        swell = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.15, 0.8) * t + rng.uniform(0, 6.3))
        out = scipy.signal.sosfilt(sos, rng.standard_normal(n)) * (0.3 + swell)
        out /= np.max(np.abs(out)) + 1e-12
        for _ in range(int(duration * rng.uniform(0.5, 2.0))):
            pos = rng.integers(0, n)
            m = int(rng.uniform(0.1, 0.4) * rate)
            tt = np.arange(m) / rate
            hit = np.sin(2 * np.pi * rng.uniform(150, 1200) * tt) * np.exp(-tt * rng.uniform(8, 25))
            end = min(pos + m, n)
            out[pos:end] += hit[: end - pos] * rng.uniform(0.3, 0.8)
    else:
        raise ValueError(f"unknown background kind {kind!r}")
    return 0.5 * out / (np.max(np.abs(out)) + 1e-12)


def write_corpus(out_dir, n_speech: int, n_background: int, duration: float = 8.0,
                 seed: int = 0, rate: int = 48000) -> dict:
    """Write ``speech_XX.wav`` / ``bg_<kind>_XX.wav`` files and return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    speech, background = [], []
    for i in range(n_speech):
        path = out_dir / f"speech_{i:02d}.wav"
        save_wav(path, AudioClip(speech_like(seed * 1000 + i, duration, rate), rate), "float32")
        speech.append(str(path))
    for i in range(n_background):
        kind = BACKGROUND_KINDS[i % len(BACKGROUND_KINDS)]
        path = out_dir / f"bg_{kind}_{i:02d}.wav"
        clip = AudioClip(background_like(kind, seed * 1000 + 500 + i, duration, rate), rate)
        save_wav(path, clip, "float32")
        background.append(str(path))
    return {"speech": speech, "background": background}


def write_manifest(path, pairs, snrs=(-10, 0, 5, 10, 20), segments=(0,)) -> int:
    """Write one JSON line per (speech, background) pair x SNR x segment."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for speech, background in pairs:
            for seg in segments:
                for snr in snrs:
                    fh.write(json.dumps({"speech_path": speech, "background_path": background,
                                         "snr_db": snr, "segment_index": seg}) + "\n")
                    n += 1
    return n
