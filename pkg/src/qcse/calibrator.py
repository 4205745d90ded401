"""Oracle line search for target attenuations, corpus mixing and loss weights."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .audio import AudioClip, AudioError, load_wav, resample
from .enhancer import SeparationResult, clamp_attenuation, remix, separate, SEPARATOR_RATE

log = logging.getLogger(__name__)

DEFAULT_SNRS = (-10, 0, 5, 10, 20)
SEGMENT_SECONDS = 4.0
ORACLE_RATE = 12000
SILENCE_ENERGY = 1e-10
PEAK_LIMIT = 0.99

TARGET_CSV_HEADER = ("speech", "background", "snr_db", "segment", "h_star_db", "q_achieved",
                     "iters")


class SkipItem(Exception):
    """An input item that cannot be used (silent, too short, unreadable)."""


@dataclass(frozen=True)
class LineSearchParams:
    q_target: float = 80.0
    step: float = 0.5
    h_init: float = 20.0
    max_iters: int = 6
    stop_tol: float = 0.25
    discard_tol: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ValueError(f"line-search parameter {name} must be positive")


@dataclass(frozen=True)
class CalibrationResult:
    h_star: float
    q_achieved: float
    iterations: int
    accepted: bool
    oracle_calls: int = 0


@dataclass(frozen=True)
class MixSpec:
    speech_path: str
    background_path: str
    snr_db: float
    segment_index: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "MixSpec":
        return cls(str(d["speech_path"]), str(d["background_path"]), float(d["snr_db"]),
                   int(d.get("segment_index", 0)))

    def to_dict(self) -> dict:
        return {"speech_path": self.speech_path, "background_path": self.background_path,
                "snr_db": self.snr_db, "segment_index": self.segment_index}

    @property
    def pair_id(self) -> str:
        """Identifier of the source material (speech, background, segment), SNR excluded."""
        digest = hashlib.sha1(f"{self.speech_path}\0{self.background_path}".encode()).hexdigest()
        return (f"{Path(self.speech_path).stem}__{Path(self.background_path).stem}"
                f"__seg{self.segment_index}__{digest[:8]}")

    @property
    def item_id(self) -> str:
        return f"{self.pair_id}__snr{self.snr_db:+g}"


# ---------------------------------------------------------------------------
# manifests and target tables

def read_manifest(path) -> list[MixSpec]:
    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                specs.append(MixSpec.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest entry ({exc})") from exc
    return specs


def write_manifest(path, specs: Iterable[MixSpec]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for spec in specs:
            fh.write(json.dumps(spec.to_dict()) + "\n")


@dataclass(frozen=True)
class TargetRow:
    spec: MixSpec
    result: CalibrationResult

    def as_csv(self) -> list:
        return [self.spec.speech_path, self.spec.background_path, f"{self.spec.snr_db:g}",
                self.spec.segment_index, repr(float(self.result.h_star)),
                repr(float(self.result.q_achieved)), self.result.iterations]


def write_targets(path, rows: Iterable[TargetRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TARGET_CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def read_targets(path) -> list[TargetRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TARGET_CSV_HEADER:
            raise ValueError(f"{path}: unexpected target table header {reader.fieldnames}")
        for rec in reader:
            spec = MixSpec(rec["speech"], rec["background"], float(rec["snr_db"]),
                           int(rec["segment"]))
            res = CalibrationResult(float(rec["h_star_db"]), float(rec["q_achieved"]),
                                    int(rec["iters"]), True)
            rows.append(TargetRow(spec, res))
    return rows


# ---------------------------------------------------------------------------
# mixing

def take_segment(clip: AudioClip, index: int, seconds: float = SEGMENT_SECONDS) -> AudioClip:
    """The ``index``-th back-to-back segment from the head of ``clip``."""
    n = int(round(seconds * clip.sample_rate))
    start = index * n
    if index < 0 or start + n > len(clip):
        raise SkipItem(f"segment {index} ({seconds} s) exceeds clip of {clip.duration:.2f} s")
    return clip.with_samples(clip.samples[start:start + n])


def fit_length(clip: AudioClip, n: int, offset: int = 0) -> AudioClip:
    """Tile or truncate ``clip`` to ``n`` samples starting at ``offset`` (wrapping)."""
    if len(clip) == 0:
        raise SkipItem("empty background")
    idx = (offset + np.arange(n)) % len(clip)
    return clip.with_samples(clip.samples[idx])


def mix_at_snr(speech: AudioClip, background: AudioClip, snr_db: float):
    """Scale the background to ``snr_db`` (mean-square ratio) and return ``(x, s, b)``."""
    if speech.sample_rate != background.sample_rate:
        raise ValueError("speech and background sample rates differ")
    if len(background) != len(speech):
        background = fit_length(background, len(speech))
    e_s = float(np.mean(speech.samples ** 2)) if len(speech) else 0.0
    e_b = float(np.mean(background.samples ** 2))
    if e_s < SILENCE_ENERGY:
        raise SkipItem("silent speech segment")
    if e_b < SILENCE_ENERGY:
        raise SkipItem("silent background segment")
    s = speech.samples
    b = background.samples * math.sqrt(e_s / (e_b * 10.0 ** (snr_db / 10.0)))
    x = s + b
    peak = float(np.max(np.abs(x)))
    if peak > PEAK_LIMIT:
        k = PEAK_LIMIT / peak
        s, b, x = s * k, b * k, x * k
    rate = speech.sample_rate
    return AudioClip(x, rate), AudioClip(s, rate), AudioClip(b, rate)


# ---------------------------------------------------------------------------
# line search

Oracle = Callable[[AudioClip, AudioClip, AudioClip], float]


def calibrate(sep: SeparationResult, s: AudioClip, b: AudioClip, oracle: Oracle,
              params: LineSearchParams | None = None) -> CalibrationResult:
    """Iterate ``h <- clamp(h - step * (q_target - q), 0, 40)`` against the oracle.

    ``sep`` is the separation of ``x = s + b`` at the oracle rate. The stop test
    runs before each update, so ``h_init`` is returned unchanged when it already
    meets the target.
    """
    p = params or LineSearchParams()
    h = clamp_attenuation(p.h_init)
    k = 0
    while True:
        q = float(oracle(remix(sep, h), s, b))
        if abs(q - p.q_target) < p.stop_tol or k == p.max_iters:
            break
        h = clamp_attenuation(h - p.step * (p.q_target - q))
        k += 1
    return CalibrationResult(h, q, k, abs(q - p.q_target) < p.discard_tol, k + 1)


@dataclass(frozen=True, eq=False)
class PreparedItem:
    """One mixed 4 s segment with its separation, all at the oracle rate."""

    spec: MixSpec
    x: AudioClip
    s: AudioClip
    b: AudioClip
    sep: SeparationResult


def _to_float32(clip: AudioClip) -> AudioClip:
    # stored WAVs are float32; calibrating on the rounded values keeps re-scoring exact
    return clip.with_samples(clip.samples.astype(np.float32).astype(np.float64))


def prepare_item(spec: MixSpec, separator=None, loader=load_wav,
                 segment_seconds: float = SEGMENT_SECONDS,
                 separator_rate: int = SEPARATOR_RATE,
                 oracle_rate: int = ORACLE_RATE) -> PreparedItem:
    try:
        speech = resample(loader(spec.speech_path), separator_rate)
        background = resample(loader(spec.background_path), separator_rate)
    except (OSError, AudioError) as exc:
        raise SkipItem(f"unreadable input: {exc}") from exc
    seg = take_segment(speech, spec.segment_index, segment_seconds)
    bg = fit_length(background, len(seg), offset=spec.segment_index * len(seg))
    x, s, b = mix_at_snr(seg, bg, spec.snr_db)
    sep = separator.separate(x) if separator is not None else separate(x)

    x12 = _to_float32(resample(x, oracle_rate))
    s12 = _to_float32(resample(s, oracle_rate))
    b12 = _to_float32(resample(b, oracle_rate))
    s_est = _to_float32(resample(sep.speech_est, oracle_rate))
    sep12 = SeparationResult(s_est, x12.with_samples(x12.samples - s_est.samples))
    return PreparedItem(spec, x12, s12, b12, sep12)


def build_targets(manifest: Iterable[MixSpec], oracle: Oracle,
                  params: LineSearchParams | None = None, separator=None,
                  keep_discarded: bool = False, workers: int = 1,
                  on_item: Callable[[PreparedItem, CalibrationResult], None] | None = None,
                  segment_seconds: float = SEGMENT_SECONDS, loader=None):
    """Mix, separate and calibrate every manifest row, in manifest order.

    Returns ``(rows, skipped)`` where ``skipped`` lists ``(spec, reason)`` for
    unusable or discarded items. ``on_item`` sees every calibrated item, e.g. to
    write its audio.
    """
    params = params or LineSearchParams()
    specs = list(manifest)

    def work(spec):
        try:
            item = prepare_item(spec, separator, loader=loader or load_wav,
                                segment_seconds=segment_seconds)
        except SkipItem as exc:
            return spec, None, None, str(exc)
        return spec, item, calibrate(item.sep, item.s, item.b, oracle, params), None

    rows, skipped = [], []
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, specs))
    else:
        results = map(work, specs)
    for spec, item, res, reason in results:
        if res is None:
            log.warning("skipping %s: %s", spec.item_id, reason)
            skipped.append((spec, reason))
            continue
        if on_item is not None:
            on_item(item, res)
        if res.accepted or keep_discarded:
            rows.append(TargetRow(spec, res))
        else:
            reason = f"discarded: |q - q_target| = {abs(res.q_achieved - params.q_target):.2f}"
            log.info("%s %s", spec.item_id, reason)
            skipped.append((spec, reason))
    return rows, skipped


# ---------------------------------------------------------------------------
# loss weights

def histogram_weights(targets, bin_width: float = 1.0, eps: float = 1e-3) -> np.ndarray:
    """Inverse smoothed target density per item, normalised to mean 1.

    Densities are item fractions per ``bin_width`` bin (bins anchored at 0 dB),
    floored at ``eps`` so no single weight exceeds ``1 / eps`` before scaling.
    """
    h = np.asarray(targets, dtype=np.float64)
    if h.size == 0:
        raise ValueError("histogram_weights needs at least one target")
    bins = np.floor(h / bin_width).astype(np.int64)
    _, inverse, counts = np.unique(bins, return_inverse=True, return_counts=True)
    density = np.maximum(counts[inverse] / h.size, eps)
    w = 1.0 / density
    return w / w.mean()
