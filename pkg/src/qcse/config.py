"""Pipeline configuration: an INI file with one section per component.

Every key has a default (``qcse config`` prints them all). Values are read
with :func:`ast.literal_eval` and fall back to plain strings, so ``(4, 4)``,
``1e-5`` and ``true`` all parse. Command-line ``--set section.key=value``
overrides are applied on top of the file.
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .calibrator import LineSearchParams
from .enhancer import SeparatorConfig
from .quality import QualityConfig
from .regressor.training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkParams:
    architecture: str = "reduced"
    filters: tuple = (8, 16, 32)
    dense_units: int = 64
    dropout: float = 0.3
    output_bias_init: float = 14.0


@dataclass(frozen=True)
class FeatureParams:
    # mean-pooling factors (frames, bins) applied before the reduced network
    pool: tuple = (4, 4)


@dataclass(frozen=True)
class DataParams:
    segment_seconds: float = 4.0
    keep_discarded: bool = False
    weight_bin_width: float = 1.0
    weight_eps: float = 1e-3
    use_weights: bool = True


@dataclass(frozen=True)
class RunParams:
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    linesearch: LineSearchParams = field(default_factory=LineSearchParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkParams = field(default_factory=NetworkParams)
    features: FeatureParams = field(default_factory=FeatureParams)
    data: DataParams = field(default_factory=DataParams)
    run: RunParams = field(default_factory=RunParams)

    @property
    def seed(self) -> int:
        return self.run.seed


SECTIONS = tuple(f.name for f in dataclasses.fields(PipelineConfig))
_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


def _parse_value(raw: str, default):
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        value = text
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"expected a tuple, got {raw!r}")
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if type(value) is not type(default):
        raise ConfigError(f"expected {type(default).__name__}, got {raw!r}")
    return value


def _section_values(cfg: PipelineConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS}


def apply_overrides(cfg: PipelineConfig, items) -> PipelineConfig:
    """Apply ``(section, key, raw_value)`` triples, validating names and types."""
    values = _section_values(cfg)
    for section, key, raw in items:
        if section not in values:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in values[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        values[section][key] = _parse_value(raw, values[section][key])
    parts = {}
    for f in dataclasses.fields(PipelineConfig):
        try:
            parts[f.name] = f.default_factory(**values[f.name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{f.name}] settings: {exc}") from exc
    return PipelineConfig(**parts)


def parse_set(arg: str) -> tuple[str, str, str]:
    name, sep, value = arg.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"--set expects section.key=value, got {arg!r}")
    return section, key, value


def load_config(path=None, overrides=()) -> PipelineConfig:
    items = []
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                items.append((section, key, raw))
    items.extend(parse_set(o) if isinstance(o, str) else tuple(o) for o in overrides)
    return apply_overrides(PipelineConfig(), items)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(tuple(value)) if isinstance(value, (tuple, list)) else repr(value)


def dump_config(cfg: PipelineConfig | None = None) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in _section_values(cfg or PipelineConfig()).items():
        parser[section] = {k: _format(v) for k, v in values.items()}
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()
