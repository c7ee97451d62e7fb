"""Flat ``section.key = value`` run configuration.

Resolution order is defaults, then a config file, then command-line overrides.
Unknown keys are rejected and every value is validated by the module config
it feeds.
"""

from __future__ import annotations

import dataclasses
import enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from .dataset import Task
from .dsp import DspConfig, FeatureKind
from .errors import ConfigError
from .masking import ChannelMaskConfig, MaskingConfig, NoiseMaskConfig, TimeMaskConfig
from .model import ModelConfig
from .training import FinetuneConfig, PretrainConfig, Technique

PathLike = Union[str, Path]

_SECTIONS = {
    "dsp": DspConfig,
    "mask.time": TimeMaskConfig,
    "mask.channel": ChannelMaskConfig,
    "mask.noise": NoiseMaskConfig,
    "model": ModelConfig,
}
_SKIP = {("pretrain", "masking")}

# keys without a module dataclass behind them
_EXTRA: Dict[str, Tuple[type, Any]] = {
    "run.seed": (int, 0),
    "run.workers": (int, 1),
    "preprocess.features": (FeatureKind, FeatureKind.MFCC),
    "preprocess.chunk_seconds": (float, 4.0),
    "preprocess.step_seconds": (float, 1.0),
    "noise.dir": (str, ""),
    "noise.inject": (str, "auto"),
    "noise.max_gain": (float, 0.1),
    "noise.max_sources": (int, 2),
}


def _field_type(f: dataclasses.Field) -> type:
    t = f.type
    if isinstance(t, str):
        t = {"int": int, "float": float, "bool": bool, "str": str}.get(t, t)
    if isinstance(f.default, enum.Enum):
        return type(f.default)
    if isinstance(t, type):
        return t
    return type(f.default)


def _build_schema() -> Dict[str, Tuple[type, Any]]:
    schema: Dict[str, Tuple[type, Any]] = {}
    sections = dict(_SECTIONS)
    sections["pretrain"] = PretrainConfig
    sections["finetune"] = FinetuneConfig
    for section, cls in sections.items():
        for f in dataclasses.fields(cls):
            if (section, f.name) in _SKIP or f.name == "seed":
                continue
            schema[f"{section}.{f.name}"] = (_field_type(f), f.default)
    schema.update(_EXTRA)
    return schema


SCHEMA = _build_schema()


def _parse_value(key: str, raw: Any) -> Any:
    kind, _ = SCHEMA[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is FeatureKind:
            return FeatureKind[text.upper()]
        if issubclass(kind, enum.Enum):
            return kind(text.lower())
        return kind(text)
    except (ValueError, KeyError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, FeatureKind):
        return value.name.lower()
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_config_text(text: str, origin: str = "<config>") -> Dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


class RunConfig:
    """Resolved configuration for one command invocation."""

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self.values: Dict[str, Any] = {k: default for k, (_, default) in SCHEMA.items()}
        if values:
            self.update(values)

    @classmethod
    def resolve(cls, config_file: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        rc = cls()
        if config_file:
            path = Path(config_file)
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from None
            rc.update(parse_config_text(text, str(path)))
        if overrides:
            rc.update({k: v for k, v in overrides.items() if v is not None})
        rc.validate()
        return rc

    def update(self, values: Mapping[str, Any]) -> None:
        unknown = sorted(k for k in values if k not in SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key, raw in values.items():
            self.values[key] = _parse_value(key, raw)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> Dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix) and "." not in k[len(prefix):]}

    def snapshot(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in sorted(self.values.items()))

    def write_snapshot(self, path: PathLike) -> None:
        Path(path).write_text(self.snapshot(), encoding="utf-8")

    # builders --------------------------------------------------------------

    def dsp(self) -> DspConfig:
        return self._build(DspConfig, self.section("dsp"))

    def masking(self) -> MaskingConfig:
        return MaskingConfig(
            time=self._build(TimeMaskConfig, self.section("mask.time")),
            channel=self._build(ChannelMaskConfig, self.section("mask.channel")),
            noise=self._build(NoiseMaskConfig, self.section("mask.noise")),
        )

    def model(self, **overrides) -> ModelConfig:
        return self._build(ModelConfig, {**self.section("model"), **overrides})

    def pretrain(self) -> PretrainConfig:
        return self._build(PretrainConfig, {**self.section("pretrain"), "seed": self["run.seed"], "masking": self.masking()})

    def finetune(self) -> FinetuneConfig:
        return self._build(FinetuneConfig, {**self.section("finetune"), "seed": self["run.seed"]})

    @staticmethod
    def _build(cls, kwargs):
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{cls.__name__}: {exc}") from None

    def validate(self) -> None:
        self.dsp()
        self.masking()
        self.model()
        self._build(PretrainConfig, {**self.section("pretrain"), "seed": self["run.seed"]})
        self.finetune()
        if self["noise.inject"] not in ("auto", "on", "off"):
            raise ConfigError("noise.inject must be auto, on or off")
        if self["run.workers"] < 1:
            raise ConfigError("run.workers must be >= 1")
        if not self["preprocess.chunk_seconds"] >= self["preprocess.step_seconds"] > 0:
            raise ConfigError("need preprocess.chunk_seconds >= preprocess.step_seconds > 0")
