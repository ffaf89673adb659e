"""Flat ``key=value`` config files covering training, loss and encoder settings."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .losses import LossWeights
from .model import EncoderConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    label_min: float | None = None
    label_max: float | None = None

    @property
    def weights(self) -> LossWeights:
        return self.train.weights


# var_floor appears in both LossWeights and EncoderConfig and is kept in sync
_SECTIONS = {
    "train": [f.name for f in dataclasses.fields(TrainConfig) if f.name != "weights"],
    "weights": [f.name for f in dataclasses.fields(LossWeights)],
    "encoder": [f.name for f in dataclasses.fields(EncoderConfig)],
    "top": ["label_min", "label_max"],
}
KNOWN_KEYS = sorted({k for keys in _SECTIONS.values() for k in keys})


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if key == "seeds":
            seeds = tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
            if not seeds:
                raise ValueError("empty seed list")
            return seeds
        if key in ("label_min", "label_max"):
            return None if raw.lower() in ("", "none") else float(raw)
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply flat overrides to ``base`` (defaults when omitted)."""
    base = base or ExperimentConfig()
    unknown = sorted(set(values) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cur = {
        "train": {k: getattr(base.train, k) for k in _SECTIONS["train"]},
        "weights": dataclasses.asdict(base.weights),
        "encoder": dataclasses.asdict(base.encoder),
        "top": {"label_min": base.label_min, "label_max": base.label_max},
    }
    for key, raw in values.items():
        for section, keys in _SECTIONS.items():
            if key in keys:
                value = raw if not isinstance(raw, str) else _convert(key, raw, cur[section][key])
                cur[section][key] = value
    if "var_floor" in values:
        cur["weights"]["var_floor"] = cur["encoder"]["var_floor"] = cur["weights"]["var_floor"]
    try:
        weights = LossWeights(**cur["weights"])
        train = TrainConfig(**cur["train"], weights=weights)
        encoder = EncoderConfig(**cur["encoder"])
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(train, encoder, **cur["top"])


def to_mapping(config: ExperimentConfig) -> dict:
    out = {k: getattr(config.train, k) for k in _SECTIONS["train"]}
    out.update(dataclasses.asdict(config.weights))
    out.update(dataclasses.asdict(config.encoder))
    out["label_min"] = config.label_min
    out["label_max"] = config.label_max
    return dict(sorted(out.items()))


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def dumps(config: ExperimentConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in to_mapping(config).items())


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return from_mapping(values, base)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)
