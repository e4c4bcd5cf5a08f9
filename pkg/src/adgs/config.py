"""Strict INI configuration for training runs and synthetic scenes.

Sections: [train], [loss], [mask], [ema] map onto TrainConfig fields and
[scene] onto SynthSceneSpec. Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace

from .synthdata import SynthSceneSpec
from .trainer import TrainConfig

SECTION_KEYS = {
    "loss": ("lambda_dssim", "lambda_m", "lambda_mask", "consistency_stop_grad"),
    "mask": ("masks", "hard_mask_refresh", "soft_mask_lr"),
    "ema": ("beta", "ema_include_embed"),
}
SECTION_KEYS["train"] = tuple(k for k in TrainConfig.field_names()
                              if not any(k in v for v in SECTION_KEYS.values()))
SECTION_ORDER = ("train", "loss", "mask", "ema", "scene")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SynthSceneSpec = field(default_factory=SynthSceneSpec)


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    base = RunConfig() if base is None else base
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    train_kw, scene_kw = asdict(base.train), asdict(base.scene)
    for section in cp.sections():
        if section not in SECTION_ORDER:
            raise ConfigError(f"unknown section [{section}]")
        allowed = SynthSceneSpec.field_names() if section == "scene" else SECTION_KEYS[section]
        target = scene_kw if section == "scene" else train_kw
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            target[key] = _convert(key, raw, target[key])
    try:
        return RunConfig(TrainConfig(**train_kw), SynthSceneSpec(**scene_kw))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    train = asdict(cfg.train)
    lines = []
    for section in SECTION_ORDER:
        lines.append(f"[{section}]")
        items = asdict(cfg.scene).items() if section == "scene" else ((k, train[k]) for k in SECTION_KEYS[section])
        lines.extend(f"{k} = {_fmt(v)}" for k, v in items)
        lines.append("")
    return "\n".join(lines)


def override(cfg: RunConfig, **train_overrides) -> RunConfig:
    """Apply non-None command-line overrides to the training section."""
    kw = {k: v for k, v in train_overrides.items() if v is not None}
    try:
        return RunConfig(replace(cfg.train, **kw), cfg.scene)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
