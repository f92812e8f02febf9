"""YAML run configuration -> PipelineConfig.

Top-level keys mirror PipelineConfig fields; `channel` and `training` are
nested mappings, as is `training.gen_weights`. Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from dataclasses import fields

import yaml

from .channel import ChannelConfig
from .errors import ConfigError
from .generator import GenLossWeights
from .pipeline import PipelineConfig
from .training import TrainingConfig

_TUPLE_FIELDS = {"scene_seeds", "scene_profiles", "gen_scene_seeds", "snr_range"}


def _build(cls, data: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "channel" and isinstance(value, dict):
            value = _build(ChannelConfig, value, f"{path}.channel")
        elif key == "training" and isinstance(value, dict):
            value = _build(TrainingConfig, value, f"{path}.training")
        elif key == "gen_weights" and isinstance(value, dict):
            value = _build(GenLossWeights, value, f"{path}.gen_weights")
        elif key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return _build(PipelineConfig, data, "config")
