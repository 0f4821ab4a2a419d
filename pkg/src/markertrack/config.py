"""One validated, immutable configuration for the whole engine.

Config files are YAML mappings whose keys mirror :class:`EngineConfig`.
Absent keys take their defaults, unknown keys are errors, and an empty
file is the default configuration.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, TypeVar

import yaml
from pydantic import BaseModel, NonNegativeInt, PositiveInt, ValidationError, field_validator

from ._schema import STRICT
from .association import AssociationConfig
from .calibration import DuckParams
from .frames import RoomBounds
from .kalman import KalmanConfig
from .stream import StreamConfig
from .tracker import TrackerParams

CONFIG_ENV = "MARKERTRACK_CONFIG"

M = TypeVar("M", bound=BaseModel)


class ConfigError(ValueError):
    """A config file could not be read or failed validation."""


class EngineConfig(BaseModel):
    model_config = STRICT

    room: RoomBounds = RoomBounds()
    kalman: KalmanConfig = KalmanConfig()
    association: AssociationConfig = AssociationConfig()
    calibration: DuckParams = DuckParams()
    tracker: TrackerParams = TrackerParams()
    stream: StreamConfig = StreamConfig()
    frame_interval_ms: PositiveInt = 10
    # users queued for calibration when a tracker starts
    users: tuple[NonNegativeInt, ...] = ()

    @field_validator("users")
    @classmethod
    def _unique_users(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("duplicate user id")
        return v

    def replay_rate_hz(self) -> float:
        """``stream.rate_hz`` if set, else one frame per frame interval."""
        if self.stream.rate_hz is not None:
            return self.stream.rate_hz
        return 1000.0 / self.frame_interval_ms


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_model(text: str, model: type[M], source: str = "<string>") -> M:
    """Validate YAML ``text`` against ``model``."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{source}: not valid YAML: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping, got {type(data).__name__}")
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_format(e)}") from None


def load_model(path, model: type[M]) -> M:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    return parse_model(text, model, str(path))


def load_config(path) -> EngineConfig:
    return load_model(path, EngineConfig)


def parse_config(text: str) -> EngineConfig:
    return parse_model(text, EngineConfig)


def serialize(cfg: BaseModel) -> str:
    """YAML text that :func:`parse_model` turns back into an equal model."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def resolve_config_path(cli_path: Optional[str] = None) -> Optional[str]:
    """An explicit path wins; otherwise the environment variable, if set."""
    if cli_path:
        return cli_path
    return os.environ.get(CONFIG_ENV) or None


def resolve_config(cli_path: Optional[str] = None) -> EngineConfig:
    path = resolve_config_path(cli_path)
    return load_config(path) if path else EngineConfig()
