"""Engine configuration: typed sections with JSON file loading.

Config files are nested JSON objects keyed by section, e.g.

    {"features": {"window_seconds": 300}, "likelihood": {"threshold": 0.9602}}

Unknown keys are rejected so typos fail loudly at startup.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class IngestConfig:
    max_body_bytes: int = 1_048_576
    auth_token: str | None = None
    # {"mode": "allow"|"deny", "rules": [{"field":..., "op":..., "value":...}]}
    filters: dict[str, Any] = field(
        default_factory=lambda: {"mode": "deny", "rules": []}
    )


@dataclass
class FeaturesConfig:
    window_seconds: int = 300
    skip_after_empty_windows: int = 4

    @property
    def window_ms(self) -> int:
        return self.window_seconds * 1000


@dataclass
class ModelConfig:
    lookback: int = 12
    hidden: int = 64
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 32
    seed: int = 7
    grad_clip: float = 1.0
    online_learning_rate: float | None = None  # defaults to learning_rate


@dataclass
class LikelihoodConfig:
    window_w: int = 8000
    short_window: int = 10
    threshold: float = 0.9602


@dataclass
class TickConfig:
    interval_seconds: int = 300


@dataclass
class RetrainConfig:
    interval_hours: float = 6.0
    training_horizon_windows: int = 9000
    # Windows required before the initial batch training is attempted.
    min_initial_windows: int = 9000
    snapshot_training_frame: bool = True


@dataclass
class RetentionConfig:
    hours: int = 48

    @property
    def ms(self) -> int:
        return self.hours * 3_600_000


@dataclass
class AlertingConfig:
    webhook_url: str | None = None  # falls back to ALERT_WEBHOOK_URL env var
    delivery_attempts: int = 3
    delivery_backoff_seconds: float = 1.0

    def resolved_webhook_url(self) -> str | None:
        return self.webhook_url or os.environ.get("ALERT_WEBHOOK_URL") or None


@dataclass
class StorageConfig:
    root: str = "./opswatch-data"


@dataclass
class EngineConfig:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    tick: TickConfig = field(default_factory=TickConfig)
    retrain: RetrainConfig = field(default_factory=RetrainConfig)
    retention: RetentionConfig = field(default_factory=RetentionConfig)
    alerting: AlertingConfig = field(default_factory=AlertingConfig)
    storage: StorageConfig = field(default_factory=StorageConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EngineConfig":
        cfg = cls()
        for section, values in data.items():
            if not hasattr(cfg, section):
                raise ConfigError(f"unknown config section: {section!r}")
            target = getattr(cfg, section)
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be an object")
            known = {f.name for f in dataclasses.fields(target)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown config key: {section}.{key}")
                setattr(target, key, value)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class ConfigError(ValueError):
    pass
