"""Strict JSON configuration for the command line.

Every section is optional and defaults apply; unknown keys anywhere are rejected.
The API key is never part of the config, only the name of the variable holding it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .backend.http import BackendConfig, RetryPolicy
from .backend.testing import NoiseConfig
from .decomposer import MODES, TilingConfig
from .resampler import ResampleConfig
from .rewards import RewardConfig

GROUNDING_KINDS = ("http", "scripted", "oracle")
SCORER_KINDS = ("http", "intersect_oracle", "constant")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RuntimeConfig:
    grounding: str = "http"
    scorer: str = "http"
    # directory of <request_key>.json replies for the scripted backend
    fixture_dir: str | None = None
    scripted_default: str | None = None
    constant_score: float = 0.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    max_concurrency: int = 4
    mode: str = "decomposed"

    def __post_init__(self):
        if self.grounding not in GROUNDING_KINDS:
            raise ConfigError(f"runtime.grounding must be one of {GROUNDING_KINDS}")
        if self.scorer not in SCORER_KINDS:
            raise ConfigError(f"runtime.scorer must be one of {SCORER_KINDS}")
        if self.mode not in MODES:
            raise ConfigError(f"runtime.mode must be one of {MODES}")
        if self.max_concurrency < 1:
            raise ConfigError("runtime.max_concurrency must be >= 1")


@dataclass(frozen=True)
class GlobalConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_overrides(self, **runtime_overrides) -> "GlobalConfig":
        """Flag overrides for the runtime section; ``None`` values are ignored."""
        changes = {k: v for k, v in runtime_overrides.items() if v is not None}
        if not changes:
            return self
        try:
            return dataclasses.replace(self, runtime=dataclasses.replace(self.runtime, **changes))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# nested dataclass-valued fields, per owning class
_NESTED = {
    GlobalConfig: {
        "reward": RewardConfig,
        "resample": ResampleConfig,
        "tiling": TilingConfig,
        "backend": BackendConfig,
        "runtime": RuntimeConfig,
    },
    BackendConfig: {"retry_policy": RetryPolicy},
    RuntimeConfig: {"noise": NoiseConfig},
}


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        nested = _NESTED.get(cls, {}).get(key)
        path = f"{where}.{key}" if where else key
        kwargs[key] = _build(nested, value, path) if nested else value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> GlobalConfig:
    return _build(GlobalConfig, data, "")


def load_config(path: str | Path | None) -> GlobalConfig:
    if path is None:
        return GlobalConfig()
    try:
        data = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)
