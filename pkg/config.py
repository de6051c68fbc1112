"""Run-config loading and logging setup for the entry points.

Precedence, lowest first: RunConfig defaults, config file (.json or .toml),
ROADSIM_* environment variables, explicit overrides (command-line flags).
"""
from __future__ import annotations

import json
import logging
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from core.errors import ConfigError
from schemas.config import RunConfig

# -------------------------------------------------------------------
# Config
# -------------------------------------------------------------------
load_dotenv()

ENV_PREFIX = "ROADSIM_"
ENV_NESTING = "__"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# service settings that share the prefix but are not run-config fields
SERVICE_KEYS = {"CORS_ORIGINS", "BASE_URL"}


def setup_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv("LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config file {p}: {e}") from e
    try:
        if p.suffix == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        elif p.suffix == ".json":
            data = json.loads(raw)
        else:
            raise ConfigError(f"config file must be .json or .toml, got {p.name}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"invalid config file {p}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a table/object at top level")
    return data


def _decode(value: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _field_path(model: type[BaseModel], parts: list[str]) -> bool:
    """True when parts name a field (possibly nested) of the model."""
    current: Any = model
    for part in parts:
        fields = getattr(current, "model_fields", None)
        if fields is None or part not in fields:
            return False
        current = fields[part].annotation
    return True


def env_overrides(env: Mapping[str, str]) -> Dict[str, Any]:
    """Nested dict from ROADSIM_<FIELD>[__<FIELD>] variables naming known fields."""
    out: Dict[str, Any] = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):]
        if name in SERVICE_KEYS:
            continue
        parts = [p.lower() for p in name.split(ENV_NESTING)]
        if not _field_path(RunConfig, parts):
            raise ConfigError(f"{key} does not name a run-config field")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _decode(env[key])
    return out


def merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(
    path: Optional[Union[str, Path]] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    data: Dict[str, Any] = read_config_file(path) if path else {}
    data = merge(data, env_overrides(os.environ if env is None else env))
    data = merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']} ({e.error_count()} error(s))") from e
