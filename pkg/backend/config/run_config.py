# config/run_config.py
# Load the versioned JSON run config and apply command-line overrides (dotted keys).

import json
import logging
from pathlib import Path
from typing import Any, Iterable

from pydantic import ValidationError

from errors import ConfigError
from models.configs import RunConfig

logger = logging.getLogger(__name__)


def parse_override(item: str) -> tuple[str, Any]:
    """'training.steps=2000' -> ("training.steps", 2000). Values are JSON when they parse, else strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def apply_overrides(doc: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Set every dotted key in a copy of `doc`, creating intermediate objects as needed."""
    out = json.loads(json.dumps(doc))
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"cannot set {dotted}: {part} is not an object")
            node = child
        node[parts[-1]] = value
    return out


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, Any] | Iterable[str] | None = None,
) -> RunConfig:
    """
    Read `path` (or start from defaults), apply overrides and validate.
    Any problem is reported as ConfigError.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    if overrides:
        pairs = overrides if isinstance(overrides, dict) else dict(parse_override(o) for o in overrides)
        doc = apply_overrides(doc, pairs)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e
