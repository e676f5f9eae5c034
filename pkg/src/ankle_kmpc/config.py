"""TOML config loading and the packaged defaults."""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, IOFailure


def load_toml(path):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise IOFailure(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        # the decoder message already carries "(at line N, column M)"
        raise ConfigError(f"{path}: {exc}") from None


def load_packaged(name):
    with resources.files("ankle_kmpc.data").joinpath(name).open("rb") as fh:
        return tomllib.load(fh)


def packaged_path(name):
    return Path(str(resources.files("ankle_kmpc.data").joinpath(name)))


def config_hash(obj):
    """Stable SHA-256 of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()
