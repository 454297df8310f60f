"""Flat ``key = value`` configuration files.

Both the experiment parameters and the space-time layout are stored in the
same format: one ``key = value`` pair per line, ``#`` or ``;`` comments, no
sections.  Units are SI except where the key name says otherwise
(``*_deg`` for degrees, ``*_ns`` for nanoseconds, ``*_hz`` for rates).
"""

from __future__ import annotations

import configparser
import hashlib
from importlib import resources
from pathlib import Path

_SECTION = "config"


class ConfigError(ValueError):
    """Raised for malformed or incomplete configuration files."""


def parse_config(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";")
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    return dict(parser[_SECTION])


def load_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_hash(path: str | Path | None) -> str | None:
    """SHA-256 of the raw config bytes, recorded in run metadata."""
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bundled_config(name: str) -> Path:
    """Path of a config file shipped with the package (``baseline.cfg``, ``layout.cfg``)."""
    ref = resources.files("chbell") / "data" / name
    with resources.as_file(ref) as path:
        return Path(path)


def get_float(cfg: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected a number, got {cfg[key]!r}") from exc


def get_int(cfg: dict[str, str], key: str, default: int | None = None) -> int:
    value = get_float(cfg, key, None if default is None else float(default))
    if value != int(value):
        raise ConfigError(f"key {key!r}: expected an integer, got {cfg[key]!r}")
    return int(value)


def get_str(cfg: dict[str, str], key: str, default: str | None = None) -> str:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    return cfg[key].strip()
