"""Flat TOML configuration files and ``key=value`` overrides for RegistrationConfig."""

import dataclasses
import sys

from .errors import StructuralError
from .optimizer import RegistrationConfig
from .raptor import RaptorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# accepted aliases for the longer names used in prose
ALIASES = {
    "momentum_coefficient": "momentum",
    "convergence_tolerance": "tolerance",
}

RAPTOR_KEYS = tuple(f.name for f in dataclasses.fields(RaptorConfig))
TOP_KEYS = tuple(f.name for f in dataclasses.fields(RegistrationConfig) if f.name != "raptor")


def valid_keys():
    return sorted(TOP_KEYS + RAPTOR_KEYS + tuple(f"raptor.{k}" for k in RAPTOR_KEYS) + tuple(ALIASES))


def _flatten(table, prefix=""):
    flat = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def parse_value(text):
    """TOML scalar or array; bare words fall back to strings (``metric=ssd``)."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text.strip()


def parse_override(item):
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise StructuralError(f"override {item!r} is not of the form key=value")
    return key.strip(), parse_value(value)


def build_config(settings, base=None):
    """Apply a flat mapping of settings on top of ``base`` (default: all defaults)."""
    base = base or RegistrationConfig()
    top, raptor = {}, {}
    for key, value in settings.items():
        key = ALIASES.get(key, key)
        if isinstance(value, list):
            value = tuple(value)
        bare = key[len("raptor."):] if key.startswith("raptor.") else key
        if bare in RAPTOR_KEYS and (key.startswith("raptor.") or key not in TOP_KEYS):
            raptor[bare] = value
        elif key in TOP_KEYS:
            top[key] = value
        else:
            raise StructuralError(f"unknown configuration key {key!r}; valid keys: {', '.join(valid_keys())}")
    try:
        if raptor:
            top["raptor"] = dataclasses.replace(base.raptor, **raptor)
        return dataclasses.replace(base, **top)
    except TypeError as exc:
        raise StructuralError(f"invalid configuration value: {exc}") from exc


def load_config(path=None, overrides=(), base=None):
    """Read an optional TOML file then apply ``key=value`` overrides (which win)."""
    settings = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                settings.update(_flatten(tomllib.load(fh)))
            except tomllib.TOMLDecodeError as exc:
                raise StructuralError(f"{path}: {exc}") from exc
    for item in overrides:
        key, value = parse_override(item)
        settings[key] = value
    return build_config(settings, base)


def config_as_dict(cfg):
    """JSON-friendly echo of a configuration."""
    out = dataclasses.asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


__all__ = ["build_config", "config_as_dict", "load_config", "parse_override", "parse_value", "valid_keys"]
