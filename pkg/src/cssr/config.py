"""Line-oriented ``key = value`` configuration files.

Bare keys set :class:`~cssr.trainer.TrainConfig` fields; ``degradation.<field>``
keys set :class:`~cssr.degradation.DegradationParams` fields.  ``#`` starts a
comment.  Unknown keys, repeated keys and unparsable values are errors.
Tuples are written comma-separated (``gen_channels = 64,128,256``).
"""

from __future__ import annotations

import dataclasses
import os
import typing
from pathlib import Path

from .degradation import DegradationParams
from .errors import ConfigurationError, ImageIOError
from .trainer import TrainConfig

DEGRADATION_PREFIX = "degradation."
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    try:
        if hint is bool:
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if origin is tuple:
            args = typing.get_args(hint)
            item = args[0]
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(args) != 2 or args[1] is not Ellipsis:
                if len(parts) != len(args):
                    raise ValueError(f"expected {len(args)} values")
            return tuple(item(p) for p in parts)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} ({exc})") from None
    raise ConfigurationError(f"{key}: unsupported field type {hint}")


def parse_config(text: str, source: str = "<config>") -> tuple[TrainConfig, DegradationParams]:
    train_hints = typing.get_type_hints(TrainConfig)
    deg_hints = typing.get_type_hints(DegradationParams)
    train_kw: dict[str, object] = {}
    deg_kw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        if key.startswith(DEGRADATION_PREFIX):
            name, hints, target = key[len(DEGRADATION_PREFIX):], deg_hints, deg_kw
        else:
            name, hints, target = key, train_hints, train_kw
        if name not in hints:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if name in target:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        target[name] = _parse_value(raw, hints[name], f"{source}:{lineno}: {key}")
    return TrainConfig(**train_kw), DegradationParams(**deg_kw)


def load_config(path: str | os.PathLike) -> tuple[TrainConfig, DegradationParams]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def format_config(cfg: TrainConfig, deg: DegradationParams | None = None) -> str:
    """Render a config that :func:`parse_config` reads back to equal objects."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    if deg is not None:
        lines += [f"{DEGRADATION_PREFIX}{f.name} = {_format_value(getattr(deg, f.name))}"
                  for f in dataclasses.fields(deg)]
    return "\n".join(lines) + "\n"
