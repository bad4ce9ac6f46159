"""``key = value`` text codec for flat dataclasses.

Field types are inferred from each field's default value, so every
serializable dataclass here must give all its fields defaults.
"""

from __future__ import annotations

import dataclasses

from .errors import ConfigurationError


def encode_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def decode_value(text: str, like, key: str = "?"):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(x.strip() for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigurationError(
            f"{key}: cannot parse {text!r} as {type(like).__name__}"
        ) from None


def field_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def to_items(obj, prefix: str) -> dict:
    return {f"{prefix}.{k}": encode_value(v) for k, v in dataclasses.asdict(obj).items()}


def from_items(cls, items: dict, prefix: str, base=None):
    """Build ``cls`` from ``prefix.field`` string items on top of ``base``
    (or the class defaults). Unknown ``prefix.*`` keys are rejected."""
    defaults = field_defaults(cls)
    values = dataclasses.asdict(base) if base is not None else dict(defaults)
    for key, text in items.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in defaults:
            raise ConfigurationError(f"unknown key {key!r}")
        values[name] = decode_value(text, defaults[name], key)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def dumps(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def loads(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Order is kept."""
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in items:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items
