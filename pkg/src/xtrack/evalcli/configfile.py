"""Plain-text ``key = value`` configuration files.

One key per line, ``#`` starts a comment, blank lines are ignored. Keys are
the field names of :class:`ModelConfig` and :class:`TrainConfig` (``seed``
is shared), the scenario extraction keys in :data:`DATA_KEYS`, and the
track-format keys ``format.column.<contract column>``, ``format.frame_rate``
and ``format.length_scale``.
"""
from __future__ import annotations

import dataclasses
import typing

from ..model import ModelConfig, TrainConfig
from ..scenario import FormatConfig
from ..scenario.tracks import CONTRACT_COLUMNS

DATA_KEYS = {
    "dt": float,  # scenario sample period, s
    "stride": float,  # extraction window stride, s
    "train_fraction": float,
    "val_fraction": float,
    "test_fraction": float,
    "recording": str,
    "balance": bool,
}


class ConfigFileError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def parse_config(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigFileError("empty key", lineno)
        if key in values:
            raise ConfigFileError(f"duplicate key {key!r}", lineno)
        if key not in known_keys() and not key.startswith("format.column."):
            raise ConfigFileError(f"unknown key {key!r}", lineno)
        values[key] = value
    return values


def read_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def known_keys() -> set:
    keys = set(_field_types(ModelConfig)) | set(_field_types(TrainConfig)) | set(DATA_KEYS)
    keys |= {"format.frame_rate", "format.length_scale"} | {f"format.column.{c}" for c in CONTRACT_COLUMNS}
    return keys


def _coerce(key, value, typ):
    if isinstance(value, str):
        text = value.strip()
    else:
        return value
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() in ("", "none"):
            return None
        typ = next(a for a in args if a is not type(None))
    try:
        if typ is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is tuple:
            return tuple(float(v) for v in text.replace(",", " ").split()) if text else ()
        return text
    except ValueError as exc:
        raise ConfigFileError(f"bad value {value!r} for {key}") from exc


def build_model_config(values: dict) -> ModelConfig:
    types = _field_types(ModelConfig)
    return ModelConfig(**{k: _coerce(k, v, types[k]) for k, v in values.items() if k in types})


def build_train_config(values: dict) -> TrainConfig:
    types = _field_types(TrainConfig)
    return TrainConfig(**{k: _coerce(k, v, types[k]) for k, v in values.items() if k in types})


def build_format_config(values: dict, base: FormatConfig | None = None) -> FormatConfig:
    fmt = dataclasses.replace(base, columns=dict(base.columns)) if base is not None else FormatConfig()
    mapping = {k: v for k, v in values.items() if k.startswith("format.")}
    override = FormatConfig.from_mapping(mapping)
    for k in mapping:
        if k.startswith("format.column."):
            col = k[len("format.column."):]
            fmt.columns[col] = override.columns[col]
        elif k == "format.frame_rate":
            fmt.frame_rate = override.frame_rate
        elif k == "format.length_scale":
            fmt.length_scale = override.length_scale
    return fmt


def data_options(values: dict) -> dict:
    return {k: _coerce(k, values[k], DATA_KEYS[k]) for k in DATA_KEYS if k in values}


def dump_config(model: ModelConfig | None = None, train: TrainConfig | None = None) -> str:
    """Render configs back to the file format (round-trips through parse/build).

    Shared keys (``seed``) are written once, from the first config given.
    """
    lines = []
    seen = set()
    for cfg in (model, train):
        if cfg is None:
            continue
        lines.append(f"# {type(cfg).__name__}")
        for f in dataclasses.fields(cfg):
            if f.name in seen:
                continue
            seen.add(f.name)
            v = getattr(cfg, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
