"""Config file loading: flat `section.key = value` lines over the defaults."""

import dataclasses
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import dotenv_values

from config.settings import SECTIONS
from engine.errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _section_class(name: str, defaults: Dict[str, Any]):
    fields = [
        (key, type(value), dataclasses.field(default=value))
        for key, value in defaults.items()
    ]
    return dataclasses.make_dataclass(f"{name.title()}Config", fields, frozen=True)


SECTION_CLASSES = {name: _section_class(name, defaults) for name, defaults in SECTIONS.items()}


def coerce(key: str, raw: Any, default: Any) -> Any:
    """Convert raw to the type of default, naming key on failure."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p for p in text.replace(",", " ").split() if p]
            values = tuple(type(d)(p) for d, p in zip(default, parts))
            if len(values) != len(default) or len(parts) != len(default):
                raise ValueError(text)
            return values
    except ValueError as exc:
        raise ConfigError(f"invalid value for '{key}': {raw!r}") from exc
    return text


@dataclasses.dataclass(frozen=True)
class Config:
    """Effective configuration, one frozen section per pipeline concern."""
    face: Any = dataclasses.field(default_factory=SECTION_CLASSES["face"])
    render: Any = dataclasses.field(default_factory=SECTION_CLASSES["render"])
    network: Any = dataclasses.field(default_factory=SECTION_CLASSES["network"])
    loss: Any = dataclasses.field(default_factory=SECTION_CLASSES["loss"])
    trainer: Any = dataclasses.field(default_factory=SECTION_CLASSES["trainer"])
    synth: Any = dataclasses.field(default_factory=SECTION_CLASSES["synth"])
    eval: Any = dataclasses.field(default_factory=SECTION_CLASSES["eval"])

    def override(self, values: Optional[Dict[str, Any]] = None, **flat: Any) -> "Config":
        """Return a copy with `section.key` (or `section__key`) entries replaced."""
        merged = dict(values or {})
        merged.update({k.replace("__", "."): v for k, v in flat.items()})
        grouped: Dict[str, Dict[str, Any]] = {}
        for dotted, raw in merged.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key '{dotted}'")
            grouped.setdefault(section, {})[key] = coerce(dotted, raw, SECTIONS[section][key])
        updates = {
            section: dataclasses.replace(getattr(self, section), **changes)
            for section, changes in grouped.items()
        }
        return dataclasses.replace(self, **updates)

    def to_lines(self) -> List[str]:
        """Render the configuration in the file format it is loaded from."""
        lines = []
        for section in SECTIONS:
            for key, value in dataclasses.asdict(getattr(self, section)).items():
                if isinstance(value, tuple):
                    value = ", ".join(repr(v) for v in value)
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{section}.{key} = {value}")
        return lines


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> Config:
    """Load a config file over the defaults; unknown keys raise ConfigError."""
    config = Config()
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    return config.override(values, **overrides)
