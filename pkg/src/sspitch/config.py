"""Run configuration: INI-style file plus command-line overrides.

Grammar: ``[section]`` headers, ``key = value`` lines, ``#`` or ``;``
comments. Every key must be declared in :data:`SCHEMA`; values are parsed to
the declared type and range-checked. Overrides beat file values.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Names the offending ``section.key`` (or path)."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit_open(v):
    return 0 < v < 1


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# section -> key -> (type, default, check, description of the valid range)
SCHEMA = {
    "corpus": {
        "preset": (str, "demo", lambda v: v == "demo", "'demo'"),
        "seed": (int, 7, _nonneg, ">= 0"),
    },
    "train": {
        "seed": (int, 0, _nonneg, ">= 0"),
        "k_epochs": (int, 5, _positive, ">= 1"),
        "epochs": (int, 60, _nonneg, ">= 0"),
        "batch_size": (int, 64, _positive, ">= 1"),
        "lr": (float, 1e-3, _positive, "> 0"),
        "delta_max": (int, 15, lambda v: 1 <= v < 269, "in [1, 268]"),
        "checkpoint_every": (int, 5, _positive, ">= 1"),
    },
    "voicing": {
        "theta": (float, 0.5, _unit_open, "in (0, 1)"),
        "epochs": (int, 200, _positive, ">= 1"),
        "lr": (float, 1e-2, _positive, "> 0"),
    },
    "synth": {
        "n_harmonics": (int, 24, _positive, ">= 1"),
        "lambda_smooth": (float, 0.1, _nonneg, ">= 0"),
        "epochs": (int, 500, _nonneg, ">= 0"),
        "lr": (float, 1e-2, _positive, "> 0"),
    },
    "run": {
        "deterministic": (bool, True, lambda v: True, "a boolean"),
    },
}

_TYPE_NAMES = {int: "integer", float: "float", str: "string", bool: "boolean"}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def describe(self) -> str:
        return " ".join(f"{s}.{k}={v}" for s, kv in self.values.items() for k, v in kv.items())


def defaults() -> dict:
    return {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}


def _parse(section: str, key: str, raw) -> object:
    if section not in SCHEMA:
        raise ConfigError(section, f"unknown section (known: {', '.join(SCHEMA)})")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{section}.{key}", "unknown key")
    typ, _, check, desc = SCHEMA[section][key]
    name = f"{section}.{key}"
    if isinstance(raw, str):
        try:
            value = _bool(raw) if typ is bool else typ(raw.strip())
        except ValueError:
            raise ConfigError(name, f"expected {_TYPE_NAMES[typ]}, got {raw!r}") from None
    else:
        if typ is float and isinstance(raw, int) and not isinstance(raw, bool):
            raw = float(raw)
        if not isinstance(raw, typ) or (typ is int and isinstance(raw, bool)):
            raise ConfigError(name, f"expected {_TYPE_NAMES[typ]}, got {raw!r}")
        value = raw
    if not check(value):
        raise ConfigError(name, f"value {value!r} out of range (must be {desc})")
    return value


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, the optional file at ``path`` and ``overrides``.

    ``overrides`` maps ``"section.key"`` to a value (string or typed);
    ``None`` values are ignored so unset command-line flags fall through.
    """
    values = defaults()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(str(path), "config file not found")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                           interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(p.read_text(), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(str(path), f"malformed config: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                values.setdefault(section, {})
                values[section][key] = _parse(section, key, raw)
    for dotted, raw in (overrides or {}).items():
        if raw is None:
            continue
        if "." not in dotted:
            raise ConfigError(dotted, "override keys must look like section.key")
        section, key = dotted.split(".", 1)
        values[section][key] = _parse(section, key, raw)
    epochs, k = values["train"]["epochs"], values["train"]["k_epochs"]
    if epochs % k:
        raise ConfigError("train.epochs", f"{epochs} is not a multiple of train.k_epochs={k}")
    cfg = RunConfig(values, None if path is None else str(path))
    log.info("effective config: %s", cfg.describe())
    return cfg
