"""Run configuration: an INI file with typed, range-checked keys.

Every key has a default, so an empty file (or no file) is a valid config.
Errors name the offending section, key and line.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)
        self.line = line


def _float_list(text: str) -> list[float]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    return [float(t) for t in items]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# Schema entries are (parser, default, check); a check returns an error message or None.
def _positive(v):
    return None if v > 0 else "must be positive"


def _in_open_unit(vs):
    bad = [v for v in vs if not 0.0 < v < 1.0]
    return f"values {bad} outside (0, 1)" if bad else None


def _all_positive(vs):
    bad = [v for v in vs if v <= 0]
    return f"values {bad} must be positive" if bad else None


def _at_least(n):
    return lambda v: None if v >= n else f"must be at least {n}"


def _one_of(*opts):
    return lambda v: None if v in opts else f"must be one of {list(opts)}"


SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "schema_version": (int, SCHEMA_VERSION, _one_of(SCHEMA_VERSION)),
        "tau_list": (_float_list, [0.6], _in_open_unit),
        "epsilon_list": (_float_list, [0.1], _all_positive),
        "output": (str, "results", None),
        "cache": (_bool, True, None),
    },
    "geometry": {
        "ode_tolerance": (float, 1e-12, _positive),
    },
    "hill": {
        "n_max": (int, 8, _at_least(2)),
        "parabolic_tol": (float, 1e-6, _positive),
    },
    "jacobi": {
        "points_per_period": (int, 64, _at_least(32)),
        "n_theta": (int, 16, _at_least(4)),
        "n_periods": (int, 3, _at_least(2)),
    },
    "profile": {
        "half_length": (float, 20.0, _positive),
        "step": (float, 0.01, _positive),
        "tolerance": (float, 1e-10, _positive),
    },
    "solver": {
        "cells_per_eps": (float, 6.0, _at_least(6.0)),
        "order": (int, 4, _one_of(2, 4)),
        "margin": (float, 1.0, _positive),
        "newton_tol": (float, 1e-9, _positive),
        "max_iter": (int, 25, _at_least(1)),
    },
    "bloch": {
        "enabled": (_bool, True, None),
        "m_max": (int, 4, _at_least(1)),
        "zeta_points": (int, 8, _at_least(2)),
        "zeta_min": (float, 0.2, _positive),
        "k": (int, 4, _at_least(1)),
        "eig_tol": (float, 1e-8, _positive),
        "tol_zero_factor": (float, 20.0, _positive),
        "refine_factor": (float, 1.5, lambda v: None if v == 0 or v > 1 else "must be 0 or > 1"),
        "coercivity": (_bool, True, None),
    },
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def tau_list(self) -> list[float]:
        return self.sections["run"]["tau_list"]

    @property
    def epsilon_list(self) -> list[float]:
        return self.sections["run"]["epsilon_list"]

    def digest(self, *names: str) -> str:
        """Content hash of the named sections (all sections if none given)."""
        names = names or tuple(sorted(self.sections))
        blob = json.dumps({n: self.sections[n] for n in names}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def as_dict(self) -> dict:
        return json.loads(json.dumps(self.sections, sort_keys=True))


def defaults() -> RunConfig:
    return RunConfig({s: {k: copy.deepcopy(spec[1]) for k, spec in keys.items()}
                      for s, keys in SCHEMA.items()})


def _line_of(lines: list[str], section: str, key: str | None) -> int | None:
    current = None
    for no, raw in enumerate(lines, start=1):
        text = raw.strip()
        m = re.match(r"\[([^\]]+)\]", text)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            k = re.split(r"[=:]", text, maxsplit=1)[0].strip().lower()
            if k == key:
                return no
    return None


def parse(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate INI text against the schema."""
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from exc
    cfg = defaults().sections
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; valid sections: {sorted(SCHEMA)}",
                              _line_of(lines, section, None), source)
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key '{key}' in [{section}]; valid keys: {sorted(SCHEMA[section])}",
                    _line_of(lines, section, key), source)
            conv, _, check = SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})",
                                  _line_of(lines, section, key), source) from exc
            msg = check(value) if check else None
            if msg:
                raise ConfigError(f"[{section}] {key} = {raw}: {msg}",
                                  _line_of(lines, section, key), source)
            cfg[section][key] = value
    return RunConfig(cfg, source)


def load(path) -> RunConfig:
    path = Path(path)
    return parse(path.read_text(), str(path))


def dump(config: RunConfig) -> str:
    """INI text that parses back to ``config``."""
    out = []
    for section, keys in config.sections.items():
        out.append(f"[{section}]")
        for key, value in keys.items():
            if isinstance(value, list):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)
