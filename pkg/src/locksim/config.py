"""Reading and writing run configurations.

Configs are INI files. Section names only group keys for readability; every
key is a :class:`~locksim.server.RunConfig` field name, so the format is
effectively flat. Bundled configs can be referred to by name.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import fields
from importlib import resources
from pathlib import Path

from .server import RunConfig

SECTIONS = {
    "sampling": ("n_clients", "m", "k", "clip", "probability_mode", "v0", "estimator_mode"),
    "optimisation": ("eta_b", "T", "K_max", "K_min", "local_epochs"),
    "privacy": ("sigma_s", "sigma_0", "nonprivate", "delta", "amplification"),
    "problem": ("kind", "beta", "dim", "samples_min", "samples_max", "heterogeneity",
                "identical_clients", "signal", "label_noise", "problem_seed", "data_source",
                "idx_images", "idx_labels", "idx_max_samples"),
    "run": ("seed",),
}

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


class ConfigError(ValueError):
    pass


def bundled_configs() -> list[str]:
    root = resources.files("locksim") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config_path(name_or_path) -> Path:
    """A filesystem path if it exists, else a bundled config of that name."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if p.suffix == "" and str(name_or_path) in bundled_configs():
        return Path(str(resources.files("locksim") / "configs" / f"{name_or_path}.ini"))
    raise FileNotFoundError(f"config file not found: {name_or_path}")


def _coerce(key: str, raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean for {key}, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.IGNORECASE)
    for no, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            return no
    return None


def parse_config(text: str, source: str = "<config>", overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep K_max etc. case-sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None and getattr(exc, "errors", None):
            lineno = exc.errors[0][0]
        where = f"{source}:{lineno}" if lineno else source
        raise ConfigError(f"{where}: {exc.message.splitlines()[0]}") from None

    types = {f.name: f.type for f in fields(RunConfig)}
    types = {k: {"int": int, "float": float, "bool": bool, "str": str}[v] for k, v in types.items()}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"{source}:{_line_of(text, key)}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, raw, types[key])
            except ValueError as exc:
                raise ConfigError(f"{source}:{_line_of(text, key)}: bad value for {key}: {exc}") from None
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise ConfigError(f"override {item!r}: expected key=value with a known key")
        try:
            values[key] = _coerce(key, raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from None


def load_config(name_or_path, overrides=()) -> RunConfig:
    path = resolve_config_path(name_or_path)
    return parse_config(path.read_text(), str(path), overrides)


def dump_config(config: RunConfig) -> str:
    """INI text that :func:`parse_config` reads back to an equal config."""
    d = config.to_dict()
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for key in keys:
            v = d[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)
