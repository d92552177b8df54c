"""Typed INI configuration for the command-line pipeline.

Files hold ``[section]`` headers, ``key = value`` lines and ``#`` comments.
Every key has a fixed type; unknown sections or keys, duplicates and values
that do not parse are rejected. ``gamma`` is accepted in ``[noise]`` as the
reciprocal of ``lambda`` and stored as ``lambda``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value)


_TRAIN = {"arch": str, "epochs": int, "lr": float, "batch_size": int, "optimizer": str, "shift": int, "seed": int, "checkpoint": str}

SCHEMA = {
    "run": {"seed": int, "out": str},
    "data": {
        "dataset": str,
        "images": str,
        "labels": str,
        "test_images": str,
        "test_labels": str,
        "task": str,
        "n_train": int,
        "n_test": int,
        "noise_level": float,
        "contrast": float,
        "bias": float,
        "test_bias": float,
        "seed": int,
    },
    "classifier": dict(_TRAIN),
    "substitute": dict(_TRAIN),
    "adversary": {**_TRAIN, "mode": str},
    "noise": {
        "lambda": float,
        "gamma": float,
        "cap": float,
        "epochs": int,
        "lr": float,
        "batch_size": int,
        "mc_samples": int,
        "seed": int,
        "checkpoint": str,
    },
    "suppression": {
        "threshold": float,
        "ratio": float,
        "scheme": str,
        "epochs": int,
        "lr": float,
        "batch_size": int,
        "seed": int,
        "plan": str,
    },
    "evaluate": {"reps": int, "mi_samples": int, "k": int, "lambda_grid": _floats, "disjoint": _bool, "seed": int},
    "sift": {"input": str, "output": str, "seed": int},
    "mi": {"input": str, "k": int, "seed": int},
    "bound": {"input": str, "sigma": float, "ridge": float},
    "meta": {"subcommand": str, "version": str},
}


@dataclass
class Config:
    sections: dict = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"missing required key [{section}] {key}")
        return value

    def seed_for(self, section: str) -> int:
        """The section's own seed, else ``[run] seed``, else 0."""
        return int(self.get(section, "seed", self.get("run", "seed", 0)))

    def set(self, section: str, key: str, value) -> None:
        _check_key(section, key)
        self.sections.setdefault(section, {})[key] = value
        _normalize(self)

    def to_text(self) -> str:
        lines = []
        for section in sorted(self.sections):
            lines.append(f"[{section}]")
            for key in sorted(self.sections[section]):
                lines.append(f"{key} = {_fmt(self.sections[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def copy(self) -> "Config":
        return Config({s: dict(v) for s, v in self.sections.items()})


def _check_key(section: str, key: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")


def _convert(section: str, key: str, raw: str):
    _check_key(section, key)
    kind = SCHEMA[section][key]
    try:
        value = kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"[{section}] {key}: value must be finite")
    return value


def _normalize(cfg: Config) -> None:
    noise = cfg.sections.get("noise", {})
    if "gamma" in noise:
        if "lambda" in noise:
            raise ConfigError("give either lambda or gamma in [noise], not both")
        gamma = noise.pop("gamma")
        if not gamma > 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        noise["lambda"] = 1.0 / gamma


def parse_text(text: str) -> Config:
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",), default_section="\0"
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    cfg = Config()
    for section in parser.sections():
        cfg.sections[section] = {key: _convert(section, key, raw) for key, raw in parser.items(section)}
    _normalize(cfg)
    return cfg


def parse_config(path=None, overrides=None) -> Config:
    """Read ``path`` (if given) and apply ``overrides``: ``{(section, key): raw string}``."""
    cfg = parse_text(Path(path).read_text()) if path is not None else Config()
    overrides = dict(overrides or {})
    if ("noise", "lambda") in overrides and ("noise", "gamma") in overrides:
        raise ConfigError("give either lambda or gamma, not both")
    for (section, key), raw in overrides.items():
        if section == "noise" and key in ("lambda", "gamma"):
            # a flag replaces the file's choice between lambda and gamma
            cfg.sections.get("noise", {}).pop("lambda", None)
            cfg.sections.get("noise", {}).pop("gamma", None)
        cfg.sections.setdefault(section, {})[key] = _convert(section, key, str(raw))
    _normalize(cfg)
    return cfg


def flag_name(section: str, key: str) -> str:
    return f"--{section}-{key}".replace("_", "-")
