"""``key = value`` experiment configuration with command-line overrides."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .kinetics import KineticsError, ModelParams, linear_kinetics

__all__ = ["ConfigError", "ExperimentConfig", "KEYS", "MODEL_KEYS", "parse_config", "read_config_file"]


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2."""


def _positive_int(name, text):
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if value < 1:
        raise ConfigError(f"{name}: must be a positive integer, got {value}")
    return value


def _nonneg_int(name, text):
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if value < 0:
        raise ConfigError(f"{name}: must be nonnegative, got {value}")
    return value


def _float(name, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{name}: must be finite, got {text!r}")
    return value


def _positive(name, text):
    value = _float(name, text)
    if not value > 0:
        raise ConfigError(f"{name}: must be positive, got {value}")
    return value


def _nonneg(name, text):
    value = _float(name, text)
    if value < 0:
        raise ConfigError(f"{name}: must be nonnegative, got {value}")
    return value


def _signed(name, text):
    return _float(name, text)


def _float_list(name, text):
    text = str(text).strip()
    if not text:
        return ()
    return tuple(_positive(name, part) for part in text.split(","))


def _scheme(name, text):
    from .timestep import Scheme

    try:
        return Scheme(text).value
    except ValueError:
        raise ConfigError(f"{name}: expected SemiImplicit or FullyImplicit, got {text!r}") from None


def _string(name, text):
    return str(text)


def _kinetics(name, text):
    text = str(text).strip().lower()
    if text == "custom":
        raise ConfigError(f"{name}: custom kinetics need Python callables; use chemotax.custom_kinetics from code")
    if text != "linear":
        raise ConfigError(f"{name}: expected 'linear' or 'custom', got {text!r}")
    return text


# key -> (parser, default used when neither file nor flag sets it)
KEYS = {
    "kinetics": (_kinetics, "linear"),
    "D1": (_positive, 1.0),
    "D2": (_positive, 1.0),
    "chi": (_nonneg, 4.0),
    "ubar": (_positive, 1.0),
    "beta": (_positive, 1.0),
    "L": (_positive, math.pi),
    "N": (_positive_int, 200),
    "k": (_positive_int, 1),
    "kmax": (_positive_int, 10),
    "chi_max": (_positive, 20.0),
    "dt": (_positive, 1e-3),
    "t_final": (_positive, 10.0),
    "eps": (_nonneg, 1e-6),
    "seed": (_nonneg_int, 0),
    "out": (_string, ""),
    "scheme": (_scheme, "SemiImplicit"),
    "s0": (_signed, 0.0),
    "ds_max": (_positive, 1.0),
    "snapshots": (_float_list, ()),
    "sweep_points": (_positive_int, 20),
    "chi_start": (_nonneg, 0.0),
    "chart_points": (_positive_int, 21),
}

# a config file must define the model itself
MODEL_KEYS = ("D1", "D2", "chi", "ubar", "beta", "L", "N")


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(repr=False)
    source: str = "flags"

    def __getitem__(self, key):
        return self.values[key]

    @property
    def params(self) -> ModelParams:
        v = self.values
        try:
            return ModelParams(v["D1"], v["D2"], v["chi"], v["ubar"], v["L"], linear_kinetics(v["beta"]))
        except KineticsError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def grid_n(self) -> int:
        return self.values["N"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def output_dir(self) -> Path:
        out = self.values["out"] or os.environ.get("CHEMOTAX_OUT", "") or "chemotax-output"
        return Path(out)

    def header_lines(self) -> list[str]:
        lines = [f"config source: {self.source}"]
        for key in KEYS:
            value = self.values[key]
            if isinstance(value, float):
                value = format(value, ".17g")
            elif isinstance(value, tuple):
                value = ",".join(format(x, ".17g") for x in value)
            lines.append(f"{key} = {value}")
        lines.append("model: Phi = u, h = beta*u")
        return lines


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{p}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def parse_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge file values, then flag overrides, then defaults; validate everything."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in overrides:
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
    raw: dict = {}
    source = "flags"
    if path is not None:
        raw = read_config_file(path)
        source = str(path)
        missing = [k for k in MODEL_KEYS if k not in raw and k not in overrides]
        if missing:
            raise ConfigError(f"{path}: missing required key(s): {', '.join(missing)}")
    raw.update(overrides)
    values = {}
    for key, (parser, default) in KEYS.items():
        values[key] = parser(key, raw[key]) if key in raw else default
    cfg = ExperimentConfig(values, source)
    cfg.params  # noqa: B018 - validates the model parameters
    return cfg
