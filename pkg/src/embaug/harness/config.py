"""Sectioned ``key = value`` run configuration.

Sections map onto the library's dataclasses::

    [data]        DatasetConfig   (plus ``seed``)
    [gan]         GanConfig
    [mil]         MilConfig
    [experiment]  ExperimentConfig scalars (modes and mil_seeds are comma lists)
    [bench]       d, batch, repeats, input_size, variants

Unknown sections or keys and values that do not parse as the field's type
raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..dagan import GanConfig
from ..mil import MilConfig
from ..numerics import ContractError
from ..synthdata import DatasetConfig
from .experiment import ExperimentConfig


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    d: int = 1024
    batch: int = 256
    repeats: int = 3
    input_size: int = 256
    variants: tuple[str, ...] = ("ind", "exp")


@dataclass
class RunConfig:
    data_seed: int = 0
    data: DatasetConfig = field(default_factory=DatasetConfig)
    gan: GanConfig = field(default_factory=lambda: ExperimentConfig().gan)
    mil: MilConfig = field(default_factory=lambda: ExperimentConfig().mil)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def experiment_config(self) -> ExperimentConfig:
        return replace(self.experiment, gan=self.gan, mil=self.mil)

    def to_dict(self) -> dict:
        exp = dataclasses.asdict(self.experiment)
        exp.pop("gan")
        exp.pop("mil")
        return {
            "data": {"seed": self.data_seed, **dataclasses.asdict(self.data)},
            "gan": dataclasses.asdict(self.gan),
            "mil": dataclasses.asdict(self.mil),
            "experiment": {k: list(v) if isinstance(v, tuple) else v for k, v in exp.items()},
            "bench": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.bench).items()},
        }


_NESTED = {"gan", "mil"}


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if default is None:
            return None if raw.lower() in ("", "none") else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _apply(obj, values: dict[str, str], section: str, extra: dict | None = None):
    known = {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in _NESTED}
    updates = {}
    for key, raw in values.items():
        if key in (extra or {}):
            continue
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}; expected one of {sorted(known)}")
        updates[key] = _coerce(raw, known[key], f"[{section}] {key}")
    try:
        return replace(obj, **updates)
    except ContractError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    cfg = RunConfig()
    allowed = {"data", "gan", "mil", "experiment", "bench"}
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}]; expected {sorted(allowed)}")
        values = dict(cp[section])
        if section == "data":
            if "seed" in values:
                cfg.data_seed = _coerce(values["seed"], 0, "[data] seed")
            cfg.data = _apply(cfg.data, values, section, extra={"seed": None})
        elif section == "gan":
            cfg.gan = _apply(cfg.gan, values, section)
        elif section == "mil":
            cfg.mil = _apply(cfg.mil, values, section)
        elif section == "experiment":
            cfg.experiment = _apply(cfg.experiment, values, section)
        else:
            cfg.bench = _apply(cfg.bench, values, section)
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} not found")
    return parse_config(path.read_text())
