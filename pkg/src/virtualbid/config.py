"""Run configuration: a TOML file with sections, overridden by command-line flags.

Precedence is flag > config file > built-in default. Relative paths in the
file are resolved against the file's directory.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .simulate import DEFAULT_VARIABLES


@dataclass(frozen=True)
class DataBlock:
    da_lmp: Path
    rt_lmp: Path
    weather: Path
    intervals_expected: int = 12
    price_floor: float = 0.01


@dataclass(frozen=True)
class SimulationBlock:
    history_days: int = 250  # fitted on
    days: int = 21  # traded on, after the history
    start: date = date(2022, 1, 1)
    drift_scale: float = 0.02
    variance: float = 0.02
    correlation: float = 0.3
    perturbation: float = 0.1
    perturb_covariance: bool = False


@dataclass(frozen=True)
class ObjectiveBlock:
    z: float = 105.0
    gamma: float = 0.001
    x0: float = 100.0
    horizon: float = 0.0  # 0: number of trading days


@dataclass(frozen=True)
class EstimatorBlock:
    method: str = "ols"
    layout: str = "drift_only"
    learning_rate: float = 1.0
    max_iters: int = 10_000
    grad_tolerance: float = 0.0  # 0: 1e-6 * T
    window: int = 60
    covariance_input: str = "residuals"


@dataclass(frozen=True)
class BacktestBlock:
    paths: int = 100
    mode: str = "fixed"
    weather_mode: str = "same_day"
    params: str = "fit"  # fit | truth | perturbed | path to params.json
    max_abs_allocation: float = 0.0  # 0: uncapped
    refit: str = "monthly"
    window: int = 60


@dataclass(frozen=True)
class RunConfig:
    nodes: tuple[str, ...] = ("N1", "N2", "N3")
    variables: tuple[str, ...] = DEFAULT_VARIABLES
    hour: int = 17
    seed: int = 0
    out: Path = Path("out")
    data: DataBlock | None = None
    simulation: SimulationBlock | None = None
    objective: ObjectiveBlock = field(default_factory=ObjectiveBlock)
    estimator: EstimatorBlock = field(default_factory=EstimatorBlock)
    backtest: BacktestBlock = field(default_factory=BacktestBlock)

    @property
    def mode(self) -> str:
        return "data" if self.data is not None else "simulation"


# flag name -> (section or None, key)
FLAG_KEYS: dict[str, tuple[str | None, str]] = {
    "seed": (None, "seed"),
    "paths": ("backtest", "paths"),
    "gamma": ("objective", "gamma"),
    "z": ("objective", "z"),
    "hour": (None, "hour"),
    "out": (None, "out"),
    "method": ("estimator", "method"),
}

PARAM_SOURCES = ("fit", "truth", "perturbed")

_CHOICES = {
    ("estimator", "method"): ("ols", "grad"),
    ("estimator", "layout"): ("drift_only", "full"),
    ("estimator", "covariance_input"): ("residuals", "raw"),
    ("backtest", "mode"): ("fixed", "rolling"),
    ("backtest", "weather_mode"): ("same_day", "next_day"),
    ("backtest", "refit"): ("monthly", "never"),
}


def read_toml(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: config file not found")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def _coerce(value: Any, target: Any, where: str):
    """Convert a raw TOML / flag value to the type of the dataclass default ``target``."""
    try:
        if isinstance(target, bool):
            if isinstance(value, bool):
                return value
            raise TypeError
        if isinstance(target, int) and not isinstance(target, bool):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if isinstance(target, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(target, Path):
            return Path(value)
        if isinstance(target, date):
            return value if isinstance(value, date) else date.fromisoformat(str(value))
        if isinstance(target, tuple):
            if isinstance(value, str) or not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(str(v) for v in value)
        if isinstance(target, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot use {value!r} (expected {type(target).__name__})") from None
    return value


def _build_block(cls, raw: Mapping[str, Any], section: str, base_dir: Path | None = None, required=()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name not in raw:
            if name in required:
                raise ConfigError(f"[{section}]: missing required key {name!r}")
            continue
        default = f.default if f.default is not dataclasses.MISSING else Path(".")
        val = _coerce(raw[name], default, f"[{section}].{name}")
        if isinstance(val, Path) and base_dir is not None and not val.is_absolute():
            val = base_dir / val
        choices = _CHOICES.get((section, name))
        if choices and val not in choices:
            raise ConfigError(f"[{section}].{name}: {val!r} not one of {choices}")
        kwargs[name] = val
    return cls(**kwargs)


def resolve_config(
    file_data: Mapping[str, Any] | None = None,
    flags: Mapping[str, Any] | None = None,
    base_dir: str | Path | None = None,
    check_files: bool = True,
) -> RunConfig:
    """Merge defaults, file contents and flags (``None`` flag values mean "not given")."""
    raw: dict[str, Any] = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in (file_data or {}).items()}
    for flag, value in (flags or {}).items():
        if value is None:
            continue
        if flag not in FLAG_KEYS:
            raise ConfigError(f"unknown flag {flag!r}")
        section, key = FLAG_KEYS[flag]
        if section is None:
            raw[key] = value
        else:
            raw.setdefault(section, {})[key] = value

    base = Path(base_dir) if base_dir is not None else None
    sections = {"data", "simulation", "objective", "estimator", "backtest"}
    top_fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - set(top_fields)
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name in ("nodes", "variables", "hour", "seed", "out"):
        if name in raw:
            default = top_fields[name].default
            val = _coerce(raw[name], default, name)
            if name == "out" and base is not None and not val.is_absolute() and (flags or {}).get("out") is None:
                val = base / val
            kwargs[name] = val
    for name in sections:
        if name in raw and not isinstance(raw[name], Mapping):
            raise ConfigError(f"[{name}] must be a table")

    if "data" in raw and "simulation" in raw:
        raise ConfigError("config must contain exactly one of [data] and [simulation], not both")
    if "data" in raw:
        kwargs["data"] = _build_block(DataBlock, raw["data"], "data", base, required=("da_lmp", "rt_lmp", "weather"))
    else:
        kwargs["simulation"] = _build_block(SimulationBlock, raw.get("simulation", {}), "simulation")
    kwargs["objective"] = _build_block(ObjectiveBlock, raw.get("objective", {}), "objective")
    kwargs["estimator"] = _build_block(EstimatorBlock, raw.get("estimator", {}), "estimator")
    bt = _build_block(BacktestBlock, raw.get("backtest", {}), "backtest")
    if bt.params not in PARAM_SOURCES and base is not None and not Path(bt.params).is_absolute():
        bt = dataclasses.replace(bt, params=str(base / bt.params))
    kwargs["backtest"] = bt
    cfg = RunConfig(**kwargs)
    validate(cfg, check_files=check_files)
    return cfg


def validate(cfg: RunConfig, check_files: bool = True) -> None:
    if not cfg.nodes or len(set(cfg.nodes)) != len(cfg.nodes):
        raise ConfigError("nodes must be a non-empty list of unique identifiers")
    if not cfg.variables:
        raise ConfigError("variables must be non-empty")
    if not 0 <= cfg.hour <= 23:
        raise ConfigError(f"hour {cfg.hour} outside 0..23")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if (cfg.data is None) == (cfg.simulation is None):
        raise ConfigError("config must contain exactly one of [data] and [simulation]")
    if cfg.objective.gamma <= 0:
        raise ConfigError("objective.gamma must be positive")
    if cfg.backtest.paths < 1:
        raise ConfigError("backtest.paths must be at least 1")
    if cfg.backtest.window < 2 or cfg.estimator.window < 2:
        raise ConfigError("covariance windows must be at least 2")
    if cfg.simulation is not None and (cfg.simulation.days < 1 or cfg.simulation.history_days < 2):
        raise ConfigError("simulation needs days >= 1 and history_days >= 2")
    if cfg.backtest.params not in PARAM_SOURCES:
        if check_files and not Path(cfg.backtest.params).is_file():
            raise ConfigError(f"{cfg.backtest.params}: params file not found")
    elif cfg.backtest.params != "fit" and cfg.simulation is None:
        raise ConfigError(f"backtest.params={cfg.backtest.params!r} needs a [simulation] block")
    if cfg.data is not None and check_files:
        for label in ("da_lmp", "rt_lmp", "weather"):
            p = getattr(cfg.data, label)
            if not Path(p).is_file():
                raise ConfigError(f"{p}: {label} file not found")


def load_config(path: str | Path | None, flags: Mapping[str, Any] | None = None, check_files: bool = True) -> RunConfig:
    if path is None:
        return resolve_config({}, flags, None, check_files)
    p = Path(path)
    return resolve_config(read_toml(p), flags, p.parent, check_files)


def config_echo(cfg: RunConfig) -> dict:
    """Plain-JSON view of the config (paths and dates as strings)."""

    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (Path, date)):
            return str(v)
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)
