"""Layered run configuration: defaults < config file < command-line flags.

Config files are flat ``section.key = value`` lines; ``#`` starts a comment.
Optional numeric keys accept ``auto``.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .cfnn import CfnnTopology
from .motor_model import (DEFAULT_B, DEFAULT_DT, DEFAULT_J, OMEGA_TARGET, TABLE_VALUES, THETA_TARGET,
                          Calibration, DriveProfile, MotorParams, calibrate_unstated_params,
                          s1_horizon, stability_limit)
from .pipeline import StopCriteria
from .rprop import RpropConfig, Variant

__all__ = ["RunConfig", "ConfigError", "SEED_STREAMS", "derive_seed", "load_config_file"]

# Keys that steer execution only; they are left out of artifact echoes so
# outputs do not depend on them.
EXECUTION_KEYS = ("threads", "out")

SEED_STREAMS = {"noise": 0, "init": 1, "folds": 2}


class ConfigError(ValueError):
    pass


def derive_seed(master: int, stream: str) -> int:
    """64-bit sub-seed: numpy ``SeedSequence(master, spawn_key=(index,))`` for the named stream."""
    seq = np.random.SeedSequence(master, spawn_key=(SEED_STREAMS[stream],))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MotorConfig:
    v_rated: float = TABLE_VALUES["v_rated"]
    p_rated: float = TABLE_VALUES["p_rated"]
    tl_rated: float = TABLE_VALUES["tl_rated"]
    r_a0: float = TABLE_VALUES["r_a0"]
    l_a: float = TABLE_VALUES["l_a"]
    alpha_cu: float = TABLE_VALUES["alpha_cu"]
    k_ir: float = TABLE_VALUES["k_ir"]
    k_th: float = TABLE_VALUES["k_th"]
    ks: float = TABLE_VALUES["ks"]
    h_th: float = TABLE_VALUES["h_th"]
    k_e: Optional[float] = None
    j: float = DEFAULT_J
    b: float = DEFAULT_B


@dataclass(frozen=True)
class CalibrationConfig:
    omega_target: float = OMEGA_TARGET
    theta_target: float = THETA_TARGET


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    t_end: Optional[float] = None
    sample_rate: float = 10.0
    # "auto" is the S1 run: rated voltage, calibrated load torque.
    profile: str = "auto"


@dataclass(frozen=True)
class DataConfig:
    rate: float = 2.0
    sigma_v: float = 1.2
    sigma_i: float = 0.125
    window: int = 1


@dataclass(frozen=True)
class NetworkConfig:
    topology: str = "2-10-8-3"
    input_tansig: bool = False
    init_scale: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    folds: int = 5
    cross_validate: bool = False


@dataclass(frozen=True)
class EvalConfig:
    steady_fraction: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    motor: MotorConfig = field(default_factory=MotorConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    dataset: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    rprop: RpropConfig = field(default_factory=RpropConfig)
    stop: StopCriteria = field(default_factory=StopCriteria)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 42
    threads: int = 1
    out: str = "runs"

    # -- flat view ----------------------------------------------------------

    @classmethod
    def keys(cls) -> dict[str, Any]:
        """Dotted key -> declared type."""
        out = {}
        for f in fields(cls):
            hint = typing.get_type_hints(cls)[f.name]
            if is_dataclass(hint):
                sub = typing.get_type_hints(hint)
                for g in fields(hint):
                    out[f"{f.name}.{g.name}"] = sub[g.name]
            else:
                out[f.name] = hint
        return out

    def flat(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if is_dataclass(value):
                for g in fields(value):
                    out[f"{f.name}.{g.name}"] = getattr(value, g.name)
            else:
                out[f.name] = value
        return out

    def dump(self, include_execution: bool = True) -> list[str]:
        return [f"{k} = {_format(v)}" for k, v in self.flat().items()
                if include_execution or k not in EXECUTION_KEYS]

    def echo(self) -> dict[str, str]:
        """Effective config for embedding in artifacts."""
        return {k: _format(v) for k, v in self.flat().items() if k not in EXECUTION_KEYS}

    def with_values(self, values: dict[str, str]) -> "RunConfig":
        """Return a copy with string ``values`` parsed and applied; validates."""
        types = self.keys()
        sections: dict[str, dict[str, Any]] = {}
        top: dict[str, Any] = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"{key}: unknown config key")
            parsed = _parse(key, raw, types[key])
            section, _, name = key.partition(".")
            if name:
                sections.setdefault(section, {})[name] = parsed
            else:
                top[key] = parsed
        kwargs = dict(top)
        for section, items in sections.items():
            try:
                kwargs[section] = replace(getattr(self, section), **items)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}: {exc}") from None
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg

    # -- derived objects ----------------------------------------------------

    def validate(self) -> None:
        """Build every derived object once so errors surface before any work."""
        checks = [
            ("seed", lambda: self.seed >= 0 or _fail("must be >= 0")),
            ("threads", lambda: self.threads >= 1 or _fail("must be >= 1")),
            ("motor", self.calibration_result),
            ("sim.profile", self.profile),
            ("sim.dt", lambda: self.sim.dt > 0 or _fail("must be > 0")),
            ("sim.t_end", lambda: self.t_end() >= 0 or _fail("must be >= 0")),
            ("sim.sample_rate", lambda: self.sim.sample_rate > 0 or _fail("must be > 0")),
            ("dataset.rate", lambda: 0 < self.dataset.rate <= self.sim.sample_rate
             or _fail("must be in (0, sim.sample_rate]")),
            ("dataset.sigma_v", lambda: self.dataset.sigma_v >= 0 or _fail("must be >= 0")),
            ("dataset.sigma_i", lambda: self.dataset.sigma_i >= 0 or _fail("must be >= 0")),
            ("dataset.window", lambda: self.dataset.window >= 1 or _fail("must be >= 1")),
            ("network.topology", self.topology),
            ("network.init_scale", lambda: self.network.init_scale > 0 or _fail("must be > 0")),
            ("train.folds", lambda: self.train.folds >= 2 or _fail("must be >= 2")),
            ("eval.steady_fraction", lambda: 0 < self.eval.steady_fraction <= 1
             or _fail("must be in (0, 1]")),
        ]
        for key, check in checks:
            try:
                check()
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        if self.topology().n_in != 2 * self.dataset.window or self.topology().n_out != 3:
            raise ConfigError(f"network.topology: {self.network.topology} needs "
                              f"{2 * self.dataset.window} inputs and 3 outputs")
        if not self.sim.dt < stability_limit(self.motor_params()):
            raise ConfigError(f"sim.dt: {self.sim.dt:g} s is above the RK4 stability bound "
                              f"{stability_limit(self.motor_params()):.3g} s")
        for key, ratio in (("sim.sample_rate", 1.0 / (self.sim.sample_rate * self.sim.dt)),
                           ("dataset.rate", self.sim.sample_rate / self.dataset.rate)):
            if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigError(f"{key}: sampling interval must be an integer multiple "
                                  f"of the finer one (ratio {ratio:g})")

    def calibration_result(self) -> Calibration:
        m = self.motor
        known = {k: getattr(m, k) for k in TABLE_VALUES}
        cal = calibrate_unstated_params(self.calibration.omega_target, self.calibration.theta_target,
                                        j=m.j, b=m.b, **known)
        if m.k_e is not None:
            params = replace(cal.params, k_e=m.k_e)
            cal = replace(cal, params=params)
        return cal

    def motor_params(self) -> MotorParams:
        return self.calibration_result().params

    def profile(self) -> DriveProfile:
        if self.sim.profile.strip().lower() == "auto":
            cal = self.calibration_result()
            return DriveProfile.constant(cal.v_a, cal.t_l)
        return DriveProfile.parse(self.sim.profile)

    def t_end(self) -> float:
        return s1_horizon(self.motor_params()) if self.sim.t_end is None else self.sim.t_end

    def topology(self) -> CfnnTopology:
        return CfnnTopology.parse(self.network.topology, self.network.input_tansig)

    def seed_for(self, stream: str) -> int:
        return derive_seed(self.seed, stream)


def _fail(msg: str):
    raise ValueError(msg)


def _format(v: Any) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, Variant):
        return v.value
    return str(v)


def _parse(key: str, raw: str, hint: Any) -> Any:
    raw = str(raw).strip()
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if optional:
        if raw.lower() in ("auto", "none", ""):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {raw!r}")
            return low in ("true", "1", "yes")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is Variant:
            return Variant(raw.upper())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def load_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values
