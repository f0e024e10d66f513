"""Flat ``key = value`` run configuration.

Every tunable of the pipeline is a named key whose default is the reference
experiment's value. Files may contain ``#`` comments and blank lines; unknown
keys are rejected.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import PHASES
from .ecm import V1_CLOSURES, BatteryConfig, EcmTable, TableError
from .noise import NoiseError, NoiseSpec
from .sigma_filter import UkfConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    phase: str = "charge"
    seed: int = 42
    psd: float = 1e-4
    timestep_s: float = 0.1
    duration_s: float | None = None
    current_a: float | None = None
    temperature_k: float = 293.0
    capacity_ah: float = 4.0
    v1_closure: str = "steady_state"
    ecm_table: str | None = None
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    process_noise: float = 0.5
    measurement_noise: float = 1.0
    initial_voltage_charge: float = 2.5
    initial_voltage_discharge: float = 4.2
    initial_soc_charge: float = 0.01
    initial_soc_discharge: float = 1.0
    initial_cov_voltage: float = 0.01
    initial_cov_soc: float = 0.01
    preliminary_error_rate: float | None = None
    input_path: str | None = None
    output_path: str | None = None

    def validate(self) -> "RunConfig":
        """Check every field and build the derived configs once; raises ConfigError."""
        if self.phase not in PHASES + ("both",):
            raise ConfigError(f"phase must be charge, discharge or both, got {self.phase!r}")
        for name in ("psd", "timestep_s", "temperature_k", "capacity_ah", "alpha", "beta",
                     "kappa", "process_noise", "measurement_noise", "initial_cov_voltage",
                     "initial_cov_soc", "initial_voltage_charge", "initial_voltage_discharge",
                     "initial_soc_charge", "initial_soc_discharge"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not self.temperature_k > 0:
            raise ConfigError("temperature_k must be positive")
        if self.duration_s is not None and not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        if self.current_a is not None and not math.isfinite(self.current_a):
            raise ConfigError("current_a must be finite")
        if self.process_noise < 0 or self.measurement_noise <= 0:
            raise ConfigError("process_noise must be >= 0 and measurement_noise > 0")
        if self.initial_cov_voltage < 0 or self.initial_cov_soc < 0:
            raise ConfigError("initial covariances must be non-negative")
        if self.preliminary_error_rate is not None and not self.preliminary_error_rate >= 0:
            raise ConfigError("preliminary_error_rate must be non-negative")
        try:
            self.battery_config()
            NoiseSpec(self.psd, 1.0 / self.timestep_s, self.seed)
            for phase in PHASES:
                self.ukf_config(phase)
        except (ValueError, TableError, NoiseError, OSError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return self

    def phases(self) -> tuple[str, ...]:
        return PHASES if self.phase == "both" else (self.phase,)

    def battery_config(self) -> BatteryConfig:
        table = EcmTable.from_csv(self.ecm_table) if self.ecm_table else EcmTable()
        if self.v1_closure not in V1_CLOSURES:
            raise ConfigError(f"v1_closure must be one of {V1_CLOSURES}")
        return BatteryConfig(self.capacity_ah, self.timestep_s, table, self.v1_closure)

    def initial_state(self, phase: str) -> tuple[float, float]:
        if phase == "charge":
            return self.initial_voltage_charge, self.initial_soc_charge
        return self.initial_voltage_discharge, self.initial_soc_discharge

    def ukf_config(self, phase: str) -> UkfConfig:
        x0 = self.initial_state(phase)
        var_v = self.initial_cov_voltage
        if self.preliminary_error_rate is not None:
            var_v = (self.preliminary_error_rate * x0[0]) ** 2
        return UkfConfig(
            process_noise_cov=self.process_noise * np.eye(2),
            measurement_noise_cov=self.measurement_noise * np.eye(2),
            initial_state=np.array(x0),
            initial_cov=np.diag([var_v, self.initial_cov_soc]),
            alpha=self.alpha, beta=self.beta, kappa=self.kappa,
        )

    def noise_spec(self, sample_rate: float | None = None) -> NoiseSpec:
        return NoiseSpec(self.psd, sample_rate or 1.0 / self.timestep_s, self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.to_dict().items())

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return dataclasses.replace(self, **_coerce_all(overrides))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls().with_overrides(parse_kv(Path(path).read_text(encoding="utf-8"), str(path)))


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _render(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    optional = "None" in kind
    if raw == "" or (optional and raw.lower() == "none"):
        if optional:
            return None
        raise ConfigError(f"{key} needs a value")
    try:
        if kind.startswith("int"):
            return int(raw, 0)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _coerce_all(overrides: dict[str, str]) -> dict:
    return {k: _coerce(k, str(v)) for k, v in overrides.items()}
