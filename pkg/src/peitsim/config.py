"""Run configuration: YAML files validated into typed records.

Every physical quantity carries its unit in the key name. Frequencies given in MHz are
ordinary (not angular) frequencies; they are converted to rad/us on use.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .units import mhz


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AtomCfg(_Strict):
    linewidth_mhz: float = Field(gt=0)
    branch_g_fraction: float = Field(0.5, ge=0, le=1)
    alpha: float = Field(1.0 / 3.0, ge=0, le=1)

    def build(self):
        from .rates import AtomParams
        g = mhz(self.linewidth_mhz)
        return AtomParams(g, gamma_g=g * self.branch_g_fraction,
                          gamma_r=g * (1 - self.branch_g_fraction), alpha=self.alpha)


class ToneCfg(_Strict):
    rabi_mhz: float = Field(ge=0)
    detuning_mhz: float
    projection: list[float] = Field(default_factory=lambda: [1.0])

    def build(self):
        from .rates import LaserTone
        return LaserTone(mhz(self.rabi_mhz), mhz(self.detuning_mhz), tuple(self.projection))


class DrivingCfg(_Strict):
    """The driving tone, given by its detuning and either its Rabi frequency or its ac Stark shift."""

    detuning_mhz: float
    rabi_mhz: Optional[float] = Field(None, ge=0)
    ac_stark_mhz: Optional[float] = Field(None, ge=0)
    projection: list[float] = Field(default_factory=lambda: [0.0])

    @model_validator(mode="after")
    def _one_of(self):
        if (self.rabi_mhz is None) == (self.ac_stark_mhz is None):
            raise ValueError("give exactly one of rabi_mhz or ac_stark_mhz")
        return self

    def build(self):
        from .rates import LaserTone, driving_rabi_for_shift
        d = mhz(self.detuning_mhz)
        rabi = mhz(self.rabi_mhz) if self.rabi_mhz is not None else \
            driving_rabi_for_shift(mhz(self.ac_stark_mhz), d)
        return LaserTone(rabi, d, tuple(self.projection))


class ChainCfg(_Strict):
    ion_count: int = Field(ge=1)
    trap_mhz: tuple[float, float, float]

    def build(self):
        from .modes import ChainConfig
        return ChainConfig.from_mhz(self.ion_count, self.trap_mhz)


class GridCfg(_Strict):
    start_mhz: float
    stop_mhz: float
    count: int = Field(ge=1)

    def values_mhz(self):
        import numpy as np
        return np.linspace(self.start_mhz, self.stop_mhz, self.count)


class StepGridCfg(_Strict):
    start_mhz: float
    stop_mhz: float
    step_mhz: float = Field(gt=0)

    def values_mhz(self):
        import numpy as np
        n = int(math.floor((self.stop_mhz - self.start_mhz) / self.step_mhz + 1e-9)) + 1
        return self.start_mhz + self.step_mhz * np.arange(n)


class ModesRun(_Strict):
    command: Literal["modes"]
    chain: ChainCfg
    wavevector_per_um: Optional[tuple[float, float, float]] = None


class ProfileTone(_Strict):
    rabi_mhz: float = Field(gt=0)
    detuning_mhz: Optional[float] = None
    resonant_mode_mhz: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.detuning_mhz is None) == (self.resonant_mode_mhz is None):
            raise ValueError("give exactly one of detuning_mhz or resonant_mode_mhz")
        return self


class ProfileRun(_Strict):
    command: Literal["profile"]
    atom: AtomCfg
    driving: DrivingCfg
    tones: list[ProfileTone] = Field(min_length=1)
    grid: StepGridCfg
    sideband_modes_mhz: list[float] = Field(default_factory=list)


class SweepRun(_Strict):
    command: Literal["sweep"]
    atom: AtomCfg
    ac_stark_mhz: float = Field(ge=0)
    driving_detuning_mhz: float
    probe_rabi_mhz: float = Field(gt=0)
    omega: GridCfg
    eta_at_1mhz: float = Field(0.29, ge=0)


class SingleModeCfg(_Strict):
    kind: Literal["single"]
    mode_mhz: float = Field(gt=0)
    eta_g: float
    eta_r: float
    exact_displacement: bool = False
    fock_state: Optional[int] = Field(None, ge=0)


class TwoDCfg(_Strict):
    kind: Literal["2d"]
    omega_z_mhz: float = Field(gt=0)
    omega_x_mhz: float = Field(gt=0)
    eta_gz: float
    eta_gx: Optional[float] = None
    modes: list[Literal["z", "x"]] = Field(default_factory=lambda: ["z", "x"])
    effective: bool = True


class TwoIonCfg(_Strict):
    kind: Literal["two-ion"]
    chain_trap_mhz: tuple[float, float, float]
    eta_com: float
    eta_stretch: float
    modes: list[Literal["com", "stretch"]] = Field(default_factory=lambda: ["com", "stretch"])
    effective: bool = True


class CoolRun(_Strict):
    command: Literal["cool"]
    atom: AtomCfg
    driving: DrivingCfg
    probes: list[ToneCfg] = Field(min_length=1)
    mismatch_mhz: float = 0.0
    model: Union[SingleModeCfg, TwoDCfg, TwoIonCfg] = Field(discriminator="kind")
    nbar0: float = Field(2.0, ge=0)
    fock_dims: dict[str, int] = Field(default_factory=dict)
    truncation_tail: float = Field(1e-4, gt=0, lt=1)
    max_dim: int = Field(1024, ge=1)
    t_max_us: Optional[float] = Field(None, gt=0)
    t_max_cooling_times: float = Field(4.0, gt=0)
    samples: int = Field(101, ge=5)
    single_mode_reference: bool = False


class TraceFiles(_Strict):
    blue_csv: str
    red_csv: str


class ThermoRun(_Strict):
    command: Literal["thermo"]
    chain: Optional[ChainCfg] = None
    branches: list[Literal["z", "x", "y"]] = Field(default_factory=lambda: ["x", "y", "z"])
    mode_indices: Optional[list[int]] = None
    wavevector_per_um: float = Field(6.1, gt=0)
    rabi_mhz: float = Field(0.1, gt=0)
    nbar_grid: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 1.0])
    observable: Literal["any", "mean"] = "any"
    truncation_tail: float = Field(1e-4, gt=0, lt=1)
    factor: Optional[float] = Field(None, ge=0)
    amplitudes: Optional[dict[Literal["blue", "red"], float]] = None
    traces: Optional[TraceFiles] = None


RunConfig = Union[ModesRun, ProfileRun, SweepRun, CoolRun, ThermoRun]
_BY_COMMAND = {"modes": ModesRun, "profile": ProfileRun, "sweep": SweepRun, "cool": CoolRun,
               "thermo": ThermoRun}


def parse_config(data: dict, command: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    data = dict(data)
    cmd = data.setdefault("command", command)
    if command is not None and cmd != command:
        raise ConfigError(f"config is for '{cmd}', not '{command}'")
    if cmd not in _BY_COMMAND:
        raise ConfigError(f"unknown command {cmd!r}")
    try:
        return _BY_COMMAND[cmd].model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, command: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
        data = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, command)


def preset_names() -> list[str]:
    root = resources.files("peitsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str, command: str | None = None) -> RunConfig:
    root = resources.files("peitsim") / "presets"
    f = root / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(yaml.safe_load(f.read_text()), command)
