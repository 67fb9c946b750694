"""Run configuration: versioned JSON, strict keys, all defaults materialized."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import FixedBall, MollifiedKernel, ThetaFamily, VariableBall, VisionCone

SCHEMA_VERSION = 1
EXPERIMENTS = ("simulate", "meanfield", "chaos", "verify")


@dataclass
class RegionConfig:
    kind: str = "FixedBall"
    d: int = 2
    r: float = 0.5
    r_min: float = 0.3
    speed_scale: float = 1.0
    theta_star: float = math.pi / 4
    sharpness: float = 1.0
    eta: float = 0.05
    eps: float = 0.05
    h2_constant: float | None = None

    def build(self):
        if self.kind == "FixedBall":
            return FixedBall(self.r, self.d)
        if self.kind == "VariableBall":
            return VariableBall.tanh(self.r_min, self.r, self.speed_scale, self.d)
        if self.kind == "VisionCone":
            return VisionCone(self.r, self.theta_star, self.d, self.sharpness)
        raise ConfigError(f"unknown region kind {self.kind!r}; use FixedBall, VariableBall or VisionCone")

    def kernel(self):
        return MollifiedKernel(self.build(), self.eta, self.eps)

    def theta(self):
        return ThetaFamily(self.build(), self.h2_constant)


@dataclass
class SimConfig:
    n: int = 32
    sigma: float = 0.1
    dt: float = 1e-3
    t_end: float = 1.0
    v_m: float = 1.0
    box_length: float | None = None
    c_slack: float | None = None
    tau_boundary: float | None = None
    replicas: int = 1
    position_scale: float = 1.0
    speed_max: float = 1.0
    snapshot_every: int = 100
    record_events: bool = False


@dataclass
class MeanFieldConfig:
    mode: str = "kinetic"
    L: float = 2.0
    nx: int = 256
    nv: int = 128
    t_end: float = 1.0
    x_amplitude: float = 0.5
    v_center: float = 0.0
    v_half_width: float = 0.8
    m_samples: int = 1024
    refresh_every: int = 1
    snapshot_times: list = field(default_factory=lambda: [0.0, 0.5, 1.0])


@dataclass
class ChaosConfig:
    n_ladder: list = field(default_factory=lambda: [64, 128, 256, 512, 1024])
    replicas: int = 32
    horizon: float = 1.0
    proxy_size: int = 8192
    q: float = 4.0
    dt: float = 0.01
    L: float = 2.0


@dataclass
class VerifyConfig:
    h2_samples: int = 100_000
    rope_samples: int = 100_000
    w1_instances: int = 50
    lln_ladder: list = field(default_factory=lambda: [32, 64, 128, 256, 512, 1024])
    lln_reps: int = 16


@dataclass
class ChecksConfig:
    speed_bound: bool = True
    mass_drift: float | None = 1e-8
    momentum_drift: float | None = None
    vsupport_cells: float | None = 2.0
    envelope: bool = True
    slope_range: list | None = field(default_factory=lambda: [-0.65, -0.35])
    h2_zero_violations: bool = True
    w1_oracle_tol: float | None = 1e-10
    rope: bool = True
    lln_exponent: list | None = field(default_factory=lambda: [-0.65, -0.35])


@dataclass
class RunConfig:
    experiment: str = "simulate"
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "out"
    threads: int | None = None  # None: logical cores, resolved before the run
    region: RegionConfig = field(default_factory=RegionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    meanfield: MeanFieldConfig = field(default_factory=MeanFieldConfig)
    chaos: ChaosConfig = field(default_factory=ChaosConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    checks: ChecksConfig = field(default_factory=ChecksConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"region": RegionConfig, "sim": SimConfig, "meanfield": MeanFieldConfig, "chaos": ChaosConfig,
           "verify": VerifyConfig, "checks": ChecksConfig}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed: {sorted(names)}")
    kwargs = {}
    for k, v in data.items():
        if where == "config" and k in _NESTED:
            v = _build(_NESTED[k], v, k)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {cfg.schema_version} not supported (expected {SCHEMA_VERSION})")
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    r = cfg.region
    if not (0 < r.eta < 0.5 and 0 < r.eps < 0.5):
        raise ConfigError("region.eta and region.eps must lie in (0, 1/2)")
    if r.d not in (1, 2, 3):
        raise ConfigError("region.d must be 1, 2 or 3")
    s = cfg.sim
    if s.n < 1 or s.dt <= 0 or s.t_end < 0 or s.sigma < 0 or s.v_m <= 0 or s.replicas < 1:
        raise ConfigError("sim: need n >= 1, dt > 0, t_end >= 0, sigma >= 0, v_m > 0, replicas >= 1")
    if s.speed_max > s.v_m:
        raise ConfigError("sim.speed_max must not exceed sim.v_m")
    m = cfg.meanfield
    if m.mode not in ("kinetic", "proxy"):
        raise ConfigError("meanfield.mode must be 'kinetic' or 'proxy'")
    if cfg.experiment == "meanfield" and r.d != 1:
        raise ConfigError("meanfield runs are one-dimensional; set region.d = 1")
    if cfg.experiment == "chaos" and r.d != 1:
        raise ConfigError("chaos sweeps use the one-dimensional torus; set region.d = 1")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def from_dict(data: dict) -> RunConfig:
    return validate(_build(RunConfig, data, "config"))


def load(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(data)
