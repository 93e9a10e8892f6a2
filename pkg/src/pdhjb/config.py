"""Experiment configuration: a single structured text file (YAML key-value
nesting; JSON is accepted since every JSON document is valid YAML), validated
with field-path diagnostics and hashed canonically so every output artifact
can name the exact configuration that produced it."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

__all__ = ["ExperimentConfig", "ConfigError", "SCENARIOS", "load_config",
           "config_hash"]

SCENARIOS = ("parabolic_control", "hyperbolic_control", "quadratic_growth",
             "markovian_benchmark", "gauge_suite")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class OperatorConfig:
    preset: str | None = "dirichlet_laplacian"
    dim: int = 8
    eigenvalues: list | None = None


@dataclass
class NoiseConfig:
    rank: int = 2
    dt: float = 1.0 / 256.0


@dataclass
class SampleConfig:
    paths: int = 4000
    outer: int = 512
    inner: int = 256


@dataclass
class ControlConfig:
    points: list = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    switch_fractions: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    scenario: str = "gauge_suite"
    seed: int = 0
    out: str = "results"
    threads: int = 1
    horizon: float = 1.0
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    samples: SampleConfig = field(default_factory=SampleConfig)
    controls: ControlConfig = field(default_factory=ControlConfig)
    scenario_params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("top level: expected a mapping")
        known = {"scenario", "seed", "out", "threads", "horizon", "operator",
                 "noise", "samples", "controls", "scenario_params"}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown field")
        cfg = cls(
            scenario=data.get("scenario", "gauge_suite"),
            seed=int(data.get("seed", 0)),
            out=str(data.get("out", "results")),
            threads=int(data.get("threads", 1)),
            horizon=float(data.get("horizon", 1.0)),
            operator=OperatorConfig(**data.get("operator", {})),
            noise=NoiseConfig(**data.get("noise", {})),
            samples=SampleConfig(**data.get("samples", {})),
            controls=ControlConfig(**data.get("controls", {})),
            scenario_params=dict(data.get("scenario_params", {})),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"scenario: unknown id {self.scenario!r}; expected one of {SCENARIOS}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must fit an unsigned 64-bit integer")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if self.horizon <= 0:
            raise ConfigError("horizon: must be positive")
        if self.operator.eigenvalues is None:
            if self.operator.preset not in ("dirichlet_laplacian", "zero"):
                raise ConfigError(
                    f"operator.preset: unknown preset {self.operator.preset!r}")
            if not 1 <= self.operator.dim <= 64:
                raise ConfigError("operator.dim: must be in [1, 64]")
        elif any(v > 0 for v in self.operator.eigenvalues):
            raise ConfigError("operator.eigenvalues: must all be <= 0")
        if self.noise.rank < 1:
            raise ConfigError("noise.rank: must be >= 1")
        if self.noise.dt <= 0:
            raise ConfigError("noise.dt: must be positive")
        steps = self.horizon / self.noise.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("noise.dt: must divide the horizon")
        for name in ("paths", "outer", "inner"):
            if getattr(self.samples, name) < 1:
                raise ConfigError(f"samples.{name}: must be >= 1")
        if not self.controls.points:
            raise ConfigError("controls.points: must be nonempty")
        for f in self.controls.switch_fractions:
            if not 0.0 <= f < 1.0:
                raise ConfigError("controls.switch_fractions: entries must lie in [0, 1)")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"parse error: {exc}") from exc
    return ExperimentConfig.from_dict(data or {})


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
