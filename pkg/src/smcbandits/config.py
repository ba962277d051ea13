"""Run configuration: a versioned TOML (or JSON) document validated by pydantic.

Format (version 1)::

    version = 1
    experiment = "static-sim"     # static-sim | dynamic-sim | replay | bench
    seed = 2024
    scale = "desk"                # desk | paper; fills T, R, N and bench/replay sizes
    T = 2000                      # optional, overrides the preset
    R = 20
    workers = 1                   # default: available cores; --deterministic forces 1

    [model]
    link = "probit"
    prior_variance = 10.0         # static studies; dynamic-sim and replay default to 1.0
    step_variance = 1.0           # random-walk variance (default 1.0; 0.01 for replay)

    [smc]
    n_particles = 500
    threshold = 250               # default n_particles / 2
    scheme = "multinomial"
    kernel = "probit-gibbs"
    sweeps = 1

    [[policies]]
    kind = "eps-greedy"
    params = { epsilon = 0.1 }

    [replay]                      # experiment = "replay"
    log = "log.csv"               # or: synthetic = 20000 (generated uniform log)
    repeats = 100

    [bench]                       # experiment = "bench"
    grid = [500, 1000, 2000]
    samples = 1000
    burn_in_fraction = 0.1
    repeats = 3

Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .policies import POLICY_KINDS, PolicySpec, SMCSettings

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

CONFIG_VERSION = 1

PRESETS: dict[str, dict[str, Any]] = {
    "desk": {
        "sim": {"T": 2000, "R": 20, "N": 500},
        "replay": {"N": 500, "repeats": 10},
        "bench": {"grid": [500, 1000, 2000], "samples": 1000},
    },
    "paper": {
        "sim": {"T": 10000, "R": 50, "N": 1000},
        "replay": {"N": 1000, "repeats": 100},
        "bench": {"grid": list(range(500, 5001, 500)), "samples": 1000},
    },
}

STATIC_POLICIES = [
    {"kind": "smc-static"},
    {"kind": "eps-greedy", "params": {"epsilon": 0.1}},
    {"kind": "eps-greedy", "params": {"epsilon": 0.01}},
    {"kind": "ucb", "params": {"confidence": 0.9}},
    {"kind": "ucb", "params": {"confidence": 0.95}},
    {"kind": "random"},
]
DYNAMIC_POLICIES = [{"kind": "smc-dynamic"}] + STATIC_POLICIES
REPLAY_POLICIES = [
    {"kind": "random"},
    {"kind": "smc-static"},
    {"kind": "smc-dynamic"},
    {"kind": "eps-greedy", "params": {"epsilon": 0.1}},
    {"kind": "ucb", "params": {"confidence": 0.95}},
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(_Strict):
    link: Literal["probit", "logit"] = "probit"
    prior_variance: float | None = Field(default=None, gt=0)
    step_variance: float | None = Field(default=None, ge=0)


class SMCSection(_Strict):
    n_particles: int | None = Field(default=None, ge=1)
    threshold: float | None = None
    scheme: Literal["multinomial", "systematic"] = "multinomial"
    kernel: Literal["probit-gibbs", "random-walk-metropolis"] = "probit-gibbs"
    sweeps: int = Field(default=1, ge=1)
    step_scale: float = Field(default=0.1, gt=0)
    strict: bool = True


class PolicySection(_Strict):
    kind: str
    params: dict[str, Any] = Field(default_factory=dict)
    name: str | None = None

    @field_validator("kind")
    @classmethod
    def _known(cls, v: str) -> str:
        if v not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {v!r}; expected one of {list(POLICY_KINDS)}")
        return v

    def spec(self) -> PolicySpec:
        return PolicySpec(self.kind, dict(self.params), self.name)


class ReplaySection(_Strict):
    log: str | None = None
    synthetic: int | None = Field(default=None, ge=1)  # rows of a generated uniform log
    sidecar: str | None = None
    repeats: int | None = Field(default=None, ge=1)
    baseline: str = "random"

    @model_validator(mode="after")
    def _source(self):
        if (self.log is None) == (self.synthetic is None):
            raise ValueError("exactly one of replay.log and replay.synthetic is required")
        return self


class BenchSection(_Strict):
    grid: list[int] | None = None
    samples: int | None = Field(default=None, ge=1)
    burn_in_fraction: float = Field(default=0.1, ge=0, lt=1)
    repeats: int = Field(default=3, ge=1)

    @field_validator("grid")
    @classmethod
    def _positive(cls, v):
        if v is not None and (not v or any(t < 1 for t in v)):
            raise ValueError("grid must be a non-empty list of positive integers")
        return v


class RunConfig(_Strict):
    version: Literal[1] = CONFIG_VERSION
    experiment: Literal["static-sim", "dynamic-sim", "replay", "bench"]
    seed: int = Field(default=0, ge=0, lt=2**64)
    scale: Literal["desk", "paper"] = "desk"
    out: str | None = None
    T: int | None = Field(default=None, ge=1)
    R: int | None = Field(default=None, ge=1)
    workers: int | None = Field(default=None, ge=1)
    track: bool = True
    model: ModelSection = ModelSection()
    smc: SMCSection = SMCSection()
    policies: list[PolicySection] | None = None
    replay: ReplaySection | None = None
    bench: BenchSection | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.experiment == "replay" and self.replay is None:
            raise ValueError("experiment 'replay' requires a [replay] section")
        if self.replay is not None and self.experiment != "replay":
            raise ValueError("[replay] section is only valid for experiment 'replay'")
        if self.bench is not None and self.experiment != "bench":
            raise ValueError("[bench] section is only valid for experiment 'bench'")
        N = self.n_particles
        c = self.threshold
        if not 0 <= c <= N + 1:
            raise ValueError(f"smc.threshold must lie in [0, N+1] = [0, {N + 1}], got {c}")
        if self.replay is not None and self.replay.log is not None and not Path(self.replay.log).exists():
            raise ValueError(f"replay.log: file {self.replay.log} does not exist")
        if self.policies is not None:
            labels = [p.spec().label for p in self.policies]
            if len(set(labels)) != len(labels):
                raise ValueError(f"policy labels must be unique, got {labels}")
        return self

    # resolved values (explicit setting > preset)
    @property
    def _preset(self) -> dict:
        key = "replay" if self.experiment == "replay" else "sim"
        return PRESETS[self.scale][key]

    @property
    def n_particles(self) -> int:
        if self.smc.n_particles is not None:
            return self.smc.n_particles
        if self.experiment == "bench":
            return self.bench_samples
        return self._preset["N"]

    @property
    def threshold(self) -> float:
        return self.n_particles / 2 if self.smc.threshold is None else self.smc.threshold

    @property
    def horizon(self) -> int:
        return self.T if self.T is not None else PRESETS[self.scale]["sim"]["T"]

    @property
    def replications(self) -> int:
        return self.R if self.R is not None else PRESETS[self.scale]["sim"]["R"]

    @property
    def replay_repeats(self) -> int:
        r = self.replay.repeats if self.replay is not None else None
        return r if r is not None else PRESETS[self.scale]["replay"]["repeats"]

    @property
    def bench_grid(self) -> list[int]:
        g = self.bench.grid if self.bench is not None else None
        return list(g) if g is not None else list(PRESETS[self.scale]["bench"]["grid"])

    @property
    def bench_samples(self) -> int:
        s = self.bench.samples if self.bench is not None else None
        return s if s is not None else PRESETS[self.scale]["bench"]["samples"]

    @property
    def prior_variance(self) -> float:
        if self.model.prior_variance is not None:
            return self.model.prior_variance
        # the particle-only dynamic filter degenerates under the wide static prior
        return 1.0 if self.experiment in ("dynamic-sim", "replay") else 10.0

    @property
    def step_variance(self) -> float:
        if self.model.step_variance is not None:
            return self.model.step_variance
        return 0.01 if self.experiment == "replay" else 1.0

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers is not None else (os.cpu_count() or 1)

    def policy_specs(self) -> list[PolicySpec]:
        if self.policies is not None:
            return [p.spec() for p in self.policies]
        default = {
            "static-sim": STATIC_POLICIES,
            "dynamic-sim": DYNAMIC_POLICIES,
            "replay": REPLAY_POLICIES,
        }.get(self.experiment, [])
        return [PolicySection(**p).spec() for p in default]

    def smc_settings(self) -> SMCSettings:
        s = self.smc
        return SMCSettings(self.n_particles, self.threshold, s.scheme, s.kernel, s.sweeps, s.step_scale, s.strict)

    def resolved(self) -> dict:
        """Configuration echo with every preset-derived value made explicit."""
        data = self.model_dump(mode="json")
        data["resolved"] = {
            "T": self.horizon,
            "R": self.replications,
            "n_particles": self.n_particles,
            "threshold": self.threshold,
            "prior_variance": self.prior_variance,
            "step_variance": self.step_variance,
            "policies": [{"kind": p.kind, "params": p.params, "label": p.label} for p in self.policy_specs()],
        }
        if self.experiment == "replay":
            data["resolved"]["repeats"] = self.replay_repeats
        if self.experiment == "bench":
            data["resolved"]["grid"] = self.bench_grid
            data["resolved"]["samples"] = self.bench_samples
        return data


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {_format_error(exc)}") from exc


def parse_config(source) -> RunConfig:
    """Parse a config from a dict, a ``.toml``/``.json`` path, or TOML text.

    A run manifest (``manifest.json``) is accepted too; its ``config`` entry is used.
    """
    if isinstance(source, dict):
        data = source
    else:
        text = None
        path = Path(source) if not (isinstance(source, str) and "\n" in source) else None
        if path is not None and path.exists():
            text = path.read_text(encoding="utf-8")
            is_json = path.suffix == ".json"
        elif path is not None and path.suffix in (".toml", ".json"):
            raise ConfigurationError(f"config file {path} does not exist")
        else:
            text, is_json = str(source), False
        try:
            data = json.loads(text) if is_json else tomllib.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot parse config: {exc}") from exc
        if is_json and isinstance(data, dict) and "config" in data and "outputs" in data:
            data = data["config"]
    data = {k: v for k, v in data.items() if k != "resolved"}
    return config_from_dict(data)
