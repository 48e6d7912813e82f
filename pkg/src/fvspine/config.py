"""Strict experiment configuration from YAML or JSON.

Unknown keys are fatal at every level so a typo never silently falls back
to a default.  Defaults are materialized into the returned object, which is
what gets hashed into the run manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .engine import EngineConfig, InitialMeasure
from .errors import ConfigError
from .geometry import DomainSpec

DEFAULT_DT = 1e-4
DEFAULT_LEVEL = 0.01
EXPERIMENTS = ("spine_marginal", "villemonais", "kernels", "boundary", "transform_coupling")

_TOP_KEYS = {"experiment", "engine", "replicas", "parallelism", "output_dir", "query_time",
             "seed", "level", "params"}
_ENGINE_KEYS = {"n", "T", "dt", "storage_dt", "domain", "initial", "snapshot_times",
                "bridge_correction"}
_DOMAIN_KEYS = {"kind", "bounds"}
_INITIAL_KEYS = {"kind", "box", "points", "margin"}

# Experiment-specific parameters and their defaults.
PARAM_DEFAULTS = {
    "spine_marginal": {"write_events": True, "branch_window": None},
    # The query time of the villemonais experiment is the engine horizon.
    "villemonais": {"n_values": [50, 100, 200, 400, 800], "box": [[0.4, 0.6]]},
    "kernels": {"h_chain_steps": 10_000, "h_chain_dt": 0.5,
                "domains": [[[0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]]},
    "boundary": {"trials": 100_000, "t": 1.0, "start": 0.5, "step_dt": 1e-3},
    "transform_coupling": {"exponent": 2.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    engine: EngineConfig
    experiment: str
    replicas: int = 1
    parallelism: int = 1
    output_dir: str = "out"
    query_time: float | None = None
    level: float = DEFAULT_LEVEL
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must be in (0, 1)")
        if self.experiment == "spine_marginal":
            if self.query_time is None:
                raise ConfigError("spine_marginal needs query_time")
            if self.query_time > self.engine.T / 2 + 1e-12:
                raise ConfigError(
                    f"query_time {self.query_time} exceeds T/2 = {self.engine.T / 2}")

    @property
    def seed(self) -> int:
        return self.engine.seed

    def to_dict(self) -> dict:
        e = self.engine
        return {
            "experiment": self.experiment,
            "seed": e.seed,
            "replicas": self.replicas,
            "output_dir": self.output_dir,
            "query_time": self.query_time,
            "level": self.level,
            "params": self.params,
            "engine": {
                "n": e.n, "T": e.T, "dt": e.dt, "storage_dt": e.storage_dt,
                "domain": e.domain.to_dict(), "initial": e.initial.to_dict(),
                "snapshot_times": list(e.snapshot_times),
                "bridge_correction": e.bridge_correction,
            },
        }

    def config_hash(self) -> str:
        # Where outputs go and how many workers write them must not change them.
        raw = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, *, seed=None, output_dir=None, parallelism=None, dt=None):
        """Copy with command-line overrides applied (and re-validated)."""
        raw = self.to_dict()
        raw["parallelism"] = self.parallelism if parallelism is None else int(parallelism)
        if seed is not None:
            raw["seed"] = int(seed)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        if dt is not None:
            old = self.engine
            raw["engine"]["dt"] = float(dt)
            if math.isclose(old.storage_dt, 10.0 * old.dt):
                raw["engine"]["storage_dt"] = None
        return from_dict(raw)


def _strict(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = sorted(set(mapping) - allowed)
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r} in {where}")


def _domain(raw) -> DomainSpec:
    _strict(raw, _DOMAIN_KEYS, "engine.domain")
    kind = raw.get("kind", "interval")
    bounds = raw.get("bounds")
    if bounds is None:
        raise ConfigError("engine.domain needs bounds")
    if kind == "interval" and len(bounds) == 2 and not isinstance(bounds[0], (list, tuple)):
        bounds = [bounds]
    try:
        return DomainSpec(kind, tuple(tuple(map(float, b)) for b in bounds))
    except ValueError as exc:
        raise ConfigError(f"engine.domain: {exc}") from exc


def _initial(raw) -> InitialMeasure:
    _strict(raw, _INITIAL_KEYS, "engine.initial")
    kind = raw.get("kind", "uniform_on_box")
    margin = float(raw.get("margin", 1e-3))
    if kind == "uniform_on_box":
        box = raw.get("box")
        if box is None:
            raise ConfigError("uniform_on_box needs box")
        if len(box) == 2 and not isinstance(box[0], (list, tuple)):
            box = [box]
        return InitialMeasure.uniform_on_box(*box, margin=margin)
    if kind == "point_cloud":
        if raw.get("points") is None:
            raise ConfigError("point_cloud needs points")
        return InitialMeasure.point_cloud(raw["points"], margin=margin)
    raise ConfigError(f"unknown initial kind {kind!r}")


def _engine(raw, seed) -> EngineConfig:
    _strict(raw, _ENGINE_KEYS, "engine")
    for key in ("n", "T", "domain", "initial"):
        if key not in raw:
            raise ConfigError(f"engine.{key} is required")
    dt = float(raw.get("dt", DEFAULT_DT))
    storage_dt = raw.get("storage_dt")
    return EngineConfig(
        n=int(raw["n"]), T=float(raw["T"]), dt=dt, domain=_domain(raw["domain"]),
        initial=_initial(raw["initial"]), seed=int(seed),
        snapshot_times=tuple(float(s) for s in raw.get("snapshot_times", ())),
        storage_dt=None if storage_dt is None else float(storage_dt),
        bridge_correction=bool(raw.get("bridge_correction", True)))


def from_dict(raw: dict) -> ExperimentConfig:
    _strict(raw, _TOP_KEYS, "config")
    if "engine" not in raw:
        raise ConfigError("config needs an engine section")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    engine = _engine(raw["engine"], raw.get("seed", 0))
    params = dict(PARAM_DEFAULTS[experiment])
    user = raw.get("params") or {}
    _strict(user, set(params), f"params for {experiment}")
    params.update(user)
    qt = raw.get("query_time")
    return ExperimentConfig(
        engine=engine, experiment=experiment, replicas=int(raw.get("replicas", 1)),
        parallelism=int(raw.get("parallelism", 1)), output_dir=str(raw.get("output_dir", "out")),
        query_time=None if qt is None else float(qt),
        level=float(raw.get("level", DEFAULT_LEVEL)), params=params)


def parse_config(source) -> ExperimentConfig:
    """Read a YAML or JSON file (or text) into a validated :class:`ExperimentConfig`."""
    path = Path(source) if not isinstance(source, str) or "\n" not in source else None
    if path is not None and path.exists():
        text = path.read_text()
    elif path is not None and isinstance(source, Path):
        raise ConfigError(f"cannot read {source}")
    else:
        text = str(source)
    try:
        raw = yaml.safe_load(text)  # JSON is a subset of YAML
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return from_dict(raw)
