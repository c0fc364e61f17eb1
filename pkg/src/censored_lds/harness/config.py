"""YAML experiment configuration.

Example::

    system:
      generator: scaled_rotation    # or: A_star: [[0.5]]
      rho: 0.9
      theta: 0.3
    schedule:
      type: static
      set: {type: box, lower: [-2, -2], upper: [2, 2]}
    horizons: [4000, 16000, 64000]
    seeds: [0, 1, 2]
    estimator: {alpha: 0.2, c_eta: 1, c_gamma: 2, c_s: 2.0}
    baselines: {ols_pairs: true, oracle_ols: true}
    constants: {enabled: true, mc_samples: 1000, alpha_grid: [0.01, 0.05]}
    output_dir: out
    parallelism: 1
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..estimator import SonSgConfig
from ..sets import SetSchedule, schedule_from_dict
from ..simulator import SystemSpec, random_diagonalizable, scaled_identity, scaled_rotation

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "load_yaml", "dump_yaml"]

_Loader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)
_Dumper = getattr(yaml, "CSafeDumper", yaml.SafeDumper)

GENERATORS = ("scaled_identity", "scaled_rotation", "random_diagonalizable")


class ConfigError(ValueError):
    """Config problem; ``field`` is a dotted path such as ``system.A_star``."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field:
            where.append(field)
        if line is not None:
            where.append(f"line {line}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field = field
        self.line = line


def load_yaml(path) -> Any:
    text = Path(path).read_text()
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML parse error: {exc.problem}", line=line) from None


def dump_yaml(obj, path=None) -> str:
    text = yaml.dump(obj, Dumper=_Dumper, sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass(frozen=True)
class ExperimentConfig:
    system: dict
    schedule: dict
    horizons: tuple
    seeds: tuple
    estimator: SonSgConfig = field(default_factory=SonSgConfig)
    baselines: dict = field(default_factory=lambda: {"ols_pairs": True, "oracle_ols": True})
    constants: dict = field(default_factory=lambda: {"enabled": True, "mc_samples": 1000,
                                                     "alpha_grid": [0.01, 0.05, 0.1]})
    output_dir: str = "out"
    parallelism: int = 1
    name: str = "experiment"

    def build_system(self) -> SystemSpec:
        return SystemSpec(system_matrix(self.system))

    def build_schedule(self) -> SetSchedule:
        return schedule_from_dict(self.schedule)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))

    def to_dict(self) -> dict:
        est = {k: v for k, v in self.estimator.to_dict().items() if v is not None}
        return {
            "name": self.name,
            "system": self.system,
            "schedule": self.schedule,
            "horizons": list(self.horizons),
            "seeds": list(self.seeds),
            "estimator": est,
            "baselines": dict(self.baselines),
            "constants": dict(self.constants),
            "output_dir": self.output_dir,
            "parallelism": self.parallelism,
        }


def system_matrix(system: dict) -> np.ndarray:
    if "A_star" in system:
        try:
            A = np.array(system["A_star"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("must be a numeric matrix", "system.A_star") from None
        A = np.atleast_2d(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError(f"must be square, got shape {A.shape}", "system.A_star")
        return A
    gen = system.get("generator")
    if gen is None:
        raise ConfigError("missing (give A_star or a generator)", "system.A_star")
    try:
        if gen == "scaled_identity":
            return scaled_identity(int(system["d"]), float(system["rho"]))
        if gen == "scaled_rotation":
            return scaled_rotation(float(system["rho"]), float(system.get("theta", 0.3)))
        if gen == "random_diagonalizable":
            rng = np.random.default_rng(int(system.get("seed", 0)))
            return random_diagonalizable(int(system["d"]), float(system["rho"]), rng)
    except KeyError as exc:
        raise ConfigError("missing", f"system.{exc.args[0]}") from None
    raise ConfigError(f"unknown generator {gen!r}; expected one of {GENERATORS}", "system.generator")


def _require(raw: dict, key: str, kind, path: str | None = None):
    path = path or key
    if key not in raw:
        raise ConfigError("missing", path)
    value = raw[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}", path)
    return value


def _int_list(raw: dict, key: str) -> tuple:
    value = _require(raw, key, None)
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, list) or not value or not all(isinstance(v, int) for v in value):
        raise ConfigError("expected a nonempty list of integers", key)
    return tuple(value)


def parse_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    system = _require(raw, "system", dict)
    A = system_matrix(system)
    schedule = _require(raw, "schedule", dict)
    try:
        sched = schedule_from_dict(schedule)
    except ValueError as exc:
        raise ConfigError(str(exc), "schedule") from None
    if sched.dim != A.shape[0]:
        raise ConfigError(f"dimension {sched.dim} does not match system dimension {A.shape[0]}", "schedule")

    horizons = _int_list(raw, "horizons")
    if any(h < 2 for h in horizons):
        raise ConfigError("all horizons must be >= 2", "horizons")
    seeds = _int_list(raw, "seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct", "seeds")

    est_raw = raw.get("estimator", {}) or {}
    if not isinstance(est_raw, dict):
        raise ConfigError("expected a mapping", "estimator")
    known = set(SonSgConfig.__dataclass_fields__)
    for key in est_raw:
        if key not in known:
            raise ConfigError(f"unknown key; expected one of {sorted(known)}", f"estimator.{key}")
    try:
        estimator = SonSgConfig(**est_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "estimator") from None

    base = ExperimentConfig(system, schedule, horizons, seeds)
    baselines = {**base.baselines, **(raw.get("baselines") or {})}
    constants = {**base.constants, **(raw.get("constants") or {})}
    parallelism = raw.get("parallelism", 1)
    if not isinstance(parallelism, int) or parallelism < 1:
        raise ConfigError("must be a positive integer", "parallelism")
    return ExperimentConfig(
        system=system,
        schedule=schedule,
        horizons=horizons,
        seeds=seeds,
        estimator=estimator,
        baselines=baselines,
        constants=constants,
        output_dir=str(raw.get("output_dir", "out")),
        parallelism=parallelism,
        name=str(raw.get("name", "experiment")),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(load_yaml(path))


def parse_estimator_config(raw: Any) -> SonSgConfig:
    """Estimator settings from either a full experiment config or a bare mapping."""
    if raw is None:
        return SonSgConfig()
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    est = raw.get("estimator", raw)
    known = set(SonSgConfig.__dataclass_fields__)
    est = {k: v for k, v in est.items() if k in known}
    try:
        return SonSgConfig(**est)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "estimator") from None
