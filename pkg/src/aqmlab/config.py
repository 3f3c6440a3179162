"""YAML experiment configs.

Layout (every section optional)::

    scenario:   {preset: nominal, <ScenarioSpec field>: value, ...}
    controller: {scheme: rbf, <field>: value, ...}
    controllers: [rbf, irbf, {scheme: pi, a: 1.8e-5}, ...]
    run:        {dt: 0.001, seed: 0}
    sweep:      {axis: users, values: [70, 80, ...]}
    tune:       {<SwarmConfig field>: value, eval: {<EvalSpec field>: value},
                 tune_shape: false, workers: 1, lower: [...], upper: [...]}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import scenarios
from .controllers import (ControllerConfig, controller_from_dict, controller_to_dict, named_controllers,
                          preset_controllers)
from .fluid_model import DEFAULT_DT
from .pso import EvalSpec, SwarmConfig


class ConfigError(ValueError):
    pass


@dataclass
class Experiment:
    scenario: scenarios.ScenarioSpec = field(default_factory=scenarios.ScenarioSpec)
    scenario_preset: str | None = field(default="nominal", compare=False)
    controller: ControllerConfig = field(default_factory=lambda: preset_controllers()["rbf"])
    controllers: dict[str, ControllerConfig] = field(default_factory=preset_controllers)
    dt: float = DEFAULT_DT
    seed: int = 0
    sweep_axis: str = "users"
    sweep_values: tuple[float, ...] | None = None
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    eval_spec: EvalSpec = field(default_factory=EvalSpec)
    tune_shape: bool = False
    workers: int = 1
    bounds: tuple[list[float], list[float]] | None = None

    def sweep_spec(self) -> scenarios.SweepSpec:
        if self.sweep_values is not None:
            values = self.sweep_values
        elif self.sweep_axis == "users":
            values = scenarios.USERS_GRID
        else:
            values = scenarios.DELAY_GRID
        return scenarios.SweepSpec(self.sweep_axis, tuple(values), self.scenario)


def _build(cls, data, what):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown {what} field(s): {sorted(extra)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def _controller(data, what="controller") -> ControllerConfig:
    presets = named_controllers()
    if isinstance(data, str):
        if data not in presets:
            raise ConfigError(f"unknown controller preset {data!r}; expected one of {sorted(presets)}")
        return presets[data]
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a preset name or a mapping with a 'scheme' key")
    try:
        return controller_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from exc


def parse(data: dict | None) -> Experiment:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    known = {"scenario", "controller", "controllers", "run", "sweep", "tune"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown top-level section(s): {sorted(extra)}")
    exp = Experiment()

    sc = dict(data.get("scenario") or {})
    preset_name = sc.pop("preset", "nominal")
    try:
        base = scenarios.preset(preset_name) if preset_name else scenarios.ScenarioSpec()
        exp.scenario = base.replace(**{k: tuple(map(tuple, v)) if k == "connection_timeline" else
                                       (tuple(v) if isinstance(v, list) else v)
                                       for k, v in sc.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    exp.scenario_preset = preset_name

    if "controller" in data:
        exp.controller = _controller(data["controller"])
    if "controllers" in data:
        items = data["controllers"]
        if not isinstance(items, list):
            raise ConfigError("controllers must be a list")
        ctrls = {}
        for item in items:
            if isinstance(item, dict):
                item = dict(item)
                name = item.pop("name", None)
                cfg = _controller(item, "controllers entry")
                name = name or cfg.scheme
            else:
                cfg = _controller(item, "controllers entry")
                name = item
            if name in ctrls:
                raise ConfigError(f"duplicate controller {name!r} in controllers list")
            ctrls[name] = cfg
        exp.controllers = ctrls

    run = data.get("run") or {}
    extra = set(run) - {"dt", "seed"}
    if extra:
        raise ConfigError(f"unknown run field(s): {sorted(extra)}")
    exp.dt = float(run.get("dt", exp.dt))
    exp.seed = int(run.get("seed", exp.seed))
    if not exp.dt > 0:
        raise ConfigError("run.dt must be positive")

    sw = data.get("sweep") or {}
    extra = set(sw) - {"axis", "values"}
    if extra:
        raise ConfigError(f"unknown sweep field(s): {sorted(extra)}")
    exp.sweep_axis = sw.get("axis", exp.sweep_axis)
    if "values" in sw and sw["values"] is not None:
        exp.sweep_values = tuple(float(v) for v in sw["values"])
    try:
        exp.sweep_spec()
    except ValueError as exc:
        raise ConfigError(f"invalid sweep: {exc}") from exc

    tn = dict(data.get("tune") or {})
    exp.eval_spec = _build(EvalSpec, tn.pop("eval", None), "tune.eval")
    exp.tune_shape = bool(tn.pop("tune_shape", False))
    exp.workers = int(tn.pop("workers", 1))
    lower, upper = tn.pop("lower", None), tn.pop("upper", None)
    if (lower is None) != (upper is None):
        raise ConfigError("tune.lower and tune.upper must be given together")
    if lower is not None:
        exp.bounds = ([float(x) for x in lower], [float(x) for x in upper])
    exp.swarm = _build(SwarmConfig, tn, "tune")
    return exp


def load(path: str | Path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse(data)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(exp: Experiment) -> dict:
    sc = {"preset": None}
    for f in dataclasses.fields(exp.scenario):
        sc[f.name] = _plain(getattr(exp.scenario, f.name))
    tune = {f.name: getattr(exp.swarm, f.name) for f in dataclasses.fields(exp.swarm)}
    tune["eval"] = {f.name: _plain(getattr(exp.eval_spec, f.name))
                    for f in dataclasses.fields(exp.eval_spec)}
    tune["tune_shape"] = exp.tune_shape
    tune["workers"] = exp.workers
    if exp.bounds is not None:
        tune["lower"], tune["upper"] = exp.bounds
    return {
        "scenario": sc,
        "controller": controller_to_dict(exp.controller),
        "controllers": [{"name": n, **controller_to_dict(c)} for n, c in exp.controllers.items()],
        "run": {"dt": exp.dt, "seed": exp.seed},
        "sweep": {"axis": exp.sweep_axis,
                  "values": None if exp.sweep_values is None else list(exp.sweep_values)},
        "tune": tune,
    }


def dump(exp: Experiment) -> str:
    return yaml.safe_dump(to_dict(exp), sort_keys=False)
