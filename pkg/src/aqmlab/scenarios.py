"""Experiment catalogue, fluid link metrics and controller x scenario sweeps."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .controllers import ControllerConfig, named_controllers
from .fluid_model import DEFAULT_DT, NetworkParams, RunResult, SimState, simulate

log = logging.getLogger(__name__)

PRESET_NAMES = ("nominal", "dynamic_load", "short_delay", "long_delay")
USERS_GRID = tuple(range(70, 161, 10))
DELAY_GRID = tuple(round(0.02 * k, 3) for k in range(1, 8))


@dataclass(frozen=True)
class ScenarioSpec:
    """A dumbbell experiment.

    The fluid model has a single RTT, so the access-link delay on each side is
    folded into the propagation delay: Tp = bottleneck_delay + 2 * access_delay.
    """

    name: str = "nominal"
    capacity: float = 1250.0
    bottleneck_delay: float = 0.06
    access_delay: float = 0.0
    connection_timeline: tuple[tuple[float, int], ...] = ((0.0, 100),)
    buffer_limit: float = 300.0
    target_queue: float = 150.0
    duration: float = 100.0
    initial_queue: float = 0.0
    initial_window: float = 1.0
    controllers: tuple[str, ...] = ("rbf", "irbf", "pi", "rem", "ared", "droptail")

    def __post_init__(self):
        tl = tuple((float(t), int(n)) for t, n in self.connection_timeline)
        object.__setattr__(self, "connection_timeline", tl)
        object.__setattr__(self, "controllers", tuple(self.controllers))
        if not tl or tl[0][0] != 0.0:
            raise ValueError("connection timeline must start at t = 0")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.access_delay < 0 or self.bottleneck_delay < 0:
            raise ValueError("delays must be non-negative")
        if not self.prop_delay > 0:
            raise ValueError("folded propagation delay must be positive")
        if not 0 <= self.initial_queue <= self.buffer_limit:
            raise ValueError("initial_queue must lie in [0, buffer_limit]")
        # validates the rest
        self.params

    @property
    def prop_delay(self) -> float:
        return self.bottleneck_delay + 2.0 * self.access_delay

    @property
    def params(self) -> NetworkParams:
        return NetworkParams(capacity=self.capacity, prop_delay=self.prop_delay,
                             connections=self.connection_timeline,
                             buffer_limit=self.buffer_limit, target_queue=self.target_queue)

    @property
    def initial_state(self) -> SimState:
        return SimState(self.initial_window, self.initial_queue)

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]
    base: ScenarioSpec = ScenarioSpec()

    def __post_init__(self):
        if self.axis not in ("users", "prop_delay"):
            raise ValueError(f"sweep axis must be 'users' or 'prop_delay', got {self.axis!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep values are empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        object.__setattr__(self, "values", vals)

    def scenario_for(self, value: float) -> ScenarioSpec:
        if self.axis == "users":
            n = int(round(value))
            # scale every segment of the base timeline to the new count
            base_n = self.base.connection_timeline[0][1]
            tl = tuple((t, max(1, int(round(c * n / base_n)))) for t, c in self.base.connection_timeline)
            return self.base.replace(name=f"{self.base.name}@users={n}", connection_timeline=tl)
        return self.base.replace(name=f"{self.base.name}@prop_delay={value:g}",
                                 bottleneck_delay=value)


def preset(name: str) -> ScenarioSpec:
    """One of the canonical experiments: nominal, dynamic_load, short_delay, long_delay."""
    if name == "nominal":
        return ScenarioSpec()
    if name == "dynamic_load":
        return ScenarioSpec(name="dynamic_load",
                            connection_timeline=((0.0, 100), (30.0, 130), (60.0, 70), (80.0, 100)))
    if name == "short_delay":
        return ScenarioSpec(name="short_delay", bottleneck_delay=0.010, access_delay=0.002)
    if name == "long_delay":
        return ScenarioSpec(name="long_delay", bottleneck_delay=0.140, access_delay=0.020)
    raise ValueError(f"unknown scenario preset {name!r}; expected one of {PRESET_NAMES}")


def users_sweep(base: ScenarioSpec | None = None, values: Sequence[float] = USERS_GRID) -> SweepSpec:
    return SweepSpec("users", tuple(values), base or preset("nominal"))


def delay_sweep(base: ScenarioSpec | None = None, values: Sequence[float] = DELAY_GRID) -> SweepSpec:
    return SweepSpec("prop_delay", tuple(values), base or preset("nominal"))


# ------------------------------------------------------------------ metrics

def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    if y.shape[0] < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def utilization(trace: RunResult, params: NetworkParams) -> float:
    """Time-averaged served rate over capacity.

    A backlogged link serves at C; an empty one serves min(arrival, C).
    """
    t = trace.time
    if t.shape[0] < 2 or t[-1] <= t[0]:
        raise ValueError("trace must span a positive time interval")
    C = params.capacity
    served = np.where(trace.queue > 0, C, np.minimum(trace.arrival_rate, C))
    return min(max(_trapezoid(served, t) / (C * (t[-1] - t[0])), 0.0), 1.0)


def loss_rate(trace: RunResult, params: NetworkParams) -> float:
    """Dropped over arrived; early drops at the controller output plus the
    excess a full buffer cannot hold."""
    t = trace.time
    lam = np.asarray(trace.arrival_rate, dtype=float)
    p = np.clip(trace.control, 0.0, 1.0)
    full = trace.queue >= params.buffer_limit * (1 - 1e-12)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ovf = np.where(full & (lam > params.capacity), 1.0 - params.capacity / lam, 0.0)
    dropped = lam * (1.0 - (1.0 - p) * (1.0 - ovf))
    total = _trapezoid(lam, t)
    if total <= 0:
        return 0.0
    return min(max(_trapezoid(dropped, t) / total, 0.0), 1.0)


# ------------------------------------------------------------------ sweeps

@dataclass
class Cell:
    scenario: str
    controller: str
    result: RunResult | None = None
    error: str | None = None
    axis_value: float | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def resolve_controllers(names_or_cfgs) -> dict[str, ControllerConfig]:
    presets = named_controllers()
    if isinstance(names_or_cfgs, Mapping):
        return dict(names_or_cfgs)
    out = {}
    for item in names_or_cfgs:
        if isinstance(item, str):
            if item not in presets:
                raise ValueError(f"unknown controller preset {item!r}; expected one of {sorted(presets)}")
            out[item] = presets[item]
        else:
            out[item.scheme] = item
    return out


def run_scenario(spec: ScenarioSpec, controller: ControllerConfig, dt: float = DEFAULT_DT,
                 seed: int | None = None) -> RunResult:
    return simulate(spec.params, controller, spec.initial_state, t_end=spec.duration, dt=dt, seed=seed)


def run_matrix(scenarios: Sequence[ScenarioSpec], controllers, dt: float = DEFAULT_DT,
               seed: int = 0, axis_values: Sequence[float] | None = None) -> list[Cell]:
    """Every scenario against every controller, scenario-major order.

    A failing cell records its error instead of aborting the matrix.
    """
    scenarios = list(scenarios)
    ctrls = resolve_controllers(controllers)
    if not scenarios or not ctrls:
        raise ValueError("run_matrix needs at least one scenario and one controller")
    cells = []
    for si, spec in enumerate(scenarios):
        for name, cfg in ctrls.items():
            cell = Cell(spec.name, name, axis_value=None if axis_values is None else axis_values[si])
            try:
                cell.result = run_scenario(spec, cfg, dt=dt, seed=seed)
            except (ValueError, ArithmeticError) as exc:
                log.warning("cell %s/%s failed: %s", spec.name, name, exc)
                cell.error = str(exc)
            cells.append(cell)
    return cells


def run_sweep(sweep: SweepSpec, controllers, dt: float = DEFAULT_DT, seed: int = 0) -> list[Cell]:
    specs = [sweep.scenario_for(v) for v in sweep.values]
    return run_matrix(specs, controllers, dt=dt, seed=seed, axis_values=list(sweep.values))
