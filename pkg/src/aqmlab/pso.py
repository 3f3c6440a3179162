"""Particle swarm tuner for the RBF-family controllers.

Velocity update with a linearly decaying inertia weight:

    v <- phi(k) v + a1 r1 * (P_i - x) + a2 r2 * (G - x),   clamp to +-v_max
    x <- x + v,                                              fold into bounds

The objective is the mean integral absolute queue error over a set of
initial queue sizes.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controllers import Irbf, Rbf
from .fluid_model import NetworkParams, SimState, simulate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SwarmConfig:
    max_iterations: int = 300
    population: int = 20
    v_max: float = 4.0
    inertia_initial: float = 0.9
    inertia_final: float = 0.2
    accel_cognitive: float = 2.0
    accel_social: float = 2.0
    min_global_error_gradient: float = 1e-5
    stall_window: int = 10
    # the stall test is skipped until this share of the inertia schedule has elapsed
    stall_after: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.inertia_initial >= self.inertia_final > 0:
            raise ValueError("need inertia_initial >= inertia_final > 0")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")
        if self.stall_window < 1:
            raise ValueError("stall_window must be >= 1")
        if not 0 <= self.stall_after <= 1:
            raise ValueError("stall_after must lie in [0, 1]")

    def inertia(self, k: int) -> float:
        """Inertia weight for iteration k (1-based update count)."""
        if self.max_iterations <= 1:
            return self.inertia_initial
        frac = min(max(k / (self.max_iterations - 1), 0.0), 1.0)
        return self.inertia_initial - (self.inertia_initial - self.inertia_final) * frac


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_score: float = math.inf


@dataclass
class TuneReport:
    global_best_position: np.ndarray
    global_best_score: float
    convergence_trace: np.ndarray
    iterations_used: int
    seed: int
    parameter_names: tuple[str, ...] = ()
    best_config: object = None


def velocity_update(p: Particle, global_best: np.ndarray, inertia: float,
                    a1: float, a2: float, rng: np.random.Generator | None,
                    v_max: float = math.inf, r1=None, r2=None) -> np.ndarray:
    """New velocity for ``p``; ``r1``/``r2`` override the random draws."""
    d = p.position.shape[0]
    if r1 is None:
        r1 = rng.random(d)
    if r2 is None:
        r2 = rng.random(d)
    v = (inertia * p.velocity
         + a1 * np.asarray(r1) * (p.best_position - p.position)
         + a2 * np.asarray(r2) * (global_best - p.position))
    return np.clip(v, -v_max, v_max)


def position_update(p: Particle, velocity: np.ndarray,
                    lower: np.ndarray, upper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Move by ``velocity`` and fold back into [lower, upper].

    Every reflection off a wall flips that velocity component.
    """
    x = p.position + velocity
    v = np.array(velocity, dtype=float)
    width = upper - lower
    for i in range(x.shape[0]):
        if lower[i] <= x[i] <= upper[i]:
            continue
        if width[i] == 0:
            x[i] = lower[i]
            v[i] = 0.0
            continue
        # distance travelled past the lower wall, folded with period 2*width
        r = (x[i] - lower[i]) % (2 * width[i])
        bounces = math.floor((x[i] - lower[i]) / width[i])
        x[i] = lower[i] + (r if r <= width[i] else 2 * width[i] - r)
        if bounces % 2:
            v[i] = -v[i]
    return x, v


def _best_index(scores: Sequence[float]) -> int:
    # lowest score, ties to the lowest index
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def minimize(objective: Callable[[np.ndarray], float], lower, upper,
             cfg: SwarmConfig = SwarmConfig(), workers: int = 1,
             callback: Callable[[int, float], None] | None = None,
             bounded: bool = False) -> TuneReport:
    """Run the swarm on a box-bounded objective.

    With ``bounded=True`` the objective is called as ``objective(x, bound)``
    where ``bound`` is the particle's personal best; it may return any value
    >= bound (e.g. inf) once it knows the true score cannot beat it. Only
    scores below the personal best are ever used, so the run is unchanged.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.ndim != 1 or lower.shape[0] == 0:
        raise ValueError("bounds must be non-empty 1-D sequences")
    if lower.shape != upper.shape:
        raise ValueError("lower and upper bounds differ in length")
    if np.any(upper < lower):
        raise ValueError("lower bound above upper bound")
    dim = lower.shape[0]

    def score_all(xs, bounds):
        def safe(x, bound):
            try:
                f = float(objective(x, bound) if bounded else objective(x))
            except (ValueError, ArithmeticError, FloatingPointError) as exc:
                log.debug("objective failed at %s: %s", x, exc)
                return math.inf
            return f if math.isfinite(f) else math.inf
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(safe, xs, bounds))
        return [safe(x, b) for x, b in zip(xs, bounds)]

    swarm = []
    for i in range(cfg.population):
        rng = np.random.default_rng([cfg.seed, 0, i])
        x = rng.uniform(lower, upper)
        v = rng.uniform(-cfg.v_max / 2, cfg.v_max / 2, dim)
        swarm.append(Particle(x, v, x.copy()))
    scores = score_all([p.position for p in swarm], [math.inf] * len(swarm))
    for p, s in zip(swarm, scores):
        p.best_score = s
    g = _best_index([p.best_score for p in swarm])
    g_pos = swarm[g].best_position.copy()
    g_score = swarm[g].best_score
    trace = [g_score]
    if callback:
        callback(0, g_score)

    for k in range(1, cfg.max_iterations):
        inertia = cfg.inertia(k)
        for i, p in enumerate(swarm):
            rng = np.random.default_rng([cfg.seed, k, i])
            v = velocity_update(p, g_pos, inertia, cfg.accel_cognitive, cfg.accel_social,
                                rng, cfg.v_max)
            p.position, p.velocity = position_update(p, v, lower, upper)
        scores = score_all([p.position for p in swarm], [p.best_score for p in swarm])
        for p, s in zip(swarm, scores):
            if s < p.best_score:
                p.best_score = s
                p.best_position = p.position.copy()
        g = _best_index([p.best_score for p in swarm])
        if swarm[g].best_score < g_score:
            g_score = swarm[g].best_score
            g_pos = swarm[g].best_position.copy()
        trace.append(g_score)
        if callback:
            callback(k, g_score)
        w = cfg.stall_window
        if (k >= w and k >= cfg.stall_after * (cfg.max_iterations - 1)
                and trace[-w - 1] - trace[-1] < cfg.min_global_error_gradient):
            log.info("stopping at iteration %d: improvement below %g over %d iterations",
                     k, cfg.min_global_error_gradient, w)
            break

    return TuneReport(
        global_best_position=g_pos,
        global_best_score=g_score,
        convergence_trace=np.asarray(trace),
        iterations_used=len(trace),
        seed=cfg.seed,
    )


# ------------------------------------------------------------ IAE objective

@dataclass(frozen=True)
class EvalSpec:
    """How one candidate controller is scored.

    ``initial_queues=None`` uses an even grid of ``n_initial`` sizes over
    [0, buffer_limit]; ``random_initial=True`` draws them uniformly instead.
    ``initial_control`` is the drop probability assumed before t = 0.
    """

    duration: float = 100.0
    dt: float = 1.0 / 160.0
    n_initial: int = 11
    initial_queues: tuple[float, ...] | None = None
    random_initial: bool = False
    initial_window: float = 1.0
    initial_control: float = 0.0
    settle_tol: float = 1e-9
    seed: int = 0

    def queues(self, params: NetworkParams) -> np.ndarray:
        if self.initial_queues is not None:
            return np.asarray(self.initial_queues, dtype=float)
        if self.random_initial:
            rng = np.random.default_rng([self.seed, 7919])
            return rng.uniform(0.0, params.buffer_limit, self.n_initial)
        return np.linspace(0.0, params.buffer_limit, self.n_initial)


def free_parameters(template: Rbf, tune_shape: bool = False) -> tuple[str, ...]:
    k = len(template.weights)
    names = [f"w{i + 1}" for i in range(k)]
    if isinstance(template, Irbf):
        names.append("w_I")
    if tune_shape:
        names += [f"c{i + 1}" for i in range(k)] + [f"s{i + 1}" for i in range(k)]
    return tuple(names)


def default_bounds(template: Rbf, tune_shape: bool = False,
                   params: NetworkParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Weights in [-1, 1]; integral gain in [0, 0.01]; shapes if requested."""
    k = len(template.weights)
    lo = [-1.0] * k
    hi = [1.0] * k
    if isinstance(template, Irbf):
        lo.append(0.0)
        hi.append(0.01)
    if tune_shape:
        half = (params.buffer_limit if params else 300.0) / 2
        lo += [-half] * k + [1.0] * k
        hi += [half] * k + [half] * k
    return np.array(lo), np.array(hi)


def decode(position: np.ndarray, template: Rbf, tune_shape: bool = False) -> Rbf:
    k = len(template.weights)
    x = np.asarray(position, dtype=float)
    changes = {"weights": tuple(x[:k])}
    i = k
    if isinstance(template, Irbf):
        changes["integral_gain"] = float(x[i])
        i += 1
    if tune_shape:
        changes["centers"] = tuple(x[i:i + k])
        changes["spreads"] = tuple(x[i + k:i + 2 * k])
    return dataclasses.replace(template, **changes)


def objective_iae(position: np.ndarray, template: Rbf, params: NetworkParams,
                  eval_spec: EvalSpec = EvalSpec(), tune_shape: bool = False,
                  bound: float = math.inf) -> float:
    """Mean IAE of the decoded controller over the initial-queue set.

    Returns inf as soon as the mean is certain to exceed ``bound``.
    """
    try:
        cfg = decode(position, template, tune_shape)
    except ValueError:
        return math.inf
    qs = eval_spec.queues(params)
    budget = bound * len(qs)
    total = 0.0
    for q0 in qs:
        res = simulate(params, cfg, SimState(eval_spec.initial_window, float(q0)),
                       t_end=eval_spec.duration, dt=eval_spec.dt,
                       initial_control=eval_spec.initial_control,
                       settle_tol=eval_spec.settle_tol, iae_cap=budget - total)
        total += res.iae
        if not total <= budget:
            return math.inf
    return total / len(qs)


def tune(template: Rbf, bounds: tuple[Sequence[float], Sequence[float]] | None,
         swarm_cfg: SwarmConfig, params: NetworkParams,
         eval_spec: EvalSpec = EvalSpec(), tune_shape: bool = False,
         workers: int = 1, callback=None) -> TuneReport:
    """Tune the free parameters of an RBF/IRBF template."""
    if not isinstance(template, Rbf):
        raise TypeError("only RBF and Integral-RBF controllers are tunable")
    if bounds is None:
        bounds = default_bounds(template, tune_shape, params)
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    names = free_parameters(template, tune_shape)
    if lower.shape != (len(names),) or upper.shape != (len(names),):
        raise ValueError(f"bounds must cover {len(names)} parameters: {names}")
    report = minimize(lambda x, b: objective_iae(x, template, params, eval_spec, tune_shape, b),
                      lower, upper, swarm_cfg, workers=workers, callback=callback, bounded=True)
    report.parameter_names = names
    report.best_config = decode(report.global_best_position, template, tune_shape)
    return report
