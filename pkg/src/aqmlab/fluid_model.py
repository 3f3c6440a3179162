"""Time-delayed TCP/AQM fluid model.

Aggregate window ``w`` and bottleneck queue ``q`` evolve as

    dw/dt = 1/R(t) - w(t)/2 * w(t-R)/R(t-R) * sat(p(t-R))
    dq/dt = N(t) w(t)/R(t) - C          (projected onto [0, buffer_limit])

with R = q/C + Tp. Integration is fixed-step RK4; delayed states come from
a ring buffer through cubic Hermite interpolation (samples carry their
derivatives), delayed control is read back zero-order-hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernel as K

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class NetworkParams:
    """Bottleneck link and load description.

    ``connections`` is a tuple of ``(start_time, N)`` pairs; segment i covers
    ``[start_i, start_{i+1})`` and the last one runs to the end of the run.
    """

    capacity: float = 1250.0
    prop_delay: float = 0.06
    connections: tuple[tuple[float, int], ...] = ((0.0, 100),)
    buffer_limit: float = 300.0
    target_queue: float = 150.0

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if not self.prop_delay > 0:
            raise ValueError(f"prop_delay must be positive, got {self.prop_delay}")
        if not self.buffer_limit > 0:
            raise ValueError(f"buffer_limit must be positive, got {self.buffer_limit}")
        if not 0 < self.target_queue < self.buffer_limit:
            raise ValueError("target_queue must lie strictly inside (0, buffer_limit)")
        segs = tuple((float(t), int(n)) for t, n in self.connections)
        if not segs:
            raise ValueError("connection timeline is empty")
        if segs[0][0] != 0.0:
            raise ValueError("connection timeline must start at t = 0")
        for (t0, _), (t1, _) in zip(segs, segs[1:]):
            if not t1 > t0:
                raise ValueError("connection timeline start times must strictly increase")
        for _, n in segs:
            if n < 1:
                raise ValueError(f"connection count must be >= 1, got {n}")
        object.__setattr__(self, "connections", segs)

    @property
    def max_rtt(self) -> float:
        return self.buffer_limit / self.capacity + self.prop_delay

    def connections_at(self, t: float) -> int:
        n = self.connections[0][1]
        for start, count in self.connections:
            if start <= t:
                n = count
            else:
                break
        return n

    def timeline_arrays(self):
        start = np.array([s for s, _ in self.connections], dtype=float)
        count = np.array([n for _, n in self.connections], dtype=float)
        return start, count


@dataclass(frozen=True)
class SimState:
    window: float
    queue: float
    time: float = 0.0

    def __post_init__(self):
        if not self.window >= 0:
            raise ValueError(f"window must be >= 0, got {self.window}")
        if not self.queue >= 0:
            raise ValueError(f"queue must be >= 0, got {self.queue}")


class DelayLine:
    """Ring of uniformly spaced (window, queue, derivatives, control) samples.

    Sample ``n`` sits at time ``n * dt``. Control values are stored per step
    and read back as a zero-order hold; window and queue are interpolated
    with cubic Hermite polynomials. The ring keeps ``horizon`` seconds of
    history and raises on older lookups.
    """

    def __init__(self, initial: SimState, dt: float, horizon: float, initial_control: float = 0.0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.dt = float(dt)
        self.horizon = float(horizon)
        cap = int(math.ceil(horizon / dt)) + 4
        self._w = np.empty(cap)
        self._q = np.empty(cap)
        self._dw = np.zeros(cap)
        self._dq = np.zeros(cap)
        self._u = np.zeros(cap)
        self._w[0] = initial.window
        self._q[0] = initial.queue
        self.w0 = float(initial.window)
        self.q0 = float(initial.queue)
        self.u0 = float(initial_control)
        # index of the newest stored sample; its derivative may still be pending
        self.n = 0
        self._controls = 0

    @property
    def capacity(self) -> int:
        return self._w.shape[0]

    @property
    def time(self) -> float:
        return self.n * self.dt

    def latest(self) -> SimState:
        a = self.n % self.capacity
        return SimState(float(self._w[a]), float(self._q[a]), self.time)

    def state_at(self, t: float) -> tuple[float, float]:
        """Interpolated (window, queue) at ``t``; t must not exceed the newest
        sample with a known derivative."""
        if t > self.time + 1e-12:
            raise ValueError(f"cannot look ahead: t={t} > {self.time}")
        # Hermite needs the right-hand derivative; with a pending one fall back
        # to the previous interval
        return K.history_at(t, self.n, self.dt, self._w, self._q, self._dw, self._dq,
                            self.w0, self.q0)

    def control_at(self, t: float) -> float:
        return K.control_at(t, self._u, self._controls, self.dt, self.u0)

    # kernel-facing views
    def _arrays(self):
        return self._w, self._q, self._dw, self._dq, self._u


@dataclass
class RunResult:
    """Sampled closed-loop trajectory plus scalar metrics."""

    time: np.ndarray
    queue: np.ndarray
    window: np.ndarray
    control: np.ndarray
    arrival_rate: np.ndarray
    iae: float
    utilization: float
    loss_rate: float
    duration: float
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return self.time.shape[0]

    def steady_window(self, start: float, end: float | None = None) -> np.ndarray:
        end = self.duration if end is None else end
        mask = (self.time >= start - 1e-9) & (self.time <= end + 1e-9)
        return self.queue[mask]


def rtt(queue: float, params: NetworkParams) -> float:
    """Round-trip time q/C + Tp in seconds."""
    if queue < 0:
        raise ValueError(f"queue must be >= 0, got {queue}")
    return queue / params.capacity + params.prop_delay


def saturate(u: float) -> float:
    """Clamp a raw control to the probability interval [0, 1]."""
    if not math.isfinite(u):
        raise ValueError(f"control must be finite, got {u}")
    return K.sat(float(u))


def derivatives(state: SimState, delayed: tuple[float, float, float],
                params: NetworkParams, n_now: int | None = None) -> tuple[float, float]:
    """(dw/dt, dq/dt) for the current state and the delayed (w, q, p) triple."""
    wd, qd, ud = delayed
    if not 0.0 <= ud <= 1.0:
        raise ValueError("delayed control must already be saturated to [0, 1]")
    n = params.connections_at(state.time) if n_now is None else n_now
    return K.rhs(state.window, state.queue, wd, qd, ud, float(n),
                 params.capacity, params.prop_delay, params.buffer_limit)


def step(state: SimState, delay_line: DelayLine, controller_output: float,
         params: NetworkParams, dt: float) -> SimState:
    """Advance one RK4 step of length ``dt``.

    ``state`` must be the newest sample of ``delay_line``; ``controller_output``
    is emitted at ``state.time`` and reaches the senders one RTT later. The
    new sample is appended to the delay line.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > params.prop_delay / 4 + 1e-15:
        raise ValueError(f"dt={dt} exceeds prop_delay/4 = {params.prop_delay / 4}")
    if abs(dt - delay_line.dt) > 1e-12 * dt:
        raise ValueError("dt does not match the delay line spacing")
    if abs(state.time - delay_line.time) > 1e-9 * max(1.0, state.time):
        raise ValueError("state is not the newest delay-line sample")
    if delay_line.horizon < params.max_rtt:
        raise ValueError(
            f"delay line underflow: horizon {delay_line.horizon} s < max RTT {params.max_rtt} s")
    n = delay_line.n
    hw, hq, hdw, hdq, hu = delay_line._arrays()
    a = n % delay_line.capacity
    hw[a] = state.window
    hq[a] = min(state.queue, params.buffer_limit)
    hu[n % hu.shape[0]] = saturate(controller_output)
    delay_line._controls = n + 1
    seg_start, seg_n = params.timeline_arrays()
    C, Tp, B = params.capacity, params.prop_delay, params.buffer_limit
    k1w, k1q = K.seed_derivative(n, dt, hw, hq, hdw, hdq, delay_line.w0, delay_line.q0,
                                 hu, n + 1, dt, delay_line.u0, C, Tp, B, seg_start, seg_n)
    K.rk4_advance(n, dt, k1w, k1q, hw, hq, hdw, hdq, delay_line.w0, delay_line.q0,
                  hu, n + 1, dt, delay_line.u0, C, Tp, B, seg_start, seg_n)
    delay_line.n = n + 1
    return delay_line.latest()


def integrate_dde(f: Callable[[float, float, float], float], x0: float,
                  delay: Callable[[float, float], float], t_end: float, dt: float) -> np.ndarray:
    """Scalar DDE x' = f(t, x(t), x(t - delay(t, x))) with constant history x0.

    Same scheme as the fluid model: classical RK4 on a uniform grid, delayed
    values from cubic Hermite interpolation of the stored samples and their
    slopes. Every delay must be at least ``dt`` so that stage lookups only
    touch completed intervals. Returns the samples at 0, dt, ..., t_end.
    """
    n_steps = _steps_for(t_end, dt)
    x = np.empty(n_steps + 1)
    dx = np.empty(n_steps + 1)
    x[0] = x0

    def lookup(tq: float, n: int) -> float:
        if tq <= 0.0:
            return x0
        s = tq / dt
        i = min(int(math.floor(s)), n - 1)
        if i < 0:
            return x0
        return K.hermite(x[i], dx[i], x[i + 1], dx[i + 1], s - i, dt)

    def g(t: float, y: float, n: int) -> float:
        tau = delay(t, y)
        if tau < dt:
            raise ValueError(f"delay {tau} shorter than the step {dt}")
        return f(t, y, lookup(t - tau, n))

    for n in range(n_steps):
        t = n * dt
        k1 = g(t, x[n], n)
        dx[n] = k1
        k2 = g(t + 0.5 * dt, x[n] + 0.5 * dt * k1, n)
        k3 = g(t + 0.5 * dt, x[n] + 0.5 * dt * k2, n)
        k4 = g(t + dt, x[n] + dt * k3, n)
        x[n + 1] = x[n] + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def _steps_for(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} is not a whole number of steps of {dt}")
    return n


def simulate(params: NetworkParams, controller, init: SimState | None = None,
             t_end: float = 100.0, dt: float = DEFAULT_DT, seed: int | None = None,
             initial_control: float = 0.0, settle_tol: float = 0.0,
             iae_cap: float = math.inf) -> RunResult:
    """Run the closed loop from ``init`` for ``t_end`` seconds.

    ``controller`` is any config accepted by :func:`aqmlab.controllers.compile_controller`.
    The controller ticks at its own sampling period and the returned trace is
    sampled at the same instants. The model is deterministic; ``seed`` is
    accepted for interface symmetry and recorded in ``extras``.

    ``settle_tol > 0`` lets the integrator stop early once the loop has sat
    on a fixed point (per-tick movement below the tolerance) for two
    maximum RTTs after the last load change, extrapolating the metrics.

    ``iae_cap`` abandons the run as soon as the IAE is certain to exceed it;
    such a result reports ``iae = inf`` and ``extras["aborted"] = True``.
    """
    from .controllers import compile_controller

    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > params.prop_delay / 4 + 1e-15:
        raise ValueError(f"dt={dt} exceeds prop_delay/4 = {params.prop_delay / 4}")
    init = SimState(window=1.0, queue=0.0) if init is None else init
    if init.queue > params.buffer_limit:
        raise ValueError("initial queue exceeds the buffer limit")
    n_steps = _steps_for(t_end, dt)
    prog = compile_controller(controller, params)
    period = prog.period
    n_ticks = int(math.floor(t_end / period + 1e-9)) + 1
    hist_cap = int(math.ceil(params.max_rtt / dt)) + 8
    ctrl_cap = int(math.ceil(params.max_rtt / period)) + 8
    seg_start, seg_n = params.timeline_arrays()
    st = prog.state.copy()
    tr_t, tr_q, tr_w, tr_u, tr_a, abs_err, served, arrived, dropped = K.run_closed_loop(
        params.capacity, params.prop_delay, params.buffer_limit, params.target_queue,
        seg_start, seg_n, n_steps, dt, init.window, init.queue, initial_control,
        prog.scheme, period, n_ticks, prog.par, prog.weights, prog.centers, prog.scales,
        st, hist_cap, ctrl_cap, float(settle_tol), 2.0 * params.max_rtt,
        float(iae_cap) * t_end)
    util = served / (params.capacity * t_end)
    loss = dropped / arrived if arrived > 0 else 0.0
    return RunResult(
        time=tr_t, queue=tr_q, window=tr_w, control=tr_u, arrival_rate=tr_a,
        iae=abs_err / t_end,
        utilization=min(max(util, 0.0), 1.0),
        loss_rate=min(max(loss, 0.0), 1.0),
        duration=t_end,
        extras={"seed": seed, "dt": dt, "controller_state": st,
                "aborted": math.isinf(abs_err)},
    )
