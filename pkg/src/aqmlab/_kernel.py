"""Jitted core: fluid-model right-hand side, delay-line lookups, RK4 step,
controller laws and the closed-loop driver.

Everything here works on flat numpy arrays so numba can compile it. The
public modules wrap these functions with dataclasses and validation.
"""

import math

import numpy as np
from numba import njit

# scheme codes shared with controllers.py
CONSTANT = 0
RBF = 1
IRBF = 2
PI = 3
REM = 4
ARED = 5
DROPTAIL = 6

# relative slack used when deciding that the queue sits on the buffer limit
_FULL_EPS = 1e-12


@njit(cache=True, nogil=True)
def sat(u):
    if u >= 1.0:
        return 1.0
    if u < 0.0:
        return 0.0
    return u


@njit(cache=True, nogil=True)
def connections_at(t, seg_start, seg_n):
    # left-closed piecewise-constant lookup
    n = seg_n[0]
    for i in range(seg_start.shape[0]):
        if seg_start[i] <= t:
            n = seg_n[i]
        else:
            break
    return n


@njit(cache=True, nogil=True)
def rhs(w, q, wd, qd, ud, n_conn, C, Tp, B):
    """Projected vector field of the window/queue equations.

    ``wd, qd`` are the delayed window and queue, ``ud`` the delayed
    (already saturated) drop probability.
    """
    r = q / C + Tp
    rd = qd / C + Tp
    dw = 1.0 / r - 0.5 * w * (wd / rd) * ud
    dq = n_conn * w / r - C
    if q <= 0.0 and dq < 0.0:
        dq = 0.0
    if q >= B and dq > 0.0:
        dq = 0.0
    return dw, dq


@njit(cache=True, nogil=True)
def hermite(y0, d0, y1, d1, s, h):
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


@njit(cache=True, nogil=True)
def history_at(tq, n, dt, hw, hq, hdw, hdq, w0, q0):
    """Window and queue at time ``tq`` from the ring holding samples <= n.

    Samples up to ``n`` must already carry their derivatives. Times before
    zero return the constant pre-history.
    """
    if tq <= 0.0:
        return w0, q0
    cap = hw.shape[0]
    x = tq / dt
    i = int(math.floor(x))
    if i >= n:
        i = n - 1
        if i < 0:
            return w0, q0
    if i < n - cap + 1:
        raise ValueError("delay line underflow: lookup older than the stored horizon")
    s = x - i
    a = i % cap
    b = (i + 1) % cap
    w = hermite(hw[a], hdw[a], hw[b], hdw[b], s, dt)
    q = hermite(hq[a], hdq[a], hq[b], hdq[b], s, dt)
    return w, q


@njit(cache=True, nogil=True)
def control_at(tq, ctrl, ctrl_count, cperiod, u_init):
    if tq < 0.0:
        return u_init
    k = int(math.floor(tq / cperiod + 1e-9))
    if k >= ctrl_count:
        k = ctrl_count - 1
    if k < 0:
        return u_init
    cap = ctrl.shape[0]
    if k < ctrl_count - cap:
        raise ValueError("delay line underflow: control lookup older than the stored horizon")
    return ctrl[k % cap]


@njit(cache=True, nogil=True)
def overflow_fraction(w, q, n_conn, C, Tp, B):
    """Share of arrivals a full buffer has to discard (zero unless full)."""
    if q < B * (1.0 - _FULL_EPS):
        return 0.0
    lam = n_conn * w / (q / C + Tp)
    if lam <= C:
        return 0.0
    return 1.0 - C / lam


@njit(cache=True, nogil=True)
def eval_rhs(t, w, q, n, dt, hw, hq, hdw, hdq, w0, q0,
             ctrl, ctrl_count, cperiod, u_init,
             C, Tp, B, seg_start, seg_n):
    """Right-hand side at (t, w, q) with delayed arguments read at t - R(t)."""
    qc = min(max(q, 0.0), B)
    tq = t - (qc / C + Tp)
    wd, qd = history_at(tq, n, dt, hw, hq, hdw, hdq, w0, q0)
    n_del = connections_at(tq, seg_start, seg_n)
    p_ctl = sat(control_at(tq, ctrl, ctrl_count, cperiod, u_init))
    p_ovf = overflow_fraction(wd, qd, n_del, C, Tp, B)
    ud = 1.0 - (1.0 - p_ctl) * (1.0 - p_ovf)
    return rhs(w, q, wd, qd, ud, connections_at(t, seg_start, seg_n), C, Tp, B)


@njit(cache=True, nogil=True)
def seed_derivative(n, dt, hw, hq, hdw, hdq, w0, q0,
                    ctrl, ctrl_count, cperiod, u_init,
                    C, Tp, B, seg_start, seg_n):
    cap = hw.shape[0]
    a = n % cap
    k1w, k1q = eval_rhs(n * dt, hw[a], hq[a], n, dt, hw, hq, hdw, hdq, w0, q0,
                        ctrl, ctrl_count, cperiod, u_init, C, Tp, B, seg_start, seg_n)
    hdw[a] = k1w
    hdq[a] = k1q
    return k1w, k1q


@njit(cache=True, nogil=True)
def rk4_advance(n, dt, k1w, k1q, hw, hq, hdw, hdq, w0, q0,
                ctrl, ctrl_count, cperiod, u_init,
                C, Tp, B, seg_start, seg_n):
    """Advance sample n to n+1 (k1 already stored). Returns clamp excess."""
    cap = hw.shape[0]
    a = n % cap
    t = n * dt
    w = hw[a]
    q = hq[a]
    h2 = 0.5 * dt
    k2w, k2q = eval_rhs(t + h2, w + h2 * k1w, q + h2 * k1q, n, dt, hw, hq, hdw, hdq,
                        w0, q0, ctrl, ctrl_count, cperiod, u_init, C, Tp, B, seg_start, seg_n)
    k3w, k3q = eval_rhs(t + h2, w + h2 * k2w, q + h2 * k2q, n, dt, hw, hq, hdw, hdq,
                        w0, q0, ctrl, ctrl_count, cperiod, u_init, C, Tp, B, seg_start, seg_n)
    k4w, k4q = eval_rhs(t + dt, w + dt * k3w, q + dt * k3q, n, dt, hw, hq, hdw, hdq,
                        w0, q0, ctrl, ctrl_count, cperiod, u_init, C, Tp, B, seg_start, seg_n)
    w_new = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    q_new = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    excess = 0.0
    if q_new > B:
        excess = q_new - B
        q_new = B
    elif q_new < 0.0:
        q_new = 0.0
    if w_new < 0.0:
        w_new = 0.0
    b = (n + 1) % cap
    hw[b] = w_new
    hq[b] = q_new
    return excess


# ---------------------------------------------------------------- controllers

@njit(cache=True, nogil=True)
def rbf_raw(e, weights, centers, scales):
    s = 0.0
    for i in range(weights.shape[0]):
        d = e - centers[i]
        z = d / scales[i]
        s += weights[i] * math.exp(-z * z)
    return s


@njit(cache=True, nogil=True)
def law_tick(scheme, t, q, arrival, qd, C, B, period, par, weights, centers, scales, st):
    """One sampling instant of a controller; returns the saturated output."""
    e = q - qd
    if scheme == CONSTANT:
        return sat(par[0])
    if scheme == RBF:
        return sat(rbf_raw(e, weights, centers, scales))
    if scheme == IRBF:
        base = rbf_raw(e, weights, centers, scales)
        w_i = par[0]
        trial = st[0] + e * period
        raw = base + w_i * trial
        # conditional integration: hold the integral when it would push
        # further into saturation
        if (raw > 1.0 and w_i * e > 0.0) or (raw < 0.0 and w_i * e < 0.0):
            raw = base + w_i * st[0]
        else:
            st[0] = trial
        return sat(raw)
    if scheme == PI:
        p = sat(st[0] + par[0] * e - par[1] * st[1])
        st[0] = p
        st[1] = e
        return p
    if scheme == REM:
        price = st[0] + par[0] * ((q - par[2]) + (arrival - C) * period)
        if price < 0.0:
            price = 0.0
        st[0] = price
        return sat(1.0 - par[1] ** (-price))
    if scheme == ARED:
        min_th = par[0]
        max_th = par[1]
        # per-packet EWMA weight compounded over the packets served per sample
        wg = 1.0 - (1.0 - par[2]) ** (C * period)
        avg = (1.0 - wg) * st[0] + wg * q
        st[0] = avg
        if t >= st[2]:
            lo = min_th + 0.4 * (max_th - min_th)
            hi = min_th + 0.6 * (max_th - min_th)
            max_p = st[1]
            if avg > hi and max_p <= par[5]:
                max_p = min(max_p + par[6], par[5])
            elif avg < lo and max_p >= par[4]:
                max_p = max(max_p * par[7], par[4])
            st[1] = max_p
            st[2] = st[2] + par[3]
        max_p = st[1]
        if avg < min_th:
            return 0.0
        if avg < max_th:
            return sat(max_p * (avg - min_th) / (max_th - min_th))
        if par[8] > 0.0 and avg < 2.0 * max_th:
            return sat(max_p + (1.0 - max_p) * (avg - max_th) / max_th)
        return 1.0
    if scheme == DROPTAIL:
        return 1.0 if q >= par[0] else 0.0
    raise ValueError("unknown controller scheme code")


# ---------------------------------------------------------------- closed loop

@njit(cache=True, nogil=True)
def run_closed_loop(C, Tp, B, qd, seg_start, seg_n, n_steps, dt, w0, q0, u_init,
                    scheme, period, n_ticks, par, weights, centers, scales, st,
                    hist_cap, ctrl_cap, settle_tol, settle_window, err_cap=np.inf):
    """Integrate the loop over ``n_steps`` steps.

    The controller ticks at k * period for k = 0..n_ticks-1 and the trace is
    sampled at the same instants. Returns trace arrays and the integrals
    (abs error, served, arrived, dropped).

    With ``settle_tol > 0`` the run is cut short once queue, window and
    controller memory have moved less than ``settle_tol`` per tick for
    ``settle_window`` seconds with no load change ahead; the rest of the
    horizon is then filled with the fixed point.

    Once the absolute-error integral exceeds ``err_cap`` the run stops and
    returns abs_err = inf; the trace beyond that point is undefined.
    """
    hw = np.empty(hist_cap)
    hq = np.empty(hist_cap)
    hdw = np.zeros(hist_cap)
    hdq = np.zeros(hist_cap)
    ctrl = np.empty(ctrl_cap)
    hw[0] = w0
    hq[0] = q0

    tr_t = np.empty(n_ticks)
    tr_q = np.empty(n_ticks)
    tr_w = np.empty(n_ticks)
    tr_u = np.empty(n_ticks)
    tr_a = np.empty(n_ticks)

    abs_err = 0.0
    served = 0.0
    arrived = 0.0
    dropped = 0.0
    tick = 0
    prev_w = w0
    prev_q = q0
    prev_dw = 0.0
    prev_dq = 0.0
    t_end = n_steps * dt
    last_change = seg_start[seg_start.shape[0] - 1]
    stable_since = 0.0
    st_prev = st.copy()
    tq_prev = q0
    tw_prev = w0

    for n in range(n_steps + 1):
        k1w, k1q = seed_derivative(n, dt, hw, hq, hdw, hdq, w0, q0,
                                   ctrl, tick, period, u_init, C, Tp, B, seg_start, seg_n)
        a = n % hist_cap
        w = hw[a]
        q = hq[a]
        t = n * dt

        # controller ticks and trace samples falling in (t - dt, t]
        while tick < n_ticks and tick * period <= t + 1e-9 * dt:
            tt = tick * period
            if n == 0:
                wt = w
                qt = q
            else:
                s = (tt - (t - dt)) / dt
                if s < 0.0:
                    s = 0.0
                wt = hermite(prev_w, prev_dw, w, k1w, s, dt)
                qt = hermite(prev_q, prev_dq, q, k1q, s, dt)
                qt = min(max(qt, 0.0), B)
                wt = max(wt, 0.0)
            nc = connections_at(tt, seg_start, seg_n)
            lam = nc * wt / (qt / C + Tp)
            p = law_tick(scheme, tt, qt, lam, qd, C, B, period, par, weights, centers, scales, st)
            ctrl[tick % ctrl_cap] = p
            tr_t[tick] = tt
            tr_q[tick] = qt
            tr_w[tick] = wt
            tr_u[tick] = p
            tr_a[tick] = lam
            if settle_tol > 0.0:
                moved = abs(qt - tq_prev) > settle_tol or abs(wt - tw_prev) > settle_tol
                for j in range(st.shape[0]):
                    if abs(st[j] - st_prev[j]) > settle_tol:
                        moved = True
                    st_prev[j] = st[j]
                if moved or tt < last_change:
                    stable_since = tt
                tq_prev = qt
                tw_prev = wt
            tick += 1

        # trapezoid weights on the step grid
        wt_int = dt if 0 < n < n_steps else 0.5 * dt
        nc = connections_at(t, seg_start, seg_n)
        lam = nc * w / (q / C + Tp)
        p_ctl = control_at(t, ctrl, tick, period, u_init)
        p_ovf = overflow_fraction(w, q, nc, C, Tp, B)
        p_rt = 1.0 - (1.0 - p_ctl) * (1.0 - p_ovf)
        abs_err += wt_int * abs(q - qd)
        served += wt_int * (C if q > 0.0 else min(lam, C))
        arrived += wt_int * lam
        dropped += wt_int * p_rt * lam

        if n == n_steps:
            break
        if abs_err > err_cap:
            abs_err = np.inf
            break
        if settle_tol > 0.0 and t - stable_since >= settle_window and n > 0:
            # fixed point reached: extrapolate the integrands to the horizon
            rest = t_end - t - 0.5 * dt
            abs_err += rest * abs(q - qd)
            served += rest * (C if q > 0.0 else min(lam, C))
            arrived += rest * lam
            dropped += rest * p_rt * lam
            p_last = tr_u[tick - 1]
            while tick < n_ticks:
                tr_t[tick] = tick * period
                tr_q[tick] = q
                tr_w[tick] = w
                tr_u[tick] = p_last
                tr_a[tick] = lam
                tick += 1
            break
        excess = rk4_advance(n, dt, k1w, k1q, hw, hq, hdw, hdq, w0, q0,
                             ctrl, tick, period, u_init, C, Tp, B, seg_start, seg_n)
        dropped += excess
        prev_w = w
        prev_q = q
        prev_dw = k1w
        prev_dq = k1q

    return tr_t, tr_q, tr_w, tr_u, tr_a, abs_err, served, arrived, dropped
