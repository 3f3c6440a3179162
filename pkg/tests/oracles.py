"""Reference computations written independently of the package code."""

import math


def dde_exact(t: float, tau: float) -> float:
    """x' = -x(t - tau) with x = 1 on [-tau, 0], solved by the method of steps.

    On [(n-1) tau, n tau] the solution is sum_{k=0}^{n} (-1)^k (t - (k-1) tau)^k / k!.
    """
    if t <= 0:
        return 1.0
    n = int(math.floor(t / tau)) + 1
    return math.fsum((-1) ** k * (t - (k - 1) * tau) ** k / math.factorial(k) for k in range(n + 1))


def gaussian_sum(e, weights, centers, sigmas):
    """sum_i w_i exp(-((e - c_i) / sigma_i)^2), accumulated exactly."""
    terms = [w * math.exp(-(((e - c) / s) ** 2)) for w, c, s in zip(weights, centers, sigmas)]
    return math.fsum(terms)


def fixed_point(n_conn: float, capacity: float, prop_delay: float, queue: float):
    """(w*, p*) that make both fluid equations stationary at ``queue``."""
    r = queue / capacity + prop_delay
    w = r * capacity / n_conn
    return w, 2.0 / (w * w)
