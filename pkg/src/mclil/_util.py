"""Small shared numeric helpers."""

from __future__ import annotations

import math

import numpy as np

# Threshold of the clamped double logarithm: loglog(x) = 1 for x <= e^e.
LOGLOG_KNEE = math.exp(math.e)


def loglog(x: float) -> float:
    """Double logarithm clamped to 1 below e^e, so sqrt(2n loglog n) is
    well defined for every n >= 1."""
    if x <= 0:
        raise ValueError("loglog requires a positive argument")
    if x <= LOGLOG_KNEE:
        return 1.0
    return math.log(math.log(x))


def lil_scale(n: int) -> float:
    """The normalization sqrt(2 n loglog n)."""
    return math.sqrt(2.0 * n * loglog(float(n)))


def l2_pi(v: np.ndarray, pi: np.ndarray) -> float:
    """L2 norm of a state function v (n_states, d) under the weight vector pi."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    return float(np.sqrt(np.sum(pi @ (v * v))))


def l2_pair(v: np.ndarray, pair_measure: np.ndarray) -> float:
    """L2 norm of a pair function v (n, n, d) under a pair measure (n, n)."""
    return float(np.sqrt(np.sum(pair_measure[:, :, None] * v * v)))


def dyadic_grid(n_max: int, start: int = 2) -> np.ndarray:
    """Powers of two in [start, n_max]."""
    if n_max < start:
        raise ValueError(f"n_max={n_max} below grid start {start}")
    ks = []
    n = start
    while n <= n_max:
        ks.append(n)
        n *= 2
    return np.asarray(ks, dtype=np.int64)


def loglog_slope(ns: np.ndarray, values: np.ndarray, floor: float = 1e-300) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.maximum(np.asarray(values, dtype=float), floor))
    x = x - x.mean()
    denom = float(np.sum(x * x))
    if denom == 0.0:
        return 0.0
    return float(np.sum(x * (y - y.mean())) / denom)
