"""Fractional powers of (I - Q) and remainder-term diagnostics.

(I - Q)^alpha is realized by the binomial series sum_k c_k Q^k with
c_0 = 1 and the stable recurrence c_{k+1} = c_k (k - alpha)/(k + 1); the
coefficients beyond k = 0 share one sign, so the absolute coefficient tail
equals the running partial sum and bounds the truncation error of the
operator applied to any sup-norm-bounded input (Q contracts the sup norm).

The remainder diagnostics track R_k = sum_{i=1..k} [g(X_i) - H(X_{i-1}, X_i)]
(which telescopes to (Ph)(X_0) - (Ph)(X_k) for the limit kernel, hence stays
bounded on finite chains) and the rescaled maxima of martingale increments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import dyadic_grid, l2_pi, lil_scale, loglog_slope
from .chain import (FiniteKernel, Observable, SamplePath,
                    StationaryDistribution, simulate)
from .errors import ChainError
from .poisson import MartingaleKernel, MWFit, martingale_kernel, mw_fit, poisson_limit

COEFF_TAIL_TOL = 1e-8
COEFF_K_MAX = 100_000


@dataclass(frozen=True)
class FracOperator:
    """Truncated binomial expansion of (I - Q)^alpha over a fixed kernel."""

    alpha: float
    coeffs: np.ndarray     # c_0..c_K
    coeff_tail: float      # |sum_{k>K} c_k|
    kernel: FiniteKernel


@dataclass(frozen=True)
class FracApply:
    value: np.ndarray      # (m, d)
    n_terms: int           # K (series truncated after Q^K)
    coeff_tail: float
    tail_bound: float      # coeff_tail * max|u|


@dataclass(frozen=True)
class FracMembership:
    beta: float
    n_grid: np.ndarray
    values: np.ndarray     # n^(beta-1) * ||sum_{k=1..n} Q^k g||_{L2(pi)}
    sup: float
    bounded: bool
    alpha_upper: float     # membership certified for all alpha < alpha_upper


@dataclass(frozen=True)
class RemainderDiagnostics:
    n_grid: np.ndarray
    E_R2: np.ndarray            # Monte Carlo E|R_n|^2
    E_R2_stderr: np.ndarray
    beta_hat: float             # log-log growth exponent of E|R_n|^2
    alpha_hat: float            # from the moment-condition fit
    consistent: bool            # beta_hat <= 2*alpha_hat + 0.1
    max_R_stat: np.ndarray      # mean of max_{k<=n}|R_k| / sqrt(2n loglog n)
    max_m_stat: np.ndarray      # mean of max_{k<n}|m_k| / sqrt(2n loglog n)
    n_paths: int


def frac_coefficients(alpha: float, tail_tol: float = COEFF_TAIL_TOL,
                      k_max: int = COEFF_K_MAX) -> tuple[np.ndarray, float]:
    """Binomial coefficients of (1 - x)^alpha up to the first K with
    coefficient tail <= tail_tol (or K = k_max). Returns (c_0..c_K, tail)."""
    if not 0.0 < alpha <= 1.0:
        raise ChainError("alpha must lie in (0, 1]")
    coeffs = [1.0]
    partial = 1.0
    c = 1.0
    k = 0
    while k < k_max:
        c = c * (k - alpha) / (k + 1.0)
        coeffs.append(c)
        partial += c
        k += 1
        if abs(partial) <= tail_tol:
            break
    return np.asarray(coeffs), abs(partial)


def frac_operator(kernel: FiniteKernel, alpha: float,
                  tail_tol: float = COEFF_TAIL_TOL,
                  k_max: int = COEFF_K_MAX) -> FracOperator:
    coeffs, tail = frac_coefficients(alpha, tail_tol, k_max)
    return FracOperator(alpha=float(alpha), coeffs=coeffs, coeff_tail=tail,
                        kernel=kernel)


def frac_power_apply(kernel: FiniteKernel, alpha: float, u: np.ndarray,
                     K: int | None = None, tail_tol: float = COEFF_TAIL_TOL,
                     k_max: int = COEFF_K_MAX) -> FracApply:
    """Apply (I - Q)^alpha to u by the truncated binomial series.

    With K given, exactly K+1 terms c_0..c_K are used; otherwise truncation
    follows the coefficient-tail rule. alpha = 1 terminates after two terms
    and returns (I - Q) u exactly. The truncation tail is always reported.
    """
    if not 0.0 < alpha <= 1.0:
        raise ChainError("alpha must lie in (0, 1]")
    if K is not None and K < 1:
        raise ChainError("K must be >= 1")
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if K is not None:
        coeffs = np.empty(K + 1)
        coeffs[0] = 1.0
        c = 1.0
        for k in range(K):
            c = c * (k - alpha) / (k + 1.0)
            coeffs[k + 1] = c
        tail = abs(float(coeffs.sum()))
    else:
        coeffs, tail = frac_coefficients(alpha, tail_tol, k_max)
    acc = coeffs[0] * u
    qk = u
    for k in range(1, coeffs.shape[0]):
        qk = kernel.P @ qk
        if coeffs[k] != 0.0:
            acc = acc + coeffs[k] * qk
    umax = float(np.abs(u).max(initial=0.0))
    return FracApply(value=acc, n_terms=coeffs.shape[0] - 1,
                     coeff_tail=tail, tail_bound=tail * umax)


def frac_membership(kernel: FiniteKernel, pi: StationaryDistribution,
                    g: np.ndarray, beta: float,
                    n_max: int = 1 << 14) -> FracMembership:
    """Exact sup over dyadic n of n^(beta-1) ||sum_{k=1..n} Q^k g||_{L2(pi)}.

    A bounded sequence certifies membership of g in (I-Q)^alpha L2 for every
    alpha < beta; the verdict fits the log-log trend of the computed values
    (slope <= 0.05 counts as bounded).
    """
    if not 0.0 < beta < 1.0:
        raise ChainError("beta must lie in (0, 1)")
    g = np.atleast_2d(np.asarray(g, dtype=float))
    grid = np.concatenate(([1], dyadic_grid(n_max)))
    values = np.zeros(grid.shape[0])
    w = kernel.P @ g               # w_n = sum_{k=1..n} Q^k g
    values[0] = l2_pi(w, pi.pi)
    idx = 1
    n = 1
    while idx < grid.shape[0]:
        target = int(grid[idx])
        while n < target:
            w = kernel.P @ (g + w)
            n += 1
        values[idx] = l2_pi(w, pi.pi)
        idx += 1
    values = grid.astype(float) ** (beta - 1.0) * values
    sup = float(values.max(initial=0.0))
    if sup < 1e-15:
        bounded = True
    else:
        bounded = loglog_slope(grid, values) <= 0.05
    return FracMembership(beta=float(beta), n_grid=grid, values=values,
                          sup=sup, bounded=bounded, alpha_upper=float(beta))


def remainder_path(states: np.ndarray, g: np.ndarray,
                   mk: MartingaleKernel) -> np.ndarray:
    """R_k = sum_{i=1..k} [g(X_i) - H(X_{i-1}, X_i)] along one path, (n+1, d)."""
    x0, x1 = states[:-1], states[1:]
    inc = g[x1] - mk.H[x0, x1]
    out = np.zeros((states.shape[0], g.shape[1]))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def remainder_growth(kernel: FiniteKernel, pi: StationaryDistribution,
                     obs: Observable, n_max: int = 1 << 14,
                     n_paths: int = 200, seed: int = 0) -> RemainderDiagnostics:
    """Monte Carlo growth diagnostics of the remainder over an ensemble.

    Each replica r simulates stream (seed, r); E|R_n|^2 is estimated on the
    dyadic grid together with the rescaled running maxima of |R_k| and of
    the martingale increments |m_k|.
    """
    if n_paths < 1:
        raise ChainError("need at least one path")
    g = obs.g
    h = poisson_limit(kernel, pi, g, crosscheck=False)
    mk = martingale_kernel(kernel, pi, h)
    fit = mw_fit(kernel, pi, g, n_max=max(n_max, 8))
    grid = dyadic_grid(n_max, start=4)
    K = grid.shape[0]
    R2 = np.zeros((n_paths, K))
    maxR = np.zeros((n_paths, K))
    maxm = np.zeros((n_paths, K))
    scales = np.array([lil_scale(int(n)) for n in grid])
    for r in range(n_paths):
        path = simulate(kernel, pi, obs, n_max, seed, stream=r)
        R = remainder_path(path.states, g, mk)
        normR = np.sqrt(np.sum(R * R, axis=1))
        run_max_R = np.maximum.accumulate(normR)
        m_inc = mk.increments(path.states)
        norm_m = np.sqrt(np.sum(m_inc * m_inc, axis=1))
        run_max_m = np.maximum.accumulate(norm_m)
        R2[r] = normR[grid] ** 2
        maxR[r] = run_max_R[grid] / scales
        maxm[r] = run_max_m[grid - 1] / scales
    E_R2 = R2.mean(axis=0)
    stderr = R2.std(axis=0, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.full(K, np.nan)
    degenerate = bool(E_R2.max(initial=0.0) < 1e-15)
    beta_hat = 0.0 if degenerate else loglog_slope(grid, E_R2)
    return RemainderDiagnostics(
        n_grid=grid, E_R2=E_R2, E_R2_stderr=stderr, beta_hat=beta_hat,
        alpha_hat=fit.alpha_hat,
        consistent=bool(beta_hat <= 2.0 * fit.alpha_hat + 0.1),
        max_R_stat=maxR.mean(axis=0), max_m_stat=maxm.mean(axis=0),
        n_paths=n_paths)


def max_increment_stat(path: SamplePath, mk: MartingaleKernel) -> tuple[np.ndarray, np.ndarray]:
    """Series max_{k<n} |m_k| / sqrt(2n loglog n) at dyadic checkpoints.

    Bounded increments make the statistic fall like 1/sqrt(n loglog n); the
    explicit envelope is max|H| over pairs divided by the same scale.
    """
    if path.n < 16:
        raise ChainError("path length must be >= 16")
    m_inc = mk.increments(path.states)
    norm_m = np.sqrt(np.sum(m_inc * m_inc, axis=1))
    run_max = np.maximum.accumulate(norm_m)
    grid = dyadic_grid(path.n, start=4)
    scales = np.array([lil_scale(int(n)) for n in grid])
    return grid, run_max[grid - 1] / scales
