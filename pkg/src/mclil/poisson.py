"""Resolvent equation, martingale kernel, and the resolvent decomposition.

For an observable g and transition operator Q (realized by the matrix P),
the resolvent equation (1+eps) h = Q h + g always has a unique solution
h_eps; its eps -> 0 limit on the centered subspace solves the Poisson
equation (I - Q) h = g and is computed here through the fundamental matrix
(I - P + Pi)^{-1} with Pi the rank-one projector onto the stationary law.

The pair kernel H(x0, x1) = h(x1) - (Qh)(x0) turns partial sums into a
martingale plus controlled remainders:

    sum_{i=1..k} g(X_i) = M_k(eps) + eps * sum_{i=1..k} h_eps(X_i) + R_k(eps),
    R_k(eps) = Qh_eps(X_0) - Qh_eps(X_k),

with M_k(eps) = sum_{i=1..k} H_eps(X_{i-1}, X_i). The sums here run from
i = 1 so that each increment pairs (X_{i-1}, X_i) with the filtration of the
chain and the remainder telescopes exactly; SamplePath partial sums (which
start the sum at i = 0) are related by S_{k+1} - g(X_0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import dyadic_grid, l2_pair, l2_pi, loglog_slope
from .chain import FiniteKernel, Observable, SamplePath, StationaryDistribution
from .errors import ChainError, NumericsError

RESOLVENT_TOL = 1e-10
LIMIT_CROSSCHECK_EPS = 1e-6
LIMIT_CROSSCHECK_RTOL = 1e-4
MARTINGALE_TOL = 1e-10
ALPHA_MARGIN = 0.05


@dataclass(frozen=True)
class ResolventSolution:
    epsilon: float
    h: np.ndarray          # (m, d)
    residual: float        # max-norm of (1+eps) h - P h - g


@dataclass(frozen=True)
class MartingaleKernel:
    """Pair kernel H(x0, x1) = h(x1) - (Ph)(x0) and the pair measure."""

    H: np.ndarray             # (m, m, d)
    pair_measure: np.ndarray  # (m, m), pi(x0) * P(x0, x1)
    h: np.ndarray             # (m, d) underlying Poisson solution
    Ph: np.ndarray            # (m, d)

    def increments(self, states: np.ndarray) -> np.ndarray:
        """m_i = H(X_i, X_{i+1}) along a state path, shape (len-1, d)."""
        return self.H[states[:-1], states[1:]]


@dataclass(frozen=True)
class Decomposition:
    """Per-step arrays of the resolvent decomposition along one path.

    All arrays have shape (n+1, d) and index k; S[k] = sum_{i=1..k} g(X_i).
    The identity S = M_eps + eps_S_h + R_eps holds at every k; the limit
    split is S = M_lim + R_lim.
    """

    epsilon: float
    S: np.ndarray
    M_eps: np.ndarray
    eps_S_h: np.ndarray
    R_eps: np.ndarray
    M_lim: np.ndarray
    R_lim: np.ndarray


@dataclass(frozen=True)
class MWFit:
    """Growth fit of V_n = ||sum_{i<n} Q^i g||_{L2(pi)} on a dyadic grid."""

    n_grid: np.ndarray
    V: np.ndarray
    alpha_hat: float
    alpha_ok: bool
    degenerate: bool


@dataclass(frozen=True)
class EpsConvergence:
    eps_grid: np.ndarray
    h_err: np.ndarray          # ||h_eps - h||_{L2(pi)}
    H_err: np.ndarray          # ||H_eps - H||_{L2(pair)}
    h_norm_scaled: np.ndarray  # ||h_eps||_2 * eps^alpha_hat
    alpha_hat: float


def solve_resolvent(kernel: FiniteKernel, g: np.ndarray, epsilon: float,
                    tol: float = RESOLVENT_TOL) -> ResolventSolution:
    """Solve ((1+eps) I - P) h = g by a dense solve with one refinement pass."""
    if epsilon <= 0:
        raise ChainError("epsilon must be positive")
    g = np.atleast_2d(np.asarray(g, dtype=float))
    m = kernel.n_states
    A = (1.0 + epsilon) * np.eye(m) - kernel.P
    h = np.linalg.solve(A, g)
    scale = tol * (1.0 + float(np.abs(g).max(initial=0.0)))
    resid = g - ((1.0 + epsilon) * h - kernel.P @ h)
    if float(np.abs(resid).max(initial=0.0)) > scale:
        h = h + np.linalg.solve(A, resid)
        resid = g - ((1.0 + epsilon) * h - kernel.P @ h)
    residual = float(np.abs(resid).max(initial=0.0))
    if residual > scale:
        raise NumericsError(f"resolvent residual {residual:.3e} exceeds {scale:.3e}")
    return ResolventSolution(epsilon=float(epsilon), h=h, residual=residual)


def resolvent_series(kernel: FiniteKernel, g: np.ndarray, epsilon: float,
                     n_terms: int) -> tuple[np.ndarray, float]:
    """Truncated series sum_{n=1..N} (1+eps)^{-n} P^{n-1} g.

    Kept as an independent cross-check of the linear solve; returns the
    partial sum and the geometric tail bound max|g| * (1+eps)^{-N} / eps.
    """
    if epsilon <= 0:
        raise ChainError("epsilon must be positive")
    g = np.atleast_2d(np.asarray(g, dtype=float))
    acc = np.zeros_like(g)
    term = g.copy()
    r = 1.0 / (1.0 + epsilon)
    fac = r
    for _ in range(n_terms):
        acc += fac * term
        term = kernel.P @ term
        fac *= r
    tail = float(np.abs(g).max(initial=0.0)) * r ** n_terms / epsilon
    return acc, tail


def poisson_limit(kernel: FiniteKernel, pi: StationaryDistribution,
                  g: np.ndarray, crosscheck: bool = True) -> np.ndarray:
    """Limit of h_eps as eps -> 0: the fundamental-matrix solve.

    Solves (I - P + Pi) h = g where Pi = 1 pi^T; for centered g this gives
    (I - P) h = g with pi-mean zero. Cross-checked against the resolvent
    solution at eps = 1e-6.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    mean = pi.pi @ g
    if np.abs(mean).max(initial=0.0) > 1e-9 * (1.0 + np.abs(g).max(initial=0.0)):
        raise ChainError("poisson_limit requires a centered observable")
    m = kernel.n_states
    Z = np.eye(m) - kernel.P + np.outer(np.ones(m), pi.pi)
    h = np.linalg.solve(Z, g)
    if crosscheck:
        h_eps = solve_resolvent(kernel, g, LIMIT_CROSSCHECK_EPS).h
        scale = l2_pi(h, pi.pi)
        err = l2_pi(h_eps - h, pi.pi)
        if err > LIMIT_CROSSCHECK_RTOL * scale + 1e-12:
            raise NumericsError(
                f"resolvent continuation at eps={LIMIT_CROSSCHECK_EPS} deviates "
                f"from the fundamental-matrix solution by {err:.3e}")
    return h


def martingale_kernel(kernel: FiniteKernel, pi: StationaryDistribution,
                      h: np.ndarray, tol: float = MARTINGALE_TOL) -> MartingaleKernel:
    """Build H(x0, x1) = h(x1) - (Ph)(x0) and verify the martingale property."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    Ph = kernel.P @ h
    H = h[None, :, :] - Ph[:, None, :]
    cond_mean = np.einsum("xy,xyi->xi", kernel.P, H)
    hmax = float(np.abs(H).max(initial=0.0))
    if float(np.abs(cond_mean).max(initial=0.0)) > tol * max(hmax, 1.0):
        raise NumericsError("martingale-difference property violated")
    pair = pi.pi[:, None] * kernel.P
    return MartingaleKernel(H=H, pair_measure=pair, h=h, Ph=Ph)


def martingale_defect(mk: MartingaleKernel, kernel: FiniteKernel) -> float:
    """max_x0 |sum_x1 P(x0,x1) H(x0,x1)|, which should vanish."""
    cond = np.einsum("xy,xyi->xi", kernel.P, mk.H)
    return float(np.abs(cond).max(initial=0.0))


def decompose_path(path: SamplePath, kernel: FiniteKernel,
                   pi: StationaryDistribution, g: np.ndarray,
                   epsilon: float) -> Decomposition:
    """Decompose the partial sums of one path at resolvent level eps and in
    the limit (see module docstring for the exact identity)."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    res = solve_resolvent(kernel, g, epsilon)
    h_eps = res.h
    Ph_eps = kernel.P @ h_eps
    h_lim = poisson_limit(kernel, pi, g, crosscheck=False)
    mk = martingale_kernel(kernel, pi, h_lim)

    s = path.states
    n = path.n
    d = g.shape[1]
    x0, x1 = s[:-1], s[1:]

    def cum(increments: np.ndarray) -> np.ndarray:
        out = np.zeros((n + 1, d))
        np.cumsum(increments, axis=0, out=out[1:])
        return out

    S = cum(g[x1])
    M_eps = cum(h_eps[x1] - Ph_eps[x0])
    eps_S_h = epsilon * cum(h_eps[x1])
    R_eps = Ph_eps[s[0]][None, :] - Ph_eps[s]
    M_lim = cum(mk.H[x0, x1])
    R_lim = S - M_lim
    return Decomposition(epsilon=float(epsilon), S=S, M_eps=M_eps,
                         eps_S_h=eps_S_h, R_eps=R_eps, M_lim=M_lim, R_lim=R_lim)


def decomposition_residual(dec: Decomposition) -> float:
    """Max-norm defect of S = M_eps + eps_S_h + R_eps over all k."""
    resid = dec.S - (dec.M_eps + dec.eps_S_h + dec.R_eps)
    return float(np.abs(resid).max(initial=0.0))


def mw_fit(kernel: FiniteKernel, pi: StationaryDistribution, g: np.ndarray,
           n_max: int = 1 << 14, margin: float = ALPHA_MARGIN) -> MWFit:
    """Exact V_n = ||sum_{i<n} Q^i g||_{L2(pi)} on {1, 2, 4, ..., n_max} and
    the fitted log-log growth exponent over the dyadic part of the grid.

    Bounded V_n fits a slope near zero, which certifies the moment condition
    for every positive exponent; alpha_ok applies the documented margin.
    """
    if n_max < 8:
        raise ChainError("n_max must be >= 8")
    g = np.atleast_2d(np.asarray(g, dtype=float))
    grid = np.concatenate(([1], dyadic_grid(n_max)))
    V = np.zeros(grid.shape[0])
    u = g.copy()                     # u_n = sum_{i<n} Q^i g, u_1 = g
    V[0] = l2_pi(u, pi.pi)
    idx = 1
    n = 1
    while idx < grid.shape[0]:
        target = int(grid[idx])
        while n < target:
            u = g + kernel.P @ u
            n += 1
        V[idx] = l2_pi(u, pi.pi)
        idx += 1
    degenerate = bool(V.max(initial=0.0) < 1e-15)
    if degenerate:
        alpha_hat = 0.0
    else:
        alpha_hat = loglog_slope(grid[1:], V[1:])
    return MWFit(n_grid=grid, V=V, alpha_hat=alpha_hat,
                 alpha_ok=bool(alpha_hat < 0.5 - margin), degenerate=degenerate)


def h_eps_convergence(kernel: FiniteKernel, pi: StationaryDistribution,
                      g: np.ndarray, eps_grid) -> EpsConvergence:
    """Table of resolvent-to-limit errors along a decreasing eps grid.

    Reports ||h_eps - h|| in L2(pi), ||H_eps - H|| in L2 of the pair
    measure, and ||h_eps||_2 * eps^alpha_hat (bounded when the moment
    condition holds with exponent alpha_hat).
    """
    eps_grid = np.asarray(list(eps_grid), dtype=float)
    if eps_grid.size == 0 or np.any(eps_grid <= 0):
        raise ChainError("eps grid must contain positive values")
    if np.any(np.diff(eps_grid) >= 0):
        raise ChainError("eps grid must be strictly decreasing")
    g = np.atleast_2d(np.asarray(g, dtype=float))
    h = poisson_limit(kernel, pi, g, crosscheck=False)
    mk = martingale_kernel(kernel, pi, h)
    alpha_hat = mw_fit(kernel, pi, g).alpha_hat
    h_err = np.zeros_like(eps_grid)
    H_err = np.zeros_like(eps_grid)
    h_norm_scaled = np.zeros_like(eps_grid)
    for i, eps in enumerate(eps_grid):
        he = solve_resolvent(kernel, g, eps).h
        Phe = kernel.P @ he
        He = he[None, :, :] - Phe[:, None, :]
        h_err[i] = l2_pi(he - h, pi.pi)
        H_err[i] = l2_pair(He - mk.H, mk.pair_measure)
        h_norm_scaled[i] = l2_pi(he, pi.pi) * eps ** max(alpha_hat, 0.0)
    return EpsConvergence(eps_grid=eps_grid, h_err=h_err, H_err=H_err,
                          h_norm_scaled=h_norm_scaled, alpha_hat=alpha_hat)
