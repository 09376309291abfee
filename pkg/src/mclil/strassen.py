"""Rescaled path functionals, the Strassen ball, and the LIL harness.

A path of partial sums S_0..S_n is rescaled into the piecewise-linear
function

    xi_n(t) = [S_k + (n t - k) g(X_k)] / sqrt(2 n loglog n),  k = floor(n t),

on [0, 1]. The limit ball is sqrt(trace(D)) * K with K the set of
absolutely continuous f with f(0) = 0 and integral of |f'|^2 at most 1;
`dist_to_K` measures the sup-norm distance of a sampled path function to
that ball by bisection over the deviation radius with a Dykstra feasibility
check (energy ellipsoid against a tube of per-point balls). `lil_run`
simulates one long path with O(checkpoints) memory and records the LIL
statistic, the sup of xi, the envelope defect and the ball distance at
geometric checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._util import lil_scale
from .chain import (FiniteKernel, Observable, StationaryDistribution,
                    SamplePath, rng_stream, walk_chunks)
from .errors import ChainError, NumericsError
from .poisson import poisson_limit

DIST_ABS_TOL = 1e-6
DIST_GAP_TOL = 1e-8
DIST_MAX_ITER = 10_000
LIL_DIST_TOL = 1e-4
XI_GRID = 1024
TRD_ZERO = 1e-300


@dataclass(frozen=True)
class PathFunction:
    """Piecewise-linear map [0,1] -> R^d sampled on a strictly increasing
    grid with t_0 = 0, t_m = 1 and value 0 at the origin."""

    grid: np.ndarray     # (m+1,)
    values: np.ndarray   # (m+1, d)

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DistResult:
    dist: float
    lower: float
    upper: float
    undecided: int        # feasibility checks that hit the iteration cap
    max_iters: int        # worst Dykstra iteration count observed


@dataclass(frozen=True)
class LILReport:
    checkpoints: np.ndarray       # (K,)
    stat: np.ndarray              # |S_n|/sqrt(2n loglog n), optionally centered
    running_max: np.ndarray
    sup_stat: np.ndarray          # sup_t |xi_n(t)| on the snapshot grid
    env_violation: np.ndarray     # max_t (|xi_n(t)| - sqrt(trD t))
    dist_K: np.ndarray | None
    snapshots: np.ndarray | None  # (K, m_grid+1, d)
    grid: np.ndarray              # (m_grid+1,)
    target: float                 # sqrt(trD)
    trD: float
    n_max: int
    rho: float
    seed: int
    stream: int
    centered: bool


@dataclass(frozen=True)
class ClusterProbe:
    """Sup-norm distances of the xi snapshots to the diagonal ramp
    t * sqrt(trD/d) * (1,..,1), whose endpoint attains the LIL constant."""

    checkpoints: np.ndarray
    distances: np.ndarray
    min_distance: float
    argmin_n: int


def path_function(grid, values) -> PathFunction:
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise ChainError("grid needs at least two points")
    if grid.shape[0] != values.shape[0]:
        raise ChainError("grid and values lengths differ")
    if grid[0] != 0.0 or abs(grid[-1] - 1.0) > 1e-12:
        raise ChainError("grid must run from 0 to 1")
    if np.any(np.diff(grid) <= 0):
        raise ChainError("grid must be strictly increasing")
    if np.abs(values[0]).max(initial=0.0) > 1e-12:
        raise ChainError("path function must start at 0")
    values = values.copy()
    values[0] = 0.0
    return PathFunction(grid=grid, values=values)


def uniform_path_function(values) -> PathFunction:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    m = values.shape[0] - 1
    return path_function(np.arange(m + 1) / m, values)


def energy(f: PathFunction) -> float:
    """Piecewise-linear energy sum |f_i - f_{i-1}|^2 / dt_i, which equals
    the integral of |f'|^2 for piecewise-linear f."""
    dv = np.diff(f.values, axis=0)
    dt = np.diff(f.grid)
    return float(np.sum(np.sum(dv * dv, axis=1) / dt))


def xi_path(path: SamplePath, obs: Observable, n: int,
            m_grid: int = XI_GRID) -> PathFunction:
    """Sample the rescaled interpolation xi_n on a uniform m_grid grid."""
    if n < 1 or n > path.n:
        raise ChainError(f"n={n} outside the simulated path of length {path.n}")
    if m_grid < 1:
        raise ChainError("m_grid must be >= 1")
    j = np.arange(m_grid + 1, dtype=np.int64)
    k = (n * j) // m_grid
    frac = ((n * j) % m_grid) / float(m_grid)
    scale = 1.0 / lil_scale(n)
    vals = (path.partial_sums[k] + frac[:, None] * obs.g[path.states[k]]) * scale
    return PathFunction(grid=j / float(m_grid), values=vals)


def envelope_check(f: PathFunction, trD: float) -> float:
    """Max over the grid of |f(t)| - sqrt(trD * t); <= 0 means f stays
    inside the parabolic envelope of the rescaled ball."""
    if trD < 0:
        raise ChainError("trD must be >= 0")
    norms = np.sqrt(np.sum(f.values * f.values, axis=1))
    return float(np.max(norms - np.sqrt(trD * f.grid)))


def dist_to_K_info(f: PathFunction, trD: float, tol: float = DIST_ABS_TOL,
                   gap_tol: float = DIST_GAP_TOL,
                   max_iter: int = DIST_MAX_ITER) -> DistResult:
    """Sup-norm distance of f to sqrt(trD) * K restricted to f's grid.

    Restriction is exact for piecewise-linear f: the deviation to any
    competitor is maximized at grid points, and linear interpolation
    minimizes energy between constrained points. Bisection runs on the
    deviation radius delta; each feasibility test is a Dykstra alternating
    projection between the energy ellipsoid and the product of per-point
    delta-balls around f.
    """
    if trD < 0:
        raise ChainError("trD must be >= 0")
    vals = f.values[1:]                       # free points; f_0 = h_0 = 0
    fn = np.sqrt(np.sum(vals * vals, axis=1))
    if trD <= TRD_ZERO:
        dist = float(fn.max(initial=0.0))
        return DistResult(dist=dist, lower=dist, upper=dist,
                          undecided=0, max_iters=0)
    e = energy(f)
    if e <= trD:
        return DistResult(dist=0.0, lower=0.0, upper=0.0,
                          undecided=0, max_iters=0)
    t = f.grid[1:]
    w = 1.0 / np.diff(f.grid)
    lo = _pairwise_lower_bound(vals, fn, t, trD)
    shrink = math.sqrt(trD / e)
    hi = float((1.0 - shrink) * fn.max(initial=0.0))
    hi = max(hi, lo)
    undecided = 0
    worst = 0
    guard = 0
    while hi - lo > tol and guard < 200:
        guard += 1
        mid = 0.5 * (hi + lo)
        # A run may stop once its gap falls below a quarter of the bracket
        # width: the in-set certificate then shrinks hi regardless of the
        # feasibility verdict, so the bracket contracts geometrically.
        early = max(gap_tol, 0.25 * (hi - lo))
        status, gap, iters, best_dev = _kernels.tube_feasible(
            vals, mid, w, trD, gap_tol=gap_tol, max_iter=max_iter,
            early_gap=early)
        worst = max(worst, int(iters))
        hi = min(hi, best_dev)          # rigorous upper bound, always
        if status == _kernels.FEASIBLE:
            hi = min(hi, mid)
        elif status != _kernels.NEARLY:
            # stalled (infeasible) or cap hit: treat mid as below the
            # distance; the hi certificate limits the damage if wrong
            if status == _kernels.UNDECIDED:
                undecided += 1
            lo = mid
        lo = min(lo, hi)
    return DistResult(dist=0.5 * (lo + hi), lower=lo, upper=hi,
                      undecided=undecided, max_iters=worst)


def dist_to_K(f: PathFunction, trD: float, tol: float = DIST_ABS_TOL,
              gap_tol: float = DIST_GAP_TOL,
              max_iter: int = DIST_MAX_ITER) -> float:
    return dist_to_K_info(f, trD, tol=tol, gap_tol=gap_tol,
                          max_iter=max_iter).dist


def _checkpoints(n_max: int, rho: float) -> np.ndarray:
    if rho <= 1.0:
        raise ChainError("rho must exceed 1")
    cps = []
    v = rho
    while True:
        n = int(math.floor(v))
        if n > n_max:
            break
        if n >= 2:
            cps.append(n)
        v *= rho
        if v > 4.0 * n_max:       # guard against float stagnation at rho ~ 1
            break
    cps.append(n_max)
    return np.unique(np.asarray(cps, dtype=np.int64))


def lil_run(kernel: FiniteKernel, pi: StationaryDistribution, obs: Observable,
            trD: float, n_max: int, rho: float = 1.05, seed: int = 0,
            stream: int = 0, m_grid: int = XI_GRID, centered: bool = False,
            compute_dist: bool = True, dist_tol: float = LIL_DIST_TOL,
            keep_snapshots: bool = True, init_state: int | None = None,
            chunk: int = 1 << 20) -> LILReport:
    """Single long-path LIL experiment with geometric checkpoints.

    The path is simulated incrementally; only the values of S and g(X) at
    the indices needed for the xi snapshots are retained (about
    m_grid * #checkpoints entries), never the full path. The `centered`
    option subtracts the exact conditional mean h(X_0) - (P^n h)(X_0) from
    S_n in the checkpoint statistic.
    """
    if n_max < 2:
        raise ChainError("n_max must be >= 2")
    if m_grid < 1:
        raise ChainError("m_grid must be >= 1")
    if trD < 0:
        raise ChainError("trD must be >= 0")
    d = obs.d
    cps = _checkpoints(n_max, rho)
    j = np.arange(m_grid + 1, dtype=np.int64)
    need = np.unique(np.concatenate([(int(n) * j) // m_grid for n in cps]))

    rng = rng_stream(seed, stream)
    u0 = rng.random()
    if init_state is None:
        x0 = int(np.searchsorted(pi.cum, u0, side="right"))
    else:
        if not 0 <= init_state < kernel.n_states:
            raise ChainError(f"init_state {init_state} out of range")
        x0 = int(init_state)

    rec_S = np.zeros((need.shape[0], d))
    rec_g = np.zeros((need.shape[0], d))
    ptr = 0
    S_base = np.zeros(d)
    last_state = x0
    for k0, states in walk_chunks(kernel, rng, n_max, x0, chunk=chunk):
        steps = states.shape[0] - 1
        csum = np.cumsum(obs.g[states[:-1]], axis=0)
        hi = int(np.searchsorted(need, k0 + steps))
        if hi > ptr:
            rel = need[ptr:hi] - k0
            part = np.zeros((hi - ptr, d))
            nz = rel > 0
            part[nz] = csum[rel[nz] - 1]
            rec_S[ptr:hi] = S_base + part
            rec_g[ptr:hi] = obs.g[states[rel]]
            ptr = hi
        S_base = S_base + csum[-1]
        last_state = int(states[-1])
    if ptr < need.shape[0]:          # the final index n_max
        rec_S[ptr] = S_base
        rec_g[ptr] = obs.g[last_state]
        ptr += 1

    centered_corr = np.zeros((cps.shape[0], d))
    if centered:
        h = poisson_limit(kernel, pi, obs.g, crosscheck=False)
        sq = [kernel.P]
        while (1 << len(sq)) <= n_max:
            sq.append(sq[-1] @ sq[-1])
        for i, n in enumerate(cps):
            v = h
            bits = int(n)
            idx = 0
            while bits:
                if bits & 1:
                    v = sq[idx] @ v
                bits >>= 1
                idx += 1
            centered_corr[i] = h[x0] - v[x0]

    K = cps.shape[0]
    stat = np.zeros(K)
    sup_stat = np.zeros(K)
    env = np.zeros(K)
    dist = np.zeros(K) if compute_dist else None
    snaps = np.zeros((K, m_grid + 1, d)) if keep_snapshots else None
    grid = j / float(m_grid)
    for i, n in enumerate(cps):
        n = int(n)
        scale = 1.0 / lil_scale(n)
        k_idx = (n * j) // m_grid
        frac = ((n * j) % m_grid) / float(m_grid)
        pos = np.searchsorted(need, k_idx)
        snap = (rec_S[pos] + frac[:, None] * rec_g[pos]) * scale
        norms = np.sqrt(np.sum(snap * snap, axis=1))
        s_n = rec_S[int(np.searchsorted(need, n))] - centered_corr[i]
        stat[i] = math.sqrt(float(np.sum(s_n * s_n))) * scale
        sup_stat[i] = float(norms.max())
        env[i] = float(np.max(norms - np.sqrt(trD * grid)))
        if snaps is not None:
            snaps[i] = snap
        if compute_dist:
            pf = PathFunction(grid=grid, values=snap)
            dist[i] = dist_to_K(pf, trD, tol=dist_tol)
    return LILReport(checkpoints=cps, stat=stat,
                     running_max=np.maximum.accumulate(stat),
                     sup_stat=sup_stat, env_violation=env, dist_K=dist,
                     snapshots=snaps, grid=grid,
                     target=math.sqrt(trD), trD=float(trD), n_max=int(n_max),
                     rho=float(rho), seed=int(seed), stream=int(stream),
                     centered=bool(centered))


def cluster_probe(report: LILReport, trD: float, d: int) -> ClusterProbe:
    """Minimal sup-norm distance of the recorded xi snapshots to the
    diagonal ramp; recurrent proximity is the cluster-point signature."""
    if report.snapshots is None:
        raise ChainError("lil_run must keep snapshots for cluster_probe")
    ramp = report.grid[:, None] * math.sqrt(trD / d) * np.ones(d)[None, :]
    diff = report.snapshots - ramp[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=2)).max(axis=1)
    i = int(np.argmin(dists))
    return ClusterProbe(checkpoints=report.checkpoints, distances=dists,
                        min_distance=float(dists[i]),
                        argmin_n=int(report.checkpoints[i]))
