"""Finite-state ergodic Markov chains with centered vector observables.

A chain is loaded from a JSON-style document (see ``load_chain``), validated
(row-stochastic, irreducible, observable centered under the stationary law),
and simulated with a counter-based RNG so parallel replicas draw from
independent, order-independent streams.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._util import l2_pi
from .errors import ChainError, NumericsError

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
CENTERED_TOL = 1e-10


@dataclass(frozen=True)
class FiniteKernel:
    """Row-stochastic transition matrix over labeled states."""

    states: tuple[str, ...]
    P: np.ndarray        # (m, m)
    cum: np.ndarray      # row-cumulative P with cum[:, -1] == 1.0

    @property
    def n_states(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray       # (m,)
    cum: np.ndarray      # cumulative pi with cum[-1] == 1.0


@dataclass(frozen=True)
class Observable:
    """Vector observable on the state space, centered under pi."""

    g: np.ndarray        # (m, d)
    d: int


@dataclass(frozen=True)
class SamplePath:
    """A seeded realization X_0..X_n with cached partial sums.

    partial_sums[k] = sum_{i<k} g(X_i); S_0 = 0.
    """

    seed: int
    stream: int
    n: int
    states: np.ndarray         # (n+1,) int64
    partial_sums: np.ndarray   # (n+1, d)


@dataclass(frozen=True)
class LoadedChain:
    kernel: FiniteKernel
    pi: StationaryDistribution
    observable: Observable
    center_shift: np.ndarray | None   # pi-mean subtracted from g, or None


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _strongly_connected(P: np.ndarray) -> bool:
    m = P.shape[0]
    adj = P > 0.0

    def reachable(mat) -> bool:
        seen = np.zeros(m, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in np.nonzero(mat[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
        return bool(seen.all())

    return reachable(adj) and reachable(adj.T)


def validate_kernel(states, P) -> FiniteKernel:
    """Build a FiniteKernel, raising ChainError on any violated invariant."""
    states = tuple(str(s) for s in states)
    if len(states) == 0:
        raise ChainError("empty state list")
    if len(set(states)) != len(states):
        raise ChainError("duplicate state labels")
    P = np.asarray(P, dtype=float)
    m = len(states)
    if P.shape != (m, m):
        raise ChainError(f"transition matrix shape {P.shape} != ({m}, {m})")
    if not np.all(np.isfinite(P)):
        raise ChainError("non-finite transition probability")
    for i in range(m):
        row = P[i]
        if np.any(row < 0.0) or np.any(row > 1.0):
            raise ChainError(f"non-stochastic row {i}: entry outside [0, 1]")
        if abs(row.sum() - 1.0) > ROW_SUM_TOL:
            raise ChainError(f"non-stochastic row {i}: sum {row.sum()!r} != 1")
    if not _strongly_connected(P):
        raise ChainError("reducible chain: transition graph is not strongly connected")
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    return FiniteKernel(states=states, P=_freeze(P), cum=_freeze(cum))


def stationary(kernel: FiniteKernel, tol: float = STATIONARY_TOL) -> StationaryDistribution:
    """Stationary distribution by a dense solve of (P^T - I) pi = 0.

    The redundant last balance equation is replaced by the normalization
    sum(pi) = 1 (the rows of P^T - I sum to zero, so any single row may be
    swapped out); one power-iteration step refines the result.
    """
    m = kernel.n_states
    A = kernel.P.T - np.eye(m)
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"stationary solve failed: {exc}") from exc
    pi = pi @ kernel.P          # one refinement step
    pi = pi / pi.sum()
    if np.any(pi < -tol):
        raise NumericsError("stationary solve produced negative mass")
    pi = np.maximum(pi, 0.0)
    pi = pi / pi.sum()
    resid = float(np.abs(pi @ kernel.P - pi).max())
    if resid > tol:
        raise NumericsError(f"stationary residual {resid:.3e} exceeds {tol:.1e}")
    cum = np.cumsum(pi)
    cum[-1] = 1.0
    return StationaryDistribution(pi=_freeze(pi), cum=_freeze(cum))


def _as_g_matrix(g, m: int) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2 or g.shape[0] != m:
        raise ChainError(f"observable shape {g.shape} incompatible with {m} states")
    if not np.all(np.isfinite(g)):
        raise ChainError("non-finite observable value")
    return g


def make_observable(g, pi: StationaryDistribution, d: int | None = None,
                    center: bool = False) -> tuple[Observable, np.ndarray | None]:
    """Validate (or enforce) that g has zero pi-mean per coordinate.

    Returns the observable and the subtracted shift when center=True.
    """
    m = pi.pi.shape[0]
    g = _as_g_matrix(g, m)
    if d is not None and d != g.shape[1]:
        raise ChainError(f"declared d={d} but observable has {g.shape[1]} columns")
    mean = pi.pi @ g
    shift = None
    if np.abs(mean).max() > CENTERED_TOL:
        if not center:
            raise ChainError(
                f"observable not centered (pi-mean max {np.abs(mean).max():.3e}); "
                "set center=true to subtract the mean")
        shift = mean.copy()
        g = g - mean[None, :]
    return Observable(g=_freeze(g), d=g.shape[1]), shift


def load_chain(doc: dict) -> LoadedChain:
    """Load and validate a chain-spec document.

    Schema: {"states": [str], "P": [[num]], "g": [[num]] or [num],
             "d": int, "center": bool}.
    """
    if not isinstance(doc, dict):
        raise ChainError("chain spec must be a JSON object")
    for key in ("states", "P", "g"):
        if key not in doc:
            raise ChainError(f"chain spec missing required key {key!r}")
    kernel = validate_kernel(doc["states"], doc["P"])
    pi = stationary(kernel)
    obs, shift = make_observable(doc["g"], pi, d=doc.get("d"),
                                 center=bool(doc.get("center", False)))
    return LoadedChain(kernel=kernel, pi=pi, observable=obs, center_shift=shift)


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox (counter-based) generator keyed by (seed, stream).

    Replica r of an ensemble uses stream r, so parallel runs are
    order-independent and individually reproducible.
    """
    if seed < 0 or stream < 0:
        raise ChainError("seed and stream must be non-negative integers")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_initial_state(pi: StationaryDistribution, rng: np.random.Generator) -> int:
    return int(np.searchsorted(pi.cum, rng.random(), side="right"))


def simulate(kernel: FiniteKernel, pi: StationaryDistribution, obs: Observable,
             n: int, seed: int, stream: int = 0,
             init_state: int | None = None) -> SamplePath:
    """Simulate a stationary path of length n and cache its partial sums.

    X_0 is drawn from pi (or fixed to init_state for point-mass starts);
    identical (seed, stream, n) always reproduces the same path bit for bit.
    """
    if n < 1:
        raise ChainError("path length n must be >= 1")
    rng = rng_stream(seed, stream)
    u = rng.random(n + 1)
    if init_state is None:
        x0 = int(np.searchsorted(pi.cum, u[0], side="right"))
    else:
        if not 0 <= init_state < kernel.n_states:
            raise ChainError(f"init_state {init_state} out of range")
        x0 = int(init_state)
    states = _kernels.chain_steps(kernel.cum, u[1:], x0)
    sums = np.zeros((n + 1, obs.d))
    np.cumsum(obs.g[states[:-1]], axis=0, out=sums[1:])
    return SamplePath(seed=seed, stream=stream, n=n,
                      states=_freeze(states), partial_sums=_freeze(sums))


def walk_chunks(kernel: FiniteKernel, rng: np.random.Generator, n: int,
                x0: int, chunk: int = 1 << 20):
    """Yield (k0, states) blocks of a length-n walk with O(chunk) memory.

    Block states have length (steps+1) and start at the state with absolute
    index k0; consecutive blocks overlap by one state.
    """
    x = x0
    k0 = 0
    while k0 < n:
        steps = min(chunk, n - k0)
        u = rng.random(steps)
        states = _kernels.chain_steps(kernel.cum, u, x)
        yield k0, states
        x = int(states[-1])
        k0 += steps


def empirical_frequencies(path: SamplePath, m: int) -> np.ndarray:
    return np.bincount(path.states, minlength=m) / float(path.states.shape[0])


def check_ergodic_frequencies(path: SamplePath, pi: StationaryDistribution,
                              factor: float = 12.0) -> float:
    """Max standardized deviation of empirical state frequencies from pi.

    Returns max_x |freq_x - pi_x| / (factor * binomial sigma); values <= 1
    are within the tolerance band.
    """
    m = pi.pi.shape[0]
    freq = empirical_frequencies(path, m)
    n = path.states.shape[0]
    sigma = np.sqrt(np.maximum(pi.pi * (1.0 - pi.pi), 1e-300) / n)
    return float(np.max(np.abs(freq - pi.pi) / (factor * sigma)))


def observable_l2(obs: Observable, pi: StationaryDistribution) -> float:
    return l2_pi(obs.g, pi.pi)
