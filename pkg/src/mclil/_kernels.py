"""Hot numeric kernels: numba-compiled inner loops with pure-numpy fallbacks.

Two operations dominate runtime and get JIT treatment:

* the sequential Markov-chain walk (inverse-CDF stepping through a
  cumulative transition matrix), and
* the Dykstra feasibility loop used by the Strassen-set distance
  (alternating projections between an energy ellipsoid and a tube of
  per-point balls, with the ellipsoid projection done by Newton on the
  tridiagonal system (I + mu*A) h = z).

Set ``MCLIL_PURE_NUMPY=1`` to force the numpy fallbacks (same results,
slower; the chain walk is bit-identical across backends because both
consume the same uniform stream through searchsorted-right semantics).
``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("MCLIL_PURE_NUMPY", "").strip().lower()
_FORCE_NUMPY = _ENV_FLAG in ("1", "true", "yes")

try:
    if _FORCE_NUMPY:
        raise ImportError("numpy fallback requested via MCLIL_PURE_NUMPY")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

USE_JIT = HAVE_NUMBA and not _FORCE_NUMPY

# Dykstra status codes
FEASIBLE = 1
INFEASIBLE = 0
UNDECIDED = -1
NEARLY = 2      # gap fell below the caller's early-exit threshold


# ---------------------------------------------------------------------------
# Markov chain walk
# ---------------------------------------------------------------------------

@njit(cache=True)
def _chain_steps_jit(cum, u, x0):
    n = u.shape[0]
    m = cum.shape[1]
    out = np.empty(n + 1, np.int64)
    out[0] = x0
    x = x0
    for t in range(n):
        v = u[t]
        row = cum[x]
        # first index with row[idx] > v (bisect right)
        lo = 0
        hi = m - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if row[mid] > v:
                hi = mid
            else:
                lo = mid + 1
        x = lo
        out[t + 1] = x
    return out


def _chain_steps_np(cum, u, x0):
    n = u.shape[0]
    m = cum.shape[0]
    out = np.empty(n + 1, np.int64)
    out[0] = x0
    x = int(x0)
    if m <= 512:
        # precompute the draw for every (state, step) pair, then walk
        nxt = np.empty((m, n), np.int64)
        for s in range(m):
            nxt[s] = np.searchsorted(cum[s], u, side="right")
        for t in range(n):
            x = nxt[x, t]
            out[t + 1] = x
    else:
        for t in range(n):
            x = int(np.searchsorted(cum[x], u[t], side="right"))
            out[t + 1] = x
    return out


def chain_steps(cum: np.ndarray, u: np.ndarray, x0: int) -> np.ndarray:
    """Walk the chain for len(u) steps from state x0.

    cum is the row-cumulative transition matrix with cum[:, -1] == 1.0;
    u a vector of uniforms in [0, 1). Returns states of length len(u)+1
    including the start state.
    """
    if USE_JIT:
        return _chain_steps_jit(cum, u, np.int64(x0))
    return _chain_steps_np(cum, u, x0)


# ---------------------------------------------------------------------------
# Energy-ellipsoid projection and Dykstra tube feasibility (JIT path)
# ---------------------------------------------------------------------------
# The energy quadratic form of a piecewise-linear path h (h_0 = 0 fixed,
# free values h_1..h_m) is h^T A h with A tridiagonal:
#   diag[i] = w_i + w_{i+1} (w_{m+1} = 0), off[i] = -w_{i+1},
# where w_i = 1/dt_i are the inverse segment lengths.

@njit(cache=True)
def _quad_energy(h, diag, off):
    m, d = h.shape
    s = 0.0
    for j in range(d):
        for i in range(m):
            v = diag[i] * h[i, j]
            if i > 0:
                v += off[i - 1] * h[i - 1, j]
            if i < m - 1:
                v += off[i] * h[i + 1, j]
            s += h[i, j] * v
    return s


@njit(cache=True)
def _thomas_solve(mu, diag, off, b, out, cp):
    # (I + mu*A) out = b, A tridiagonal(diag, off); diagonally dominant.
    m, d = b.shape
    a0 = 1.0 + mu * diag[0]
    if m > 1:
        cp[0] = (mu * off[0]) / a0
    for j in range(d):
        out[0, j] = b[0, j] / a0
    for i in range(1, m):
        lower = mu * off[i - 1]
        denom = 1.0 + mu * diag[i] - lower * cp[i - 1]
        if i < m - 1:
            cp[i] = (mu * off[i]) / denom
        for j in range(d):
            out[i, j] = (b[i, j] - lower * out[i - 1, j]) / denom
    for i in range(m - 2, -1, -1):
        for j in range(d):
            out[i, j] -= cp[i] * out[i + 1, j]


@njit(cache=True)
def _tri_mul(diag, off, h, out):
    m, d = h.shape
    for j in range(d):
        for i in range(m):
            v = diag[i] * h[i, j]
            if i > 0:
                v += off[i - 1] * h[i - 1, j]
            if i < m - 1:
                v += off[i] * h[i + 1, j]
            out[i, j] = v


@njit(cache=True)
def _newton_dphi(mu, diag, off, out, ah, w2, cp):
    _tri_mul(diag, off, out, ah)
    _thomas_solve(mu, diag, off, ah, w2, cp)
    m, d = out.shape
    acc = 0.0
    for j in range(d):
        for i in range(m):
            acc += ah[i, j] * w2[i, j]
    return -2.0 * acc


@njit(cache=True)
def _project_energy_jit(z, diag, off, c, out, cp, ah, w2):
    # Euclidean projection of z onto {h : h^T A h <= c}. phi(mu) =
    # h(mu)^T A h(mu) - c with h(mu) = (I + mu*A)^{-1} z is convex and
    # decreasing, so Newton from the left of the root is monotone; a
    # doubling upper bracket guards against slow starts far outside.
    e = _quad_energy(z, diag, off)
    if e <= c:
        out[:] = z
        return
    tol = 1e-12 * (c + 1.0)
    mu_hi = 1.0
    for _ in range(400):
        _thomas_solve(mu_hi, diag, off, z, out, cp)
        if _quad_energy(out, diag, off) - c < 0.0:
            break
        mu_hi *= 4.0
    mu = 0.0
    for _ in range(300):
        _thomas_solve(mu, diag, off, z, out, cp)
        phi = _quad_energy(out, diag, off) - c
        if -tol <= phi <= tol:
            return
        if phi < 0.0:
            mu_hi = mu          # overshoot: fall back to bisection side
            mu = 0.5 * mu
            continue
        dphi = _newton_dphi(mu, diag, off, out, ah, w2, cp)
        step = phi / dphi
        mu_new = mu - step
        if mu_new <= mu or mu_new >= mu_hi:
            mu_new = 0.5 * (mu + mu_hi)
        if mu_new - mu <= 1e-15 * mu:
            break
        mu = mu_new
    _thomas_solve(mu, diag, off, z, out, cp)


@njit(cache=True)
def _tube_dykstra_jit(f, delta, diag, off, c, gap_tol, max_iter,
                      stall_every, stall_rtol, early_gap):
    m, d = f.shape
    x = f.copy()
    p = np.zeros((m, d))
    q = np.zeros((m, d))
    y = np.empty((m, d))
    z = np.empty((m, d))
    cp = np.empty(m)
    ah = np.empty((m, d))
    w2 = np.empty((m, d))
    gap = 1e300
    gap_min = 1e300
    gap_window = 1e300
    best_dev = 1e300
    it = 0
    while it < max_iter:
        for j in range(d):
            for i in range(m):
                z[i, j] = x[i, j] + p[i, j]
        _project_energy_jit(z, diag, off, c, y, cp, ah, w2)
        for j in range(d):
            for i in range(m):
                p[i, j] = z[i, j] - y[i, j]
        # rigorous upper bound on the tube radius: rescale y exactly into
        # the energy set and measure its worst deviation from f
        e_y = _quad_energy(y, diag, off)
        s = 1.0 if e_y <= c else np.sqrt(c / e_y)
        dev = 0.0
        for i in range(m):
            nrm2 = 0.0
            for j in range(d):
                dv = s * y[i, j] - f[i, j]
                nrm2 += dv * dv
            if nrm2 > dev:
                dev = nrm2
        dev = np.sqrt(dev)
        if dev < best_dev:
            best_dev = dev
        # project y+q onto the tube of per-point balls around f
        gap = 0.0
        for i in range(m):
            nrm2 = 0.0
            for j in range(d):
                z[i, j] = y[i, j] + q[i, j]
                dv = z[i, j] - f[i, j]
                nrm2 += dv * dv
            nrm = np.sqrt(nrm2)
            scale = 1.0 if nrm <= delta else delta / nrm
            g2 = 0.0
            for j in range(d):
                xn = f[i, j] + scale * (z[i, j] - f[i, j])
                q[i, j] = z[i, j] - xn
                dv = y[i, j] - xn
                g2 += dv * dv
                x[i, j] = xn
            if g2 > gap:
                gap = g2
        gap = np.sqrt(gap)
        if gap < gap_min:
            gap_min = gap
        it += 1
        if gap < gap_tol:
            return FEASIBLE, gap, it, best_dev
        if gap <= early_gap:
            return NEARLY, gap, it, best_dev
        if it % stall_every == 0:
            # compare running minima so oscillations cannot fake a stall
            if gap_window - gap_min <= stall_rtol * gap_min:
                return INFEASIBLE, gap_min, it, best_dev
            gap_window = gap_min
    return UNDECIDED, gap_min, it, best_dev


# ---------------------------------------------------------------------------
# Numpy fallback: same projections in the eigenbasis of A
# ---------------------------------------------------------------------------

_EIG_CACHE: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}


def _eig_for(diag: np.ndarray, off: np.ndarray):
    key = diag.tobytes() + b"|" + off.tobytes()
    hit = _EIG_CACHE.get(key)
    if hit is not None:
        return hit
    from scipy.linalg import eigh_tridiagonal

    evals, evecs = eigh_tridiagonal(diag, off)
    if len(_EIG_CACHE) > 8:
        _EIG_CACHE.clear()
    _EIG_CACHE[key] = (evals, evecs)
    return evals, evecs


def _project_energy_np(z, evals, evecs, c):
    zt = evecs.T @ z
    lam = evals[:, None]
    e = float(np.sum(lam * zt * zt))
    if e <= c:
        return z
    z2 = zt * zt
    mu = 0.0
    for _ in range(60):
        denom = 1.0 + mu * lam
        phi = float(np.sum(lam * z2 / (denom * denom))) - c
        if phi <= 1e-10 * (c + 1.0):
            break
        dphi = -2.0 * float(np.sum(lam * lam * z2 / (denom ** 3)))
        step = phi / dphi
        if mu - step <= mu * (1.0 + 1e-15):
            break
        mu = mu - step
    return evecs @ (zt / (1.0 + mu * lam))


def _tube_dykstra_np(f, delta, diag, off, c, gap_tol, max_iter,
                     stall_every, stall_rtol, early_gap):
    evals, evecs = _eig_for(diag, off)

    def quad(h):
        ht = evecs.T @ h
        return float(np.sum(evals[:, None] * ht * ht))

    x = f.copy()
    p = np.zeros_like(f)
    q = np.zeros_like(f)
    gap = np.inf
    gap_min = np.inf
    gap_window = np.inf
    best_dev = np.inf
    it = 0
    while it < max_iter:
        y = _project_energy_np(x + p, evals, evecs, c)
        p = x + p - y
        e_y = quad(y)
        s = 1.0 if e_y <= c else np.sqrt(c / e_y)
        dev = float(np.sqrt(np.sum((s * y - f) ** 2, axis=1)).max())
        best_dev = min(best_dev, dev)
        v = y + q
        diff = v - f
        nrm = np.sqrt(np.sum(diff * diff, axis=1, keepdims=True))
        scale = np.where(nrm > delta, delta / np.maximum(nrm, 1e-300), 1.0)
        x = f + diff * scale
        q = v - x
        gap = float(np.sqrt(np.sum((y - x) ** 2, axis=1)).max())
        gap_min = min(gap_min, gap)
        it += 1
        if gap < gap_tol:
            return FEASIBLE, gap, it, best_dev
        if gap <= early_gap:
            return NEARLY, gap, it, best_dev
        if it % stall_every == 0:
            if gap_window - gap_min <= stall_rtol * gap_min:
                return INFEASIBLE, gap_min, it, best_dev
            gap_window = gap_min
    return UNDECIDED, gap_min, it, best_dev


# ---------------------------------------------------------------------------
# Dispatchers
# ---------------------------------------------------------------------------

def energy_tridiag(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal (diag, off) of the energy form for segment weights w=1/dt."""
    w = np.asarray(w, dtype=float)
    diag = w.copy()
    diag[:-1] += w[1:]
    off = -w[1:]
    return diag, off


def project_energy_ball(z: np.ndarray, w: np.ndarray, c: float) -> np.ndarray:
    """Euclidean projection of z (m, d) onto {h : energy(h) <= c}, h_0 = 0."""
    diag, off = energy_tridiag(w)
    if USE_JIT:
        m, d = z.shape
        out = np.empty((m, d))
        cp = np.empty(m)
        ah = np.empty((m, d))
        w2 = np.empty((m, d))
        _project_energy_jit(np.ascontiguousarray(z, dtype=float), diag, off,
                            float(c), out, cp, ah, w2)
        return out
    evals, evecs = _eig_for(diag, off)
    return _project_energy_np(np.asarray(z, dtype=float), evals, evecs, float(c))


def tube_feasible(f: np.ndarray, delta: float, w: np.ndarray, c: float,
                  gap_tol: float = 1e-8, max_iter: int = 10_000,
                  stall_every: int = 128, stall_rtol: float = 1e-4,
                  early_gap: float = 0.0):
    """Dykstra feasibility for {energy <= c} intersect {|h_i - f_i| <= delta}.

    Returns (status, gap, iterations, best_dev). FEASIBLE means the gap fell
    below gap_tol; NEARLY that it fell below the caller's early_gap
    threshold; INFEASIBLE that the gap stalled at a positive value;
    UNDECIDED that the iteration cap was hit while the gap was still
    moving. best_dev is a certificate: the smallest worst-point deviation
    from f over iterates rescaled exactly into the energy set, hence a
    rigorous upper bound on the tube radius at which the sets meet.
    """
    f = np.ascontiguousarray(f, dtype=float)
    diag, off = energy_tridiag(w)
    args = (f, float(delta), diag, off, float(c), float(gap_tol),
            int(max_iter), int(stall_every), float(stall_rtol),
            float(early_gap))
    if USE_JIT:
        return _tube_dykstra_jit(*args)
    return _tube_dykstra_np(*args)


# direct handles for equivalence tests and the benchmark
chain_steps_jit = _chain_steps_jit if USE_JIT else None
chain_steps_np = _chain_steps_np


def tube_feasible_np(f, delta, w, c, gap_tol=1e-8, max_iter=10_000):
    diag, off = energy_tridiag(w)
    return _tube_dykstra_np(np.ascontiguousarray(f, dtype=float), float(delta),
                            diag, off, float(c), float(gap_tol), int(max_iter),
                            128, 1e-4, 0.0)


def tube_feasible_jit(f, delta, w, c, gap_tol=1e-8, max_iter=10_000):
    if not USE_JIT:
        return None
    diag, off = energy_tridiag(w)
    return _tube_dykstra_jit(np.ascontiguousarray(f, dtype=float), float(delta),
                             diag, off, float(c), float(gap_tol), int(max_iter),
                             128, 1e-4, 0.0)
