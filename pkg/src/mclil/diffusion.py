"""Diffusion matrix of the martingale part: exact and empirical estimates.

The exact matrix is the pair-measure average of H H^T; its trace equals
the squared L2 pair norm of H and is the constant appearing in the law of
the iterated logarithm. The empirical estimator averages the outer products
of the realized martingale increments, with batch-means standard errors to
account for serial dependence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import SamplePath
from .errors import ChainError, NumericsError
from .poisson import MartingaleKernel

PSD_FLOOR = -1e-10
SYMMETRY_TOL = 1e-12
TRACE_TOL = 1e-10
DEFAULT_BATCHES = 100


@dataclass(frozen=True)
class DiffusionMatrix:
    D: np.ndarray                 # (d, d) symmetric PSD
    trace: float
    method: str                   # "exact" | "empirical"
    stderr: np.ndarray | None = None   # (d, d) batch-means SEs, empirical only
    n_increments: int = 0


def _check_shape(D: np.ndarray) -> None:
    sym = float(np.abs(D - D.T).max(initial=0.0))
    scale = max(float(np.abs(D).max(initial=0.0)), 1.0)
    if sym > SYMMETRY_TOL * scale:
        raise NumericsError(f"diffusion matrix asymmetry {sym:.3e}")
    lo = float(np.linalg.eigvalsh(D).min())
    if lo < PSD_FLOOR * scale:
        raise NumericsError(f"diffusion matrix has eigenvalue {lo:.3e} < 0")


def diffusion_exact(mk: MartingaleKernel) -> DiffusionMatrix:
    """D = sum over state pairs of pair_measure * H H^T."""
    D = np.einsum("xy,xyi,xyj->ij", mk.pair_measure, mk.H, mk.H)
    D = 0.5 * (D + D.T)
    _check_shape(D)
    trace = float(np.trace(D))
    # Remark-style identity: trace equals the squared pair-L2 norm of H
    h_sq = float(np.sum(mk.pair_measure[:, :, None] * mk.H * mk.H))
    if abs(trace - h_sq) > TRACE_TOL * (1.0 + abs(trace)):
        raise NumericsError("trace does not match the pair-L2 norm of H")
    return DiffusionMatrix(D=D, trace=trace, method="exact")


def _pair_codes(path: SamplePath, m: int) -> np.ndarray:
    return path.states[:-1] * m + path.states[1:]


def diffusion_empirical(paths: Sequence[SamplePath], mk: MartingaleKernel,
                        batches: int = DEFAULT_BATCHES) -> DiffusionMatrix:
    """Average of m_i m_i^T over all increments of an ensemble.

    Increments are pooled in replica order and split into contiguous
    batches; the reported standard error of each entry is the batch-means
    estimate std(batch means)/sqrt(B).
    """
    if not paths:
        raise ChainError("degenerate ensemble: no paths")
    m = mk.H.shape[0]
    d = mk.H.shape[2]
    codes = np.concatenate([_pair_codes(p, m) for p in paths])
    n = codes.shape[0]
    if n == 0:
        raise ChainError("degenerate ensemble: no increments")
    B = max(1, min(batches, n))
    outer = (mk.H[:, :, :, None] * mk.H[:, :, None, :]).reshape(m * m, d * d)
    bounds = np.linspace(0, n, B + 1).astype(np.int64)
    batch_means = np.empty((B, d * d))
    for b in range(B):
        sl = codes[bounds[b]:bounds[b + 1]]
        counts = np.bincount(sl, minlength=m * m).astype(float)
        batch_means[b] = counts @ outer / sl.shape[0]
    weights = np.diff(bounds).astype(float) / n
    D = (weights @ batch_means).reshape(d, d)
    D = 0.5 * (D + D.T)
    if B > 1:
        se = (batch_means.std(axis=0, ddof=1) / np.sqrt(B)).reshape(d, d)
    else:
        se = np.full((d, d), np.nan)
    return DiffusionMatrix(D=D, trace=float(np.trace(D)), method="empirical",
                           stderr=se, n_increments=n)
