"""Martingale decomposition and iterated-logarithm Monte Carlo for
additive functionals of finite-state Markov chains.

The package computes exact resolvent and Poisson solutions on finite
chains, the induced martingale pair kernel and diffusion matrix, fractional
powers of (I - Q) with remainder diagnostics, and verifies the functional
law of the iterated logarithm by long-run simulation against the Strassen
ball. Hot loops run under numba (set MCLIL_PURE_NUMPY=1 for the fallback).
"""

__version__ = "0.1.0"

from .chain import (FiniteKernel, LoadedChain, Observable, SamplePath,
                    StationaryDistribution, load_chain, make_observable,
                    rng_stream, simulate, stationary, validate_kernel,
                    walk_chunks)
from .coboundary import (FracApply, FracMembership, FracOperator,
                         RemainderDiagnostics, frac_coefficients,
                         frac_membership, frac_operator, frac_power_apply,
                         max_increment_stat, remainder_growth, remainder_path)
from .diffusion import DiffusionMatrix, diffusion_empirical, diffusion_exact
from .errors import ChainError, NumericsError
from .poisson import (Decomposition, EpsConvergence, MartingaleKernel, MWFit,
                      ResolventSolution, decompose_path,
                      decomposition_residual, h_eps_convergence,
                      martingale_defect, martingale_kernel, mw_fit,
                      poisson_limit, resolvent_series, solve_resolvent)
from .strassen import (ClusterProbe, DistResult, LILReport, PathFunction,
                       cluster_probe, dist_to_K, dist_to_K_info, energy,
                       envelope_check, lil_run, path_function,
                       uniform_path_function, xi_path)
from ._util import lil_scale, loglog

__all__ = [name for name in dir() if not name.startswith("_")]
