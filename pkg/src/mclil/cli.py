"""Command-line front door.

Commands: validate, analyze, lil, dist-k, frac. Every run echoes its full
configuration and effective tolerances into report.json; CSV bodies are
deterministic for identical configurations.

Exit codes: 0 success, 2 invalid chain spec, 3 numeric failure, 4 bad
configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .chain import LoadedChain, load_chain, simulate
from .coboundary import frac_power_apply, max_increment_stat, remainder_growth
from .diffusion import diffusion_empirical, diffusion_exact
from .errors import ChainError, NumericsError
from .poisson import (decompose_path, h_eps_convergence, martingale_defect,
                      martingale_kernel, mw_fit, poisson_limit, solve_resolvent)
from .report import (fmt, vector_header, write_csv, write_json_report,
                     write_lil_svg, write_path_csv)
from .strassen import cluster_probe, dist_to_K_info, energy, lil_run, path_function

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

DEFAULT_TOLS = {
    "resolvent": 1e-10,
    "stationary": 1e-10,
    "martingale": 1e-10,
    "dist_abs": 1e-6,
    "dist_gap": 1e-8,
    "lil_dist": 1e-4,
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):       # argparse failures are config errors
        raise ConfigError(message)


def _parse_tols(pairs) -> dict:
    tols = dict(DEFAULT_TOLS)
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--tol expects NAME=VALUE, got {item!r}")
        name, value = item.split("=", 1)
        if name not in tols:
            raise ConfigError(f"unknown tolerance {name!r}; "
                              f"known: {sorted(tols)}")
        try:
            tols[name] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad tolerance value {value!r}") from exc
    return tols


def _load_spec(path: str) -> LoadedChain:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"chain spec not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ChainError(f"malformed chain spec: {exc}") from exc
    return load_chain(doc)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_report(args, command: str, tols: dict) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "tol")}
    return {
        "command": command,
        "config": cfg,
        "tolerances": tols,
        "metadata": {
            "package_version": __version__,
            "backend": "numba" if _kernels.USE_JIT else "numpy",
        },
    }


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    loaded = _load_spec(args.spec)
    m = loaded.kernel.n_states
    print(f"states: {m}")
    print(f"observable dimension: {loaded.observable.d}")
    print(f"stationary residual ok (pi P = pi within {DEFAULT_TOLS['stationary']:g})")
    if loaded.center_shift is not None:
        print(f"observable auto-centered; subtracted pi-mean {loaded.center_shift.tolist()}")
    print("valid")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    tols = _parse_tols(args.tol)
    loaded = _load_spec(args.spec)
    kernel, pi, obs = loaded.kernel, loaded.pi, loaded.observable
    g = obs.g
    out = _outdir(args)
    report = _base_report(args, "analyze", tols)

    res = solve_resolvent(kernel, g, args.eps, tol=tols["resolvent"])
    write_csv(out / "resolvent.csv",
              ["state"] + vector_header("h", obs.d),
              ([kernel.states[i]] + list(res.h[i]) for i in range(kernel.n_states)))

    h = poisson_limit(kernel, pi, g)
    mk = martingale_kernel(kernel, pi, h, tol=tols["martingale"])
    dm = diffusion_exact(mk)
    rows = [list(dm.D.reshape(-1)) + [dm.trace, dm.method]
            + [""] * (obs.d * obs.d)]
    emp = None
    if args.empirical_steps > 0:
        n_paths = max(1, args.empirical_steps // args.empirical_len)
        paths = [simulate(kernel, pi, obs, args.empirical_len, args.seed, stream=r)
                 for r in range(n_paths)]
        emp = diffusion_empirical(paths, mk)
        rows.append(list(emp.D.reshape(-1)) + [emp.trace, emp.method]
                    + list(emp.stderr.reshape(-1)))
    write_csv(out / "diffusion.csv",
              [f"D_{i + 1}{k + 1}" for i in range(obs.d) for k in range(obs.d)]
              + ["trace", "method"]
              + [f"stderr_{i + 1}{k + 1}" for i in range(obs.d) for k in range(obs.d)],
              rows)

    fit = mw_fit(kernel, pi, g, n_max=args.n_max)
    write_csv(out / "mw_fit.csv", ["n", "V_n"], zip(fit.n_grid, fit.V))

    conv = h_eps_convergence(kernel, pi, g, args.eps_grid)
    fp = frac_power_apply(kernel, args.alpha, g, K=args.frac_k)
    write_csv(out / "fracpower.csv",
              ["state"] + vector_header("f", obs.d),
              ([kernel.states[i]] + list(fp.value[i]) for i in range(kernel.n_states)))

    path = simulate(kernel, pi, obs, args.decomp_n, args.seed)
    dec = decompose_path(path, kernel, pi, g, args.eps)
    cols = (["k"] + vector_header("S", obs.d) + vector_header("M_eps", obs.d)
            + vector_header("eps_S_h", obs.d) + vector_header("R_eps", obs.d)
            + vector_header("M_lim", obs.d) + vector_header("R_lim", obs.d))
    write_csv(out / "decomp.csv", cols,
              ([k] + list(dec.S[k]) + list(dec.M_eps[k]) + list(dec.eps_S_h[k])
               + list(dec.R_eps[k]) + list(dec.M_lim[k]) + list(dec.R_lim[k])
               for k in range(path.n + 1)))
    write_path_csv(out / "path.csv", path, kernel.states)

    rem = remainder_growth(kernel, pi, obs, n_max=args.remainder_n,
                           n_paths=args.remainder_paths, seed=args.seed)
    write_csv(out / "remainder.csv", ["n", "E_R2", "stderr"],
              zip(rem.n_grid, rem.E_R2, rem.E_R2_stderr))
    mi_grid, mi_vals = max_increment_stat(path, mk)
    write_csv(out / "maxinc.csv", ["n", "stat"], zip(mi_grid, mi_vals))

    report["results"] = {
        "resolvent_residual": res.residual,
        "martingale_defect": martingale_defect(mk, kernel),
        "trace": dm.trace,
        "diffusion": dm.D.tolist(),
        "empirical_trace": None if emp is None else emp.trace,
        "alpha_hat": fit.alpha_hat,
        "alpha_ok": fit.alpha_ok,
        "mw_degenerate": fit.degenerate,
        "eps_grid": conv.eps_grid.tolist(),
        "h_err": conv.h_err.tolist(),
        "H_err": conv.H_err.tolist(),
        "h_norm_scaled": conv.h_norm_scaled.tolist(),
        "remainder_beta_hat": rem.beta_hat,
        "remainder_consistent": rem.consistent,
        "frac_n_terms": fp.n_terms,
        "frac_coeff_tail": fp.coeff_tail,
        "auto_centered_shift":
            None if loaded.center_shift is None else loaded.center_shift.tolist(),
    }
    write_json_report(out / "report.json", report)
    print(f"analyze: trace={dm.trace!r} alpha_hat={fit.alpha_hat!r} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# lil
# ---------------------------------------------------------------------------

def _one_lil_run(payload):
    (spec_path, trD, n_max, rho, seed, stream, centered, dist_tol,
     no_dist) = payload
    loaded = _load_spec(spec_path)
    return lil_run(loaded.kernel, loaded.pi, loaded.observable, trD,
                   n_max=n_max, rho=rho, seed=seed, stream=stream,
                   centered=centered, compute_dist=not no_dist,
                   dist_tol=dist_tol)


def _lil_verdict(report, band_lo, band_hi, degenerate: bool) -> str:
    if degenerate:
        return "degenerate (trD=0, S=0)"
    if report.trD <= 0.0:
        return "converges to 0; band trivially satisfied"
    final = float(report.running_max[-1])
    lo, hi = band_lo * report.target, band_hi * report.target
    if lo <= final <= hi:
        return f"within band [{band_lo:g},{band_hi:g}]"
    return f"outside band [{band_lo:g},{band_hi:g}]"


def cmd_lil(args) -> int:
    tols = _parse_tols(args.tol)
    if args.n_max < 1000:
        raise ConfigError("lil requires --n-max >= 1000")
    if args.rho <= 1.0:
        raise ConfigError("--rho must exceed 1")
    if args.replicas < 1:
        raise ConfigError("--replicas must be >= 1")
    loaded = _load_spec(args.spec)
    kernel, pi, obs = loaded.kernel, loaded.pi, loaded.observable
    mk = martingale_kernel(kernel, pi, poisson_limit(kernel, pi, obs.g))
    trD = diffusion_exact(mk).trace
    out = _outdir(args)
    degenerate = bool(np.abs(obs.g).max(initial=0.0) == 0.0)

    payloads = [(args.spec, trD, args.n_max, args.rho, args.seed, r,
                 args.centered, tols["lil_dist"], args.no_dist)
                for r in range(args.replicas)]
    if args.workers > 1 and args.replicas > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(_one_lil_run, payloads))
    else:
        reports = [_one_lil_run(p) for p in payloads]

    header = ["replica", "k", "n_k", "stat", "running_max", "sup_stat", "dist_to_K"]
    rows = []
    for r, rep in enumerate(reports):
        for i, n in enumerate(rep.checkpoints):
            dist = "" if rep.dist_K is None else rep.dist_K[i]
            rows.append([r, i, int(n), rep.stat[i], rep.running_max[i],
                         rep.sup_stat[i], dist])
    write_csv(out / "lil.csv", header, rows)

    report = _base_report(args, "lil", tols)
    per_replica = []
    for r, rep in enumerate(reports):
        probe = cluster_probe(rep, trD, obs.d)
        per_replica.append({
            "replica": r,
            "running_max": float(rep.running_max[-1]),
            "verdict": _lil_verdict(rep, args.band_lo, args.band_hi, degenerate),
            "max_env_violation": float(rep.env_violation.max()),
            "min_diag_distance": probe.min_distance,
            "min_diag_distance_at_n": probe.argmin_n,
        })
    report["results"] = {
        "target": float(np.sqrt(trD)),
        "trace": trD,
        "checkpoints": int(reports[0].checkpoints.shape[0]),
        "replicas": per_replica,
        "verdict": per_replica[0]["verdict"],
    }
    write_json_report(out / "report.json", report)
    if args.svg:
        write_lil_svg(out / "paths.svg", reports[0])
    print(f"lil: target={np.sqrt(trD)!r} running_max="
          f"{per_replica[0]['running_max']!r} verdict={per_replica[0]['verdict']!r}"
          f" -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dist-k
# ---------------------------------------------------------------------------

def _read_path_csv(path: str):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"path file not found: {path}")
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].lower().startswith("t"):
        raise ChainError("path file needs a header row starting with t")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    if data.ndim != 2 or data.shape[1] < 2:
        raise ChainError("path file needs columns t,f_1..f_d")
    return path_function(data[:, 0], data[:, 1:])


def cmd_dist_k(args) -> int:
    tols = _parse_tols(args.tol)
    if args.trd < 0:
        raise ConfigError("--trd must be >= 0")
    f = _read_path_csv(args.path_csv)
    info = dist_to_K_info(f, args.trd, tol=tols["dist_abs"],
                          gap_tol=tols["dist_gap"])
    payload = {
        "dist": info.dist,
        "lower": info.lower,
        "upper": info.upper,
        "energy": energy(f),
        "trd": args.trd,
        "undecided_checks": info.undecided,
    }
    print(json.dumps(payload, indent=2))
    if args.out is not None:
        out = _outdir(args)
        report = _base_report(args, "dist-k", tols)
        report["results"] = payload
        write_json_report(out / "report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# frac
# ---------------------------------------------------------------------------

def cmd_frac(args) -> int:
    tols = _parse_tols(args.tol)
    if not 0.0 < args.alpha <= 1.0:
        raise ConfigError("--alpha must lie in (0, 1]")
    loaded = _load_spec(args.spec)
    kernel, obs = loaded.kernel, loaded.observable
    fp = frac_power_apply(kernel, args.alpha, obs.g, K=args.frac_k)
    out = _outdir(args)
    write_csv(out / "fracpower.csv",
              ["state"] + vector_header("f", obs.d),
              ([kernel.states[i]] + list(fp.value[i])
               for i in range(kernel.n_states)))
    report = _base_report(args, "frac", tols)
    report["results"] = {
        "alpha": args.alpha,
        "n_terms": fp.n_terms,
        "coeff_tail": fp.coeff_tail,
        "tail_bound": fp.tail_bound,
    }
    write_json_report(out / "report.json", report)
    print(f"frac: alpha={args.alpha!r} terms={fp.n_terms} "
          f"tail={fp.coeff_tail!r} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _eps_grid(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ConfigError("--eps-grid must list at least one value")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mclil",
                     description="Martingale decomposition and LIL Monte Carlo "
                                 "for finite Markov chain additive functionals")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="mclil-out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", action="append", metavar="NAME=VALUE",
                       help="tolerance override, repeatable")

    pv = sub.add_parser("validate", help="run all chain invariants")
    pv.add_argument("spec")
    pv.set_defaults(func=cmd_validate)

    pa = sub.add_parser("analyze", help="static resolvent/diffusion/moment report")
    pa.add_argument("spec")
    common(pa)
    pa.add_argument("--eps", type=float, default=1e-3)
    pa.add_argument("--eps-grid", type=_eps_grid,
                    default=[0.1, 0.05, 0.025, 0.0125, 0.00625])
    pa.add_argument("--n-max", type=int, default=1 << 14)
    pa.add_argument("--alpha", type=float, default=0.5)
    pa.add_argument("--frac-k", type=int, default=None)
    pa.add_argument("--decomp-n", type=int, default=1024)
    pa.add_argument("--remainder-n", type=int, default=4096)
    pa.add_argument("--remainder-paths", type=int, default=100)
    pa.add_argument("--empirical-steps", type=int, default=0,
                    help="total increments for the empirical diffusion (0 = skip)")
    pa.add_argument("--empirical-len", type=int, default=100_000)
    pa.set_defaults(func=cmd_analyze)

    pl = sub.add_parser("lil", help="long-run law-of-iterated-logarithm experiment")
    pl.add_argument("spec")
    common(pl)
    pl.add_argument("--n-max", type=int, default=1_000_000)
    pl.add_argument("--rho", type=float, default=1.05)
    pl.add_argument("--replicas", type=int, default=1)
    pl.add_argument("--workers", type=int, default=1)
    pl.add_argument("--centered", action="store_true",
                    help="subtract the exact conditional mean from S_n")
    pl.add_argument("--no-dist", action="store_true",
                    help="skip the Strassen-ball distance column")
    pl.add_argument("--svg", action="store_true", help="write paths.svg")
    pl.add_argument("--band-lo", type=float, default=0.70)
    pl.add_argument("--band-hi", type=float, default=1.10)
    pl.set_defaults(func=cmd_lil)

    pd = sub.add_parser("dist-k", help="Strassen-ball distance of a CSV path")
    pd.add_argument("path_csv")
    pd.add_argument("--trd", type=float, required=True)
    pd.add_argument("--out", default=None)
    pd.add_argument("--tol", action="append", metavar="NAME=VALUE")
    pd.set_defaults(func=cmd_dist_k)

    pf = sub.add_parser("frac", help="apply a fractional power of (I - Q)")
    pf.add_argument("spec")
    common(pf)
    pf.add_argument("--alpha", type=float, default=0.5)
    pf.add_argument("--frac-k", type=int, default=None)
    pf.set_defaults(func=cmd_frac)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChainError as exc:
        print(f"invalid chain spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
