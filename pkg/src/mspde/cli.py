"""Command-line entry point.

Subcommands: simulate, average, poisson, sigma, deviate, rates-strong,
rates-weak, galerkin, check.  Exit codes: 0 pass, 1 hard failure,
2 inconclusive (Monte Carlo harnesses need the third state).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ._version import __version__
from .averaging import ErgodicBudget, estimate_Fbar
from .config import load_config
from .deviation import PHI_BUILTINS, estimate_sigma, simulate_Zbar_ensemble, weak_error
from .errors import ConfigurationError, RunFailure
from .experiments import (
    emit_outputs,
    run_assumption_check,
    run_galerkin_convergence,
    run_strong_rate,
    run_weak_rate,
)
from .integrators import Ensemble, SimOptions, simulate_bundle
from .poisson import PoissonBudget, PoissonProblem, solve_poisson_vector
from .rngutil import substream


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _vector(s: str) -> np.ndarray:
    return np.array([float(tok) for tok in s.split(",") if tok.strip()])


def _apply_threads(threads: int):
    if threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _common(sub):
    sub.add_argument("--config", help="path to a key = value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--profile", choices=("desk", "full"), default=None)


def _load(args) -> "SimConfig":
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "profile": args.profile,
        "threads": args.threads if args.threads is not None else None,
    }
    cfg = load_config(args.config, overrides)
    threads = cfg.threads or int(os.environ.get("MSPDE_THREADS", "0") or 0)
    _apply_threads(threads)
    return cfg


def _emit_status(report) -> int:
    print(f"[{report.experiment}] status={report.status}")
    for key, fit in report.fits.items():
        if "slope" in fit:
            print(f"  {key}: slope={fit['slope']:.4f} (se {fit['slope_se']:.4f}) "
                  f"r2={fit['r2']:.4f}")
        else:
            print(f"  {key}: {fit}")
    return {"pass": 0, "fail": 1, "inconclusive": 2}[report.status]


def cmd_simulate(args) -> int:
    cfg = _load(args)
    model = cfg.build()
    eps = args.epsilon if args.epsilon is not None else max(cfg.epsilons)
    dt = cfg.dt_for(eps)
    opts = SimOptions(n_outputs=cfg.n_outputs, gammas=tuple(cfg.gammas))
    bundle = simulate_bundle(model, eps, cfg.T, dt, substream(cfg.seed, "simulate"), opts)
    paths = emit_outputs([], cfg.out_dir, cfg, bundle=bundle)
    print(f"simulated eps={eps:g} dt={dt:g} steps={int(round(cfg.T / dt))}")
    for g, v in bundle.sup_gamma_dist.items():
        print(f"  sup_t ||(-A)^{g:g} (X - Xbar)|| = {v:.6g}")
    print(f"wrote {paths['trajectories']}")
    return 0


def cmd_average(args) -> int:
    cfg = _load(args)
    model = cfg.build()
    x = _vector(args.x) if args.x else np.zeros(model.n)
    est = estimate_Fbar(model, x, ErgodicBudget(), substream(cfg.seed, "average"))
    print(json.dumps({
        "x": x.tolist(),
        "fbar": np.asarray(est.value).tolist(),
        "stderr": np.asarray(est.standard_error).tolist(),
        "burn_in_steps": est.burn_in_steps,
        "sample_steps": est.sample_steps,
    }, indent=2))
    return 0


def cmd_poisson(args) -> int:
    cfg = _load(args)
    model = cfg.build()
    if model.closed_form is None:
        raise ConfigurationError("poisson subcommand solves the drift-fluctuation "
                                 "cell problem; it needs a model with closed-form fbar")
    fbar = model.closed_form.fbar
    x = _vector(args.x) if args.x else np.zeros(model.n)
    y = _vector(args.y) if args.y else np.zeros(model.n)
    problem = PoissonProblem(
        phi=lambda xx, yy: model.F.evaluate(xx, yy) - fbar(xx),
        model=model, vector=True,
    )
    sol = solve_poisson_vector(problem, x, y, PoissonBudget(replicas=args.replicas),
                               substream(cfg.seed, "poisson"))
    print(json.dumps({
        "psi": np.asarray(sol.value).tolist(),
        "stderr": np.asarray(sol.standard_error).tolist(),
        "t_star": sol.t_star,
        "replicas": sol.replicas,
        "tail_bound": sol.tail_bound,
    }, indent=2))
    return 0


def cmd_sigma(args) -> int:
    cfg = _load(args)
    model = cfg.build()
    if model.closed_form is None and args.psi_mode == "closed":
        raise ConfigurationError("closed psi mode needs the solvable benchmark")
    fbar = model.closed_form.fbar if model.closed_form is not None else None
    if fbar is None:
        raise ConfigurationError("sigma estimation needs an averaged-drift provider; "
                                 "use the linear benchmark or the library API")
    x = _vector(args.x) if args.x else np.zeros(model.n)
    est = estimate_sigma(model, fbar, x, seed=cfg.seed, psi_mode=args.psi_mode)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "sigma.csv")
    with open(path, "w", encoding="utf8") as fh:
        fh.write(f"# mspde {__version__} seed={cfg.seed}\n")
        fh.write("i,j,sigma,stderr\n")
        for i in range(model.n):
            for j in range(model.n):
                fh.write(f"{i + 1},{j + 1},{est.sigma[i, j]!r},{est.standard_error[i, j]!r}\n")
    print(f"clipped mass {est.clipped_mass:.3g}; ||sigma||_HS^2 = {est.hs_norm_sq:.6g}")
    print(f"wrote {path}")
    return 0


def cmd_deviate(args) -> int:
    cfg = _load(args)
    model = cfg.build()
    eps = args.epsilon if args.epsilon is not None else min(cfg.epsilons)
    res = weak_error(model, [eps, max(cfg.epsilons)], cfg.T,
                     {name: PHI_BUILTINS[name] for name in cfg.phis},
                     cfg.paths, seed=cfg.seed, dt_policy=cfg.dt_for)
    out = []
    for r in res["reports"]:
        out.append({
            "phi": r.functional, "epsilon": r.epsilon,
            "E_phi_Z": r.mean_Z, "se_Z": r.se_Z,
            "E_phi_Zbar": r.mean_Zbar, "se_Zbar": r.se_Zbar,
            "difference": r.difference, "combined_se": r.combined_se,
            "conclusive": r.conclusive,
        })
    print(json.dumps(out, indent=2))
    return 0


def cmd_rates_strong(args) -> int:
    cfg = _load(args)
    report = run_strong_rate(cfg)
    emit_outputs(report, cfg.out_dir, cfg)
    return _emit_status(report)


def cmd_rates_weak(args) -> int:
    cfg = _load(args)
    report = run_weak_rate(cfg)
    emit_outputs(report, cfg.out_dir, cfg)
    return _emit_status(report)


def cmd_galerkin(args) -> int:
    cfg = _load(args)
    report = run_galerkin_convergence(cfg)
    emit_outputs(report, cfg.out_dir, cfg)
    print(f"[galerkin] status={report.status} n_ref={report.meta.get('n_ref')}")
    return 0 if report.status == "pass" else 1


def cmd_check(args) -> int:
    cfg = _load(args)
    report = run_assumption_check(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "assumptions.json")
    with open(path, "w", encoding="utf8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=str)
    print(json.dumps(report, indent=2, sort_keys=True, default=str))
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="mspde", description=__doc__)
    p.add_argument("--version", action="version", version=f"mspde {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="one coupled+averaged bundle, trajectories.csv")
    _common(sp)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("average", help="averaged drift estimate at a point")
    _common(sp)
    sp.add_argument("--x", default=None, help="comma-separated slow coordinates")
    sp.set_defaults(func=cmd_average)

    sp = sub.add_parser("poisson", help="corrector estimate at (x, y)")
    _common(sp)
    sp.add_argument("--x", default=None)
    sp.add_argument("--y", default=None)
    sp.add_argument("--replicas", type=int, default=2048)
    sp.set_defaults(func=cmd_poisson)

    sp = sub.add_parser("sigma", help="limit diffusion factor at x, sigma.csv")
    _common(sp)
    sp.add_argument("--x", default=None)
    sp.add_argument("--psi-mode", choices=("mc", "closed"), default="mc")
    sp.set_defaults(func=cmd_sigma)

    sp = sub.add_parser("deviate", help="single-epsilon weak deviation diagnostic")
    _common(sp)
    sp.add_argument("--epsilon", type=float, default=None)
    sp.set_defaults(func=cmd_deviate)

    for name, fn, help_ in (
        ("rates-strong", cmd_rates_strong, "strong averaging-rate sweep"),
        ("rates-weak", cmd_rates_weak, "weak deviation-rate sweep"),
        ("galerkin", cmd_galerkin, "Galerkin self-convergence check"),
        ("check", cmd_check, "assumption and moment diagnostics"),
    ):
        sp = sub.add_parser(name, help=help_)
        _common(sp)
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except RunFailure as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
