"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure
(non-convergence), 3 file I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .amp import AmpRunConfig, PolicyFromSe, SureTuned, amp_run, trajectory_rows
from .experiments import (
    ConfigError,
    ExperimentIOError,
    builtin_experiments,
    get_preset,
    load_spec,
    run_experiment,
)
from .lasso import MaxIterations, lasso_path, path_rows
from .problem_gen import GenConfig, SignalPrior, generate, save_instance
from .state_evolution import (
    FixedChi,
    NonConvergence,
    OptimalGreedy,
    SeConfig,
    admissible_chi_grid,
    lambda_path,
    se_fixed_point,
)
from .sure import TunerConfig, delta_scan, sure_curve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("amptune")


# ----------------------------------------------------------------- helpers


def _prior(args) -> SignalPrior:
    if args.prior:
        try:
            pairs = json.loads(args.prior)
            return SignalPrior(tuple((float(v), float(q)) for v, q in pairs))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"--prior must be a JSON list of [value, prob] pairs: {exc}") from exc
    return SignalPrior(((1.0, 1.0),))


def _gen_config(args) -> GenConfig:
    if getattr(args, "config", None):
        try:
            return GenConfig.from_dict(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise ExperimentIOError(f"cannot read {args.config}: {exc}") from exc
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    return GenConfig(
        p=args.p,
        delta=args.delta,
        rho=args.rho,
        prior=_prior(args),
        sigma_w=args.sigma_w,
        seed=args.seed,
    )


def _emit(rows: list[dict], args, name: str = "result") -> None:
    """Write rows to ``--out`` (a file) or stdout in the requested format."""
    if args.format == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        text = buf.getvalue()
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise ExperimentIOError(f"cannot write {args.out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
    p.add_argument("--out", default=None, help="output file (or directory for experiment)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_instance(p: argparse.ArgumentParser, *, p_default=2000, sigma_default=0.0) -> None:
    p.add_argument("--config", help="instance config JSON (overrides the flags below)")
    p.add_argument("--p", type=int, default=p_default)
    p.add_argument("--delta", type=float, default=0.85)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--sigma-w", type=float, default=sigma_default)
    p.add_argument("--prior", help='nonzero atoms as JSON, e.g. "[[1.0, 1.0]]"')


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _gen_config(args)
    inst = generate(cfg)
    if args.out:
        try:
            save_instance(inst, args.out, dump_arrays=args.dump_arrays)
        except OSError as exc:
            raise ExperimentIOError(f"cannot write {args.out}: {exc}") from exc
    row = {
        "n": cfg.n,
        "p": cfg.p,
        "k": cfg.k,
        "seed": cfg.seed,
        "norm_y": float(np.linalg.norm(inst.y)),
        "nonzeros": int(np.count_nonzero(inst.beta_o)),
    }
    out, args.out = args.out, None
    _emit([row], args)
    args.out = out
    return EXIT_OK


def cmd_amp(args) -> int:
    inst = generate(_gen_config(args))
    if args.policy == "sure":
        source = SureTuned(TunerConfig())
    elif args.policy == "chi":
        if args.chi is None:
            raise ConfigError("--policy chi needs --chi")
        source = PolicyFromSe(FixedChi(args.chi))
    else:
        source = PolicyFromSe(OptimalGreedy())
    traj = amp_run(inst, AmpRunConfig(max_iters=args.max_iters, threshold_source=source))
    _emit(trajectory_rows(traj), args)
    return EXIT_OK


def cmd_se(args) -> int:
    cfg0 = GenConfig(p=10_000, delta=args.delta, rho=args.rho, prior=_prior(args), sigma_w=args.sigma_w)
    cfg = SeConfig(cfg0.asymptotic_prior(), args.delta, args.sigma_w)
    if args.chi is not None:
        _emit([se_fixed_point(cfg, args.chi).as_row()], args)
        return EXIT_OK
    grid = admissible_chi_grid(cfg, args.num)
    _emit(lambda_path(cfg, grid).rows(), args)
    return EXIT_OK


def cmd_lasso_path(args) -> int:
    inst = generate(_gen_config(args))
    grid = np.linspace(0.0, args.lambda_max, args.num + 1)[1:]
    path = lasso_path(inst, grid)
    if any(not s.converged for s in path):
        _emit(path_rows(path, inst.beta_o), args)
        raise NonConvergence("some path points did not reach the KKT tolerance")
    _emit(path_rows(path, inst.beta_o), args)
    return EXIT_OK


def cmd_tune_demo(args) -> int:
    """SURE curve and the bisection outcome for every Delta at one AMP iteration."""
    inst = generate(_gen_config(args))
    traj = amp_run(inst, AmpRunConfig(max_iters=max(args.iteration - 1, 1)))
    state = traj[min(args.iteration - 1, len(traj) - 1)]
    tuner = TunerConfig()
    rows = []
    for d, g, r in delta_scan(state.pseudo_data, state.sigma_hat, tuner):
        rows.append({"series": "bisection", "delta": d, "gamma": g, "risk": r})
    gammas = np.linspace(0.05, 4.0, 80)
    curve = sure_curve(state.pseudo_data, state.sigma_hat, gammas)
    rows += [{"series": "sure_curve", "delta": "", "gamma": float(g), "risk": float(r)} for g, r in zip(curve.gammas, curve.estimates)]
    _emit(rows, args)
    return EXIT_OK


def cmd_experiment(args) -> int:
    target = args.target
    spec = load_spec(target) if Path(target).suffix == ".json" or Path(target).is_file() else get_preset(target)
    spec.gen = spec.gen.replace(seed=args.seed) if args.seed_given else spec.gen
    if args.replicates is not None:
        spec.replicates = args.replicates
    manifest = run_experiment(spec, args.out, threads=args.threads, fmt=args.format)
    sys.stdout.write(json.dumps({k: manifest[k] for k in ("files", "failures", "config_hash")}, indent=1) + "\n")
    return EXIT_OK


def cmd_list_presets(args) -> int:
    rows = [
        {"name": s.name, "kind": s.kind, "p": s.gen.p, "delta": s.gen.delta, "rho": s.gen.rho, "sigma_w": s.gen.sigma_w, "replicates": s.replicates}
        for s in builtin_experiments()
    ]
    _emit(rows, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amptune", description="AMP with SURE threshold tuning, state evolution and LASSO reference")
    parser.add_argument("--version", action="version", version=f"amptune {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance and save its config")
    _add_instance(p)
    _add_common(p)
    p.add_argument("--dump-arrays", action="store_true", help="also write the arrays as .npz")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("amp", help="run AMP and print the trajectory")
    _add_instance(p)
    _add_common(p)
    p.add_argument("--policy", choices=("sure", "chi", "greedy"), default="sure")
    p.add_argument("--chi", type=float)
    p.add_argument("--max-iters", type=int, default=200)
    p.set_defaults(func=cmd_amp)

    p = sub.add_parser("se", help="state-evolution lambda path or a single fixed point")
    _add_common(p)
    p.add_argument("--delta", type=float, default=0.85)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--sigma-w", type=float, default=0.2)
    p.add_argument("--prior", help='nonzero atoms as JSON, e.g. "[[1.0, 1.0]]"')
    p.add_argument("--chi", type=float, help="solve only this chi")
    p.add_argument("--num", type=int, default=200, help="chi grid size")
    p.set_defaults(func=cmd_se)

    p = sub.add_parser("lasso-path", help="coordinate-descent LASSO path")
    _add_instance(p, sigma_default=0.2)
    _add_common(p)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.add_argument("--num", type=int, default=100)
    p.set_defaults(func=cmd_lasso_path)

    p = sub.add_parser("tune-demo", help="SURE curve and Delta scan at one AMP iteration")
    _add_instance(p, sigma_default=0.2)
    _add_common(p)
    p.add_argument("--iteration", type=int, default=1)
    p.set_defaults(func=cmd_tune_demo)

    p = sub.add_parser("experiment", help="run a preset or a JSON experiment file")
    p.add_argument("target", help="preset name or path to a JSON config")
    _add_common(p)
    p.add_argument("--replicates", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("list-presets", help="list builtin experiments")
    _add_common(p)
    p.set_defaults(func=cmd_list_presets)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    args.seed_given = "--seed" in argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NonConvergence, MaxIterations) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ExperimentIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # ConfigError and dataclass validation
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
