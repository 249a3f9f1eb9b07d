"""Command-line entry point: ``rwplab <subcommand> ...``.

Exit status: 0 success, 1 input or usage error, 2 guard/precondition error,
3 solver non-convergence.  Results are JSON (or CSV where noted) written
atomically to ``--out``, or to stdout when no path is given.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .cs_space import make_space
from .ensembles import EnsembleSpec, load_operator, make_operator, read_vector, save_operator
from .exceptions import (
    ConvergenceError, GuardError, InputError, PreconditionError, RwpLabError,
)
from .output import csv_text, dumps, envelope, atomic_write

EXIT_OK, EXIT_INPUT, EXIT_GUARD, EXIT_CONVERGENCE = 0, 1, 2, 3
# arguments that never enter the config echo (output must not depend on them)
_NOT_ECHOED = {"out", "threads", "format", "out_dir", "func"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("RWPLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"RWPLAB_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise InputError("RWPLAB_THREADS must be >= 1")
        return n
    return 1


def _echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _emit(args, text):
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _emit_result(args, command, result):
    env = envelope(command, _echo(args), getattr(args, "seed", None), result)
    if getattr(args, "format", "json") == "csv":
        flat = {k: v for k, v in result.items() if not isinstance(v, (dict, list))}
        _emit(args, csv_text([flat], sorted(flat)))
    else:
        _emit(args, dumps(env))


# -- model arguments ---------------------------------------------------------

def _add_model_args(p, need_N=False):
    p.add_argument("--model", default="l1",
                   choices=["l1", "weighted", "block", "tv", "nuclear"])
    p.add_argument("--K", type=int, default=1, help="atom size (sparsity, blocks, rank)")
    p.add_argument("--N", type=int, required=need_N, help="ambient dimension")
    p.add_argument("--weights", help="weights file (weighted model), one per line")
    p.add_argument("--block-size", type=int, help="uniform block size (block model)")
    p.add_argument("--grid", help="ROWSxCOLS grid graph (tv model; default path graph)")
    p.add_argument("--shape", help="MxN matrix shape (nuclear model)")


def _pair(text, name):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise InputError(f"--{name} must look like 8x8, got {text!r}")


def _space(args, N=None):
    N = N or args.N
    m = args.model
    if m == "l1":
        return make_space("l1", N=N, K=args.K)
    if m == "weighted":
        if not args.weights:
            raise InputError("--weights is required for the weighted model")
        return make_space("weighted", weights=read_vector(args.weights), K=args.K)
    if m == "block":
        if not args.block_size:
            raise InputError("--block-size is required for the block model")
        return make_space("block", N=N, block_size=args.block_size, K=args.K)
    if m == "tv":
        if args.grid:
            return make_space("tv", grid=_pair(args.grid, "grid"), K=args.K)
        return make_space("tv", N=N, K=args.K)
    if not args.shape:
        raise InputError("--shape is required for the nuclear model")
    return make_space("nuclear", shape=_pair(args.shape, "shape"), K=args.K)


def _load_matrix(path):
    if path.endswith(".npy"):
        try:
            return np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
    return load_operator(path)


# -- subcommands -------------------------------------------------------------

def cmd_decode(args):
    from .solvers import DecodeProblem, SensingOperator, SolverConfig, decode

    op = SensingOperator.coerce(_load_matrix(args.matrix))
    space = _space(args, op.N)
    y = read_vector(args.y)
    cfg = SolverConfig(max_iters=args.max_iters, tol_primal=args.tol, tol_dual=args.tol,
                       tau=args.tau, mu=args.mu)
    res = decode(DecodeProblem(space, op, y, args.eps), cfg)
    _emit_result(args, "decode", res.as_dict())
    if not res.converged:
        raise ConvergenceError(f"decoder did not converge in {res.iterations} iterations")


def cmd_width(args):
    from .width_rwp import gaussian_width_mc

    if (args.rho is None) == (args.rho_inv is None):
        raise InputError("give exactly one of --rho and --rho-inv")
    rho = args.rho if args.rho is not None else 1.0 / args.rho_inv
    est = gaussian_width_mc(_space(args), rho, args.samples, args.confidence, args.seed,
                            n_jobs=_threads(args))
    _emit_result(args, "width", est.as_dict())


def cmd_rwp(args):
    from .width_rwp import RwpParams, rwp_search

    op = _load_matrix(args.matrix)
    op = op if hasattr(op, "matrix") else np.asarray(op)
    N = op.shape[1]
    rep = rwp_search(op, _space(args, N), RwpParams(args.rho, args.alpha), args.restarts,
                     args.seed, n_jobs=_threads(args))
    _emit_result(args, "rwp", rep.as_dict())


def cmd_rip(args):
    from .width_rwp import rip_enumerate

    rep = rip_enumerate(_load_matrix(args.matrix), args.J, mode=args.mode,
                        samples=args.samples, seed=args.seed)
    _emit_result(args, "rip", rep.as_dict())


def cmd_grassmann(args):
    from .grassmann import null_space, rwp_ball_harness, width_property_check

    op = _load_matrix(args.matrix)
    N = op.shape[1] if hasattr(op, "shape") else op.N
    space = _space(args, N)
    if args.action == "harness":
        if args.alpha is None:
            raise InputError("--alpha is required for the harness")
        rep = rwp_ball_harness(op, space, args.rho, args.alpha, args.trials, args.seed,
                               restarts=args.restarts)
    else:
        rep = width_property_check(null_space(op), space, args.rho, args.restarts, args.seed)
    _emit_result(args, "grassmann", rep.as_dict())


def _read_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


def _plot_series(summary):
    """Median error against epsilon, one series per (M, K)."""
    series = {}
    for s in summary:
        key = (s["M"], s["K"])
        d = series.setdefault(key, {"label": f"M={key[0]},K={key[1]}", "M": key[0],
                                    "K": key[1], "epsilon": [], "median_error": [],
                                    "max_error": [], "median_bound": []})
        d["epsilon"].append(s["epsilon"])
        for k in ("median_error", "max_error", "median_bound"):
            d[k].append(s.get(k))
    return {"x": "epsilon", "series": [series[k] for k in sorted(series)]}


def cmd_experiment(args):
    from . import experiments as ex
    from .output import write_csv, write_json

    cfg = _read_config(args.config)
    if not isinstance(cfg, dict):
        raise InputError("experiment config must be a JSON object")
    kind = cfg.pop("experiment", "forward")
    seed = cfg.get("seed", args.seed)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    if kind == "forward":
        cfg.setdefault("seed", seed)
        sweep = ex.SweepConfig.from_dict(cfg)
        res = ex.forward_experiment(sweep, n_jobs=_threads(args))
        body = envelope("experiment", {"experiment": kind, **sweep.to_dict()}, sweep.seed,
                        res.as_dict())
        plot = _plot_series(res.summary)
        if args.out_dir:
            write_json(os.path.join(args.out_dir, "summary.json"), body)
            write_csv(os.path.join(args.out_dir, "trials.csv"), res.rows(), ex.TRIAL_FIELDS)
            write_json(os.path.join(args.out_dir, "plot_data.json"), plot)
        elif args.format == "csv":
            _emit(args, csv_text(res.rows(), ex.TRIAL_FIELDS))
        else:
            _emit(args, dumps(body))
        return
    if kind == "rwp_not_rip":
        known = {"N", "M", "J_list", "seeds", "K", "seed"}
        bad = set(cfg) - known
        if bad:
            raise InputError(f"unknown keys for rwp_not_rip: {', '.join(sorted(bad))}")
        cfg.pop("seed", None)
        if "seeds" in cfg and isinstance(cfg["seeds"], int):
            cfg["seeds"] = list(range(cfg["seeds"]))
        res = ex.rwp_not_rip_study(**cfg, n_jobs=_threads(args))
        body = envelope("experiment", {"experiment": kind, **cfg}, seed, res)
    elif kind == "converse":
        need = {"C0", "C1", "N", "M"}
        if not need <= set(cfg):
            raise InputError(f"converse config needs {', '.join(sorted(need))}")
        space = make_space(cfg.get("model", "l1"), N=cfg["N"], K=cfg.get("K", 1))
        op = make_operator(EnsembleSpec(cfg.get("ensemble", "orthonormalized"), cfg["M"],
                                        cfg["N"], seed))
        res = ex.converse_experiment(cfg["C0"], cfg["C1"], space, op,
                                     cfg.get("restarts", 20), seed, cfg.get("trials", 10))
        body = envelope("experiment", {"experiment": kind, **cfg}, seed, res)
    else:
        raise InputError(f"unknown experiment {kind!r}")
    if args.out_dir:
        write_json(os.path.join(args.out_dir, "summary.json"), body)
    else:
        _emit(args, dumps(body))


def cmd_convert(args):
    from . import width_rwp as w

    if args.from_rip:
        p = w.rip_to_rwp(args.J, args.delta)
        result = {"rho": p.rho, "alpha": p.alpha}
    elif args.guarantee:
        C0, C1 = w.guarantee_constants(w.RwpParams(args.rho, args.alpha), args.L)
        result = {"C0": C0, "C1": C1}
    elif args.converse:
        p = w.converse_constants(args.C0, args.C1)
        result = {"rho": p.rho, "alpha": p.alpha}
    elif args.cai_zhang:
        ok, t = w.cai_zhang_feasible(args.K, args.t_resolution)
        result = {"K": args.K, "feasible": ok, "witness_t": t}
    else:
        inputs = json.loads(args.budget_inputs) if args.budget_inputs else {}
        M, alpha = w.measurement_budget(args.budget, **inputs)
        result = {"M": M, "alpha": alpha}
    _emit_result(args, "convert-constants", result)


def cmd_ensemble(args):
    op = make_operator(EnsembleSpec(args.kind, args.M, args.N, args.seed))
    save_operator(args.out, op)


# -- parser ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="rwplab", description="Robust width analysis for compressed sensing.")
    p.add_argument("--version", action="version", version=f"rwplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=["json", "csv"], default="json")
        sp.add_argument("--threads", type=int, help="worker cap (env RWPLAB_THREADS)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("decode", help="sharp-norm decoding")
    _add_model_args(sp)
    sp.add_argument("--matrix", required=True, help="operator container or .npy file")
    sp.add_argument("--y", required=True, help="measurement vector, one value per line")
    sp.add_argument("--eps", type=float, default=0.0)
    sp.add_argument("--max-iters", type=int, default=5000)
    sp.add_argument("--tol", type=float, default=1e-7)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--mu", type=float)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("width", help="Monte Carlo Gaussian width")
    _add_model_args(sp, need_N=False)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--rho-inv", type=float)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--confidence", type=float, default=0.95)
    common(sp)
    sp.set_defaults(func=cmd_width)

    sp = sub.add_parser("rwp", help="search for robust width violations")
    _add_model_args(sp)
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--rho", type=float, required=True)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--restarts", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_rwp)

    sp = sub.add_parser("rip", help="restricted isometry constants by enumeration")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--J", type=int, required=True)
    sp.add_argument("--mode", choices=["exhaustive", "sample"], default="exhaustive")
    sp.add_argument("--samples", type=int, default=10000)
    common(sp)
    sp.set_defaults(func=cmd_rip)

    sp = sub.add_parser("grassmann", help="width property on null spaces")
    _add_model_args(sp)
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--action", choices=["width-check", "harness"], default="width-check")
    sp.add_argument("--rho", type=float, required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--restarts", type=int, default=10)
    common(sp)
    sp.set_defaults(func=cmd_grassmann)

    sp = sub.add_parser("experiment", help="run an experiment from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", help="write summary.json, trials.csv, plot_data.json here")
    common(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("convert-constants", help="constant conversions")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--from-rip", action="store_true", help="RIP (J, delta) to RWP")
    g.add_argument("--guarantee", action="store_true", help="RWP to (C0, C1)")
    g.add_argument("--converse", action="store_true", help="(C0, C1) to RWP")
    g.add_argument("--cai-zhang", action="store_true", help="Cai-Zhang feasibility at K")
    g.add_argument("--budget", choices=["gordon", "bowling_general", "bowling_l1"])
    sp.add_argument("--J", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--L", type=float)
    sp.add_argument("--C0", type=float)
    sp.add_argument("--C1", type=float)
    sp.add_argument("--K", type=int)
    sp.add_argument("--t-resolution", type=float, default=1e-3)
    sp.add_argument("--budget-inputs", help="JSON object of scheme inputs")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("ensemble", help="generate a sensing operator file")
    sp.add_argument("--kind", required=True,
                    choices=["gaussian_iid", "orthonormalized", "spiked", "subsampled_trig"])
    sp.add_argument("--M", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ensemble)
    return p


_REQUIRED = {
    "from_rip": ("J", "delta"),
    "guarantee": ("rho", "alpha", "L"),
    "converse": ("C0", "C1"),
    "cai_zhang": ("K",),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "convert-constants":
        for flag, names in _REQUIRED.items():
            missing = [n for n in names if getattr(args, flag) and getattr(args, n) is None]
            if missing:
                parser.error(f"--{flag.replace('_', '-')} needs "
                             + ", ".join(f"--{n}" for n in missing))
    if args.command == "width" and args.N is None and args.model not in ("nuclear", "weighted"):
        parser.error("--N is required")
    try:
        args.func(args)
    except ConvergenceError as exc:
        print(f"rwplab: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (PreconditionError, GuardError) as exc:
        print(f"rwplab: precondition failed: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InputError, ValueError, TypeError, KeyError) as exc:
        print(f"rwplab: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RwpLabError as exc:
        print(f"rwplab: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
