"""Command-line front end.

Every subcommand also reads a JSON config file (``--config``) whose keys are
the long option names with ``-`` replaced by ``_``; explicit flags win.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .amp import AmpConfig, amp_decode, rbp_decode
from .model import InstanceError, error_metrics, generate_instance, hard_decisions, load_instance, save_instance, validate_pi
from .numerics import SupSearchConfig, gauss_engine, mc_engine
from .se import SEConfig, check_laplacian, noninformative_start, se_iterate
from .sweeps import (
    ConfigError,
    SweepConfig,
    matching_demo,
    matching_laplacian,
    parse_matching,
    records_to_csv,
    run_phase_diagram,
    threshold_table,
)
from .thresholds import kappa_binary, kappa_general_lower_bound, kappa_matching, kappa_sym

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(doc, out: str | None) -> None:
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


def _pi_or_uniform(pi, d: int) -> np.ndarray:
    return validate_pi(pi if pi else [1.0 / d] * d, d)


# ---------------------------------------------------------------------------
# Subcommand bodies


def cmd_generate(args) -> None:
    pi = _pi_or_uniform(args.pi, args.d)
    inst = generate_instance(args.n, args.d, args.alpha, pi, args.m, seed=args.seed, composition=args.composition)
    if not args.out:
        raise ConfigError("generate needs --out")
    save_instance(inst, args.out)


def cmd_decode(args) -> None:
    if not args.instance:
        raise ConfigError("decode needs --instance")
    try:
        inst = load_instance(args.instance)
    except OSError as exc:
        raise ConfigError(f"cannot read instance: {exc}") from exc
    cfg = AmpConfig(max_iter=args.max_iter, conv_tol=args.tol, damping=args.damping, track_mse=args.track_mse)
    if args.algorithm == "amp":
        res = amp_decode(inst, cfg)
        doc = {
            "iterations": res.iterations,
            "converged": res.converged,
            "mse": res.report.mse,
            "zero_one": res.report.zero_one,
            "per_iteration_mse": res.report.per_iteration_mse,
            "seed": inst.seed,
        }
        marg = res.marginals
    else:
        marg = rbp_decode(inst, cfg)
        rep = error_metrics(marg, inst)
        doc = {"iterations": None, "converged": None, "mse": rep.mse, "zero_one": rep.zero_one,
               "per_iteration_mse": [], "seed": inst.seed}
    doc["hard_decisions"] = hard_decisions(marg).tolist()
    _emit_json(doc, args.out)


def _initial_point(args, pi) -> np.ndarray:
    spec = args.x0
    if spec == "noninformative":
        return noninformative_start(pi, args.kappa)
    if spec == "matching":
        if not args.matching:
            raise ConfigError("--x0 matching needs --matching r1:s1,r2:s2")
        return matching_laplacian(parse_matching(args.matching, len(pi)), len(pi))
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"--x0 must be noninformative, matching, or an existing file; got {spec!r}")
    x = np.asarray(json.loads(path.read_text()), dtype=float)
    return check_laplacian(x.reshape(len(pi), len(pi)))


def cmd_se(args) -> None:
    pi = _pi_or_uniform(args.pi, args.d)
    if args.kappa is None or args.kappa <= 0:
        raise ConfigError("se needs a positive --kappa")
    x0 = _initial_point(args, pi)
    rank = int(np.linalg.matrix_rank(x0)) if x0.any() else 0
    method = args.method
    if method == "auto":
        method = "gh" if rank <= 2 else "mc"
    engine = gauss_engine(max(rank, 1)) if method == "gh" else mc_engine(len(pi), args.samples, args.seed)
    traj = se_iterate(x0, SEConfig(args.kappa, tuple(pi), engine, max_iter=args.max_iter, fp_tol=args.fp_tol))
    _emit_json(traj.to_dict(), args.out)


def cmd_threshold(args) -> None:
    sup_cfg = SupSearchConfig()
    kind = args.kind
    if kind == "binary":
        if args.p is None or not 0.0 < args.p < 1.0:
            raise ConfigError("threshold binary needs --p in (0, 1)")
        res = kappa_binary(args.p, sup_cfg=sup_cfg)
    elif kind == "sym":
        if args.d is None or args.d < 2:
            raise ConfigError("threshold sym needs --d >= 2")
        res = kappa_sym(args.d, n_samples=args.samples)
    elif kind == "matching":
        if not args.pi or not args.pair:
            raise ConfigError("threshold matching needs --pi and --pair r,s")
        pi = validate_pi(args.pi)
        if len(args.pair) != 2 or args.pair[0] == args.pair[1] or not all(1 <= r <= len(pi) for r in args.pair):
            raise ConfigError("--pair takes two distinct 1-based indices")
        if min(pi[args.pair[0] - 1], pi[args.pair[1] - 1]) <= 0:
            raise ConfigError("both categories of --pair need positive mass")
        res = kappa_matching(args.pi, args.pair[0] - 1, args.pair[1] - 1)
    elif kind == "general-lb":
        if not args.pi:
            raise ConfigError("threshold general-lb needs --pi")
        res = kappa_general_lower_bound(args.pi, n_random=args.random_points, seed=args.seed,
                                        engine=None if len(args.pi) == 2 else mc_engine(len(args.pi), args.lb_samples, args.seed))
    else:  # table
        d_list = args.d_list or list(range(2, 11))
        text, elapsed = threshold_table(d_list, args.samples)
        _emit(text, args.out)
        print(f"threshold table: {elapsed:.1f} s", file=sys.stderr)
        return
    _emit_json(res.to_dict(), args.out)


def cmd_phase_diagram(args) -> None:
    cfg = SweepConfig(
        kappa_grid=args.kappa_grid or (),
        p_grid=args.p_grid or (),
        d=args.d,
        pi_mode=args.pi_mode,
        pi=args.pi or (),
        n=args.n,
        alpha=args.alpha,
        seeds_per_cell=args.seeds_per_cell,
        master_seed=args.seed,
        composition=args.composition,
        amp_max_iter=args.max_iter,
        se_samples=args.samples,
        workers=args.workers,
    )
    _emit(records_to_csv(run_phase_diagram(cfg)), args.out)


def cmd_matching_demo(args) -> None:
    pi = _pi_or_uniform(args.pi, args.d)
    if not args.matching:
        raise ConfigError("matching-demo needs --matching r1:s1,r2:s2")
    if not args.kappa_list:
        raise ConfigError("matching-demo needs --kappa-list")
    pairs = parse_matching(args.matching, len(pi))
    doc = matching_demo(pi, pairs, args.kappa_list, fp_tol=args.fp_tol, samples=args.samples, seed=args.seed)
    _emit_json(doc, args.out)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hqpamp", description="AMP and state evolution for the histogram query problem.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with option values; flags take precedence")
        p.add_argument("--out", help="output path (default: stdout)")
        return p

    p = common(sub.add_parser("generate", help="draw a random instance"))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--pi", type=_floats)
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--composition", choices=("iid", "exact"), default="iid")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("decode", help="run AMP (or RBP) on a stored instance"))
    p.add_argument("--instance")
    p.add_argument("--algorithm", choices=("amp", "rbp"), default="amp")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--track-mse", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = common(sub.add_parser("se", help="iterate state evolution"))
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--pi", type=_floats)
    p.add_argument("--kappa", type=float)
    p.add_argument("--x0", default="noninformative", help="noninformative | matching | path to a JSON matrix")
    p.add_argument("--matching", help="1-based pairs r1:s1,r2:s2 for --x0 matching")
    p.add_argument("--method", choices=("auto", "mc", "gh"), default="auto")
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--fp-tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_se)

    p = common(sub.add_parser("threshold", help="phase-transition thresholds"))
    p.add_argument("kind", choices=("binary", "sym", "matching", "general-lb", "table"))
    p.add_argument("--p", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--d-list", type=_ints)
    p.add_argument("--pi", type=_floats)
    p.add_argument("--pair", type=_ints, help="1-based indices r,s")
    p.add_argument("--samples", type=int, default=200_000, help="Monte Carlo samples per replicate (sym, table)")
    p.add_argument("--random-points", "--random", dest="random_points", type=int, default=200)
    p.add_argument("--lb-samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_threshold)

    p = common(sub.add_parser("phase-diagram", help="AMP versus SE over a (p, kappa) grid, as CSV"))
    p.add_argument("--p-grid", type=_floats)
    p.add_argument("--kappa-grid", type=_floats)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--pi-mode", choices=("binary-p-grid", "uniform", "explicit"), default="binary-p-grid")
    p.add_argument("--pi", type=_floats)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--seeds-per-cell", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--composition", choices=("iid", "exact"), default="exact")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_phase_diagram)

    p = common(sub.add_parser("matching-demo", help="SE from a matching start versus per-edge thresholds"))
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--pi", type=_floats)
    p.add_argument("--matching")
    p.add_argument("--kappa-list", type=_floats)
    p.add_argument("--fp-tol", type=float, default=1e-7)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_matching_demo)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known - {"command"})
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in cfg.items() if k != "command"})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        if getattr(args, "pi", None) is not None and hasattr(args, "d") and args.pi and args.command != "threshold":
            args.d = len(args.pi)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstanceError as exc:
        # malformed priors, sizes or instance files
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
