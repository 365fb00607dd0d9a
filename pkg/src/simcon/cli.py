"""``simcon`` command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 config/usage error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import load_config
from .errors import ConfigError, NonFiniteLoss, SimconError
from .runs import SWEEP_AXES, run_experiment, run_sweep
from .verify import GRADCHECK_NAMES, LOSS_NAMES, run_gradcheck, run_oracle_diff

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-9

log = logging.getLogger("simcon")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [v for v in text.replace(",", " ").split() if v]


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _load(args):
    overrides = dict(args.set or [])
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def _report(title, results, tol):
    print(title)
    failed = []
    for name, err in results.items():
        ok = err < tol
        if not ok:
            failed.append(name)
        print(f"  {name:<12s} {err:.3e}  {'PASS' if ok else 'FAIL'}")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    report = run_gradcheck(
        instances=args.instances,
        max_batch=args.max_batch,
        max_dim=args.max_dim,
        seed=args.seed,
        corrupt=args.corrupt,
        names=tuple(args.losses or GRADCHECK_NAMES),
    )
    code = _report(f"max relative gradient error (tolerance {GRAD_TOL:g})", report, GRAD_TOL)
    print(f"{time.perf_counter() - t0:.1f}s")
    return code


def cmd_oracle_diff(args) -> int:
    report = run_oracle_diff(trials=args.trials, seed=args.seed, names=tuple(args.losses or LOSS_NAMES))
    return _report(f"max |vectorized - oracle| (tolerance {ORACLE_TOL:g})", report, ORACLE_TOL)


def cmd_train(args) -> int:
    cfg = _load(args)
    records = run_experiment(cfg)
    for rec in records:
        s = rec.summary()
        print(
            f"seed {rec.seed}: final R@1 i2t {s['final_recall_i2t']:.3f} "
            f"best {s['best_recall_i2t']:.3f} align {s['final_align_acc']:.3f}"
        )
    print(f"wrote {cfg.out_dir} (config {cfg.hash()})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    path = run_sweep(cfg, args.axis, args.values)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simcon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    g.add_argument("--instances", type=_positive, default=20)
    g.add_argument("--max-batch", type=_positive, default=8)
    g.add_argument("--max-dim", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--losses", type=_str_list, help="subset of " + ",".join(GRADCHECK_NAMES))
    # test hook: perturb one loss's analytic gradient to exercise the failure path
    g.add_argument("--corrupt", choices=GRADCHECK_NAMES, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    o = sub.add_parser("oracle-diff", help="compare vectorized losses with brute-force loops")
    o.add_argument("--trials", type=_positive, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--losses", type=_str_list, help="subset of " + ",".join(LOSS_NAMES))
    o.set_defaults(func=cmd_oracle_diff)

    for name, func, help_text in (
        ("train", cmd_train, "train one config for each seed"),
        ("sweep", cmd_sweep, "run a config across the values of one axis"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat YAML experiment config")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (overrides seeds)")
        p.add_argument(
            "--set", type=_key_value, action="append", metavar="KEY=VALUE",
            help="override any config field; repeatable",
        )
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", type=_str_list, help="comma-separated axis values")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SimconError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
