"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 failure threshold exceeded
(or, for ``jitter``, any gap outside its batching band).
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .fingerprint import FingerprintError
from .sensorstack import StackError
from .covert import ChannelError

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _grid(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected comma-separated ms values") from None


def _bits(text: str) -> list[int]:
    lo, _, hi = text.partition("-")
    try:
        return [int(lo), int(hi or lo)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad bit length {text!r}; expected N or LO-HI") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sensormux", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="kind", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with ExperimentConfig fields; flags override it")
    common.add_argument("--profile", action="append", dest="profiles",
                        help="bundled profile name or TOML path (repeatable)")
    common.add_argument("--policy", help="max | per-app | quantized[:p1,p2,...]")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--sensor", action="append", dest="sensors", help="restrict to sensor (repeatable)")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--max-failure-rate", type=float, dest="max_failure_rate",
                        help="exit 2 when the failed-trial fraction exceeds this")
    common.add_argument("--out", help="aggregate CSV path; per-trial rows go next to it as *.trials.csv")
    common.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="covert-channel pulse-width sweep")
    s.add_argument("--grid", type=_grid, dest="grid_ms", help="pulse widths in ms, e.g. 50,100,150")
    s.add_argument("--bits", type=_bits, help="bit-string length N or range LO-HI (default 64)")
    c = sub.add_parser("constants", parents=[common], help="detect SDK rate constants")
    c.add_argument("--include-red", action="store_true", default=None, dest="include_red",
                   help="also run cells that are not distinguishable")
    a = sub.add_parser("apps", parents=[common], help="replay the app database")
    a.add_argument("--db", help="app database TOML (bundled table by default)")
    j = sub.add_parser("jitter", parents=[common], help="gap statistics per sensor and request class")
    j.add_argument("--samples", type=int)
    return p


def config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    keys = ("profiles", "policy", "seed", "trials", "sensors", "epsilon", "max_failure_rate", "out",
            "grid_ms", "bits", "include_red", "db", "samples")
    overrides = {k: getattr(args, k, None) for k in keys}
    if args.config:
        return harness.ExperimentConfig.from_toml(args.config, kind=args.kind, **overrides)
    return harness.ExperimentConfig(args.kind, **{k: v for k, v in overrides.items() if v is not None})


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        res = harness.run(cfg)
    except (harness.ConfigError, StackError, FingerprintError, ChannelError) as exc:
        print(f"sensormux: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"sensormux: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        agg, raw = harness.write_result(res, cfg.out)
        print(f"wrote {agg} and {raw}", file=sys.stderr)
    else:
        sys.stdout.write(harness.to_csv(res.rows))
    if cfg.kind == "apps":
        s = harness.app_summary(res.rows)
        print(f"detected {s['detected']}, unique {s['unique']}, conflicting {s['conflicting']}", file=sys.stderr)
    if cfg.kind == "jitter" and res.failures:
        print(f"sensormux: {res.failures} gaps outside their batching band", file=sys.stderr)
        return EXIT_FAILED
    if cfg.max_failure_rate is not None and res.failure_rate > cfg.max_failure_rate:
        print(f"sensormux: failure rate {res.failure_rate:.3f} exceeds {cfg.max_failure_rate}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
