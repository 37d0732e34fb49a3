"""Command-line entry point: ``adaptkv run | equiv-check | memory | inspect``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed check suite.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .cache import parse_snapshot
from .config import REGIMES, load_config
from .errors import ConfigError, NumericalFailure
from .harness import cmd_equiv_check, cmd_memory_report, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.regime:
        cfg = cfg.with_regime(args.regime)
    report = run_scenario(cfg)
    for path in report.write(args.out):
        print(path)
    s = report.summary
    print(f"regime={s['regime']} final_rer_k={s['final']['rer_k']!r} "
          f"total_deviation={s['total_deviation']!r} flushes={s['flushes']}")
    return EXIT_OK


def _cmd_equiv(args) -> int:
    result = cmd_equiv_check(args.trials, args.max_n, args.max_d, args.seed)
    print("\n".join(result.lines()))
    return EXIT_OK if result.passed else EXIT_CHECK


def _cmd_memory(args) -> int:
    rk = args.dh if args.rk is None else args.rk
    rv = rk if args.rv is None else args.rv
    try:
        lines = cmd_memory_report(args.b, args.seq, args.layers, args.kv_heads, args.dh, args.bytes, rk, rv)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print("\n".join(lines))
    return EXIT_OK


def _cmd_inspect(args) -> int:
    try:
        snap = parse_snapshot(Path(args.snapshot).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"{args.snapshot}: {e}") from e
    print(f"d_h={snap['d_h']} r_k={snap['r_k']} r_v={snap['r_v']}")
    print(f"basis versions k={snap['basis_k_version']} v={snap['basis_v_version']}")
    for name, seg in snap["segments"].items():
        print(f"  {name:<7} rows={seg['rows']:<6} bytes={seg['bytes']}")
    tok, mem = snap["tokens"], snap["memory"]
    print(f"tokens: {tok['total']} seen, {tok['stored']} stored, {tok['evicted']} evicted; flushes={snap['flushes']}")
    print(f"memory: {mem['bytes_actual']} of {mem['bytes_full']} bytes (saving {mem['saving']:.4f})")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse would exit with 2, which is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptkv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write report files")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--regime", choices=REGIMES, help="override the regime in the config")
    run.set_defaults(func=_cmd_run)

    eq = sub.add_parser("equiv-check", help="randomized logit/output equivalence checks")
    eq.add_argument("--trials", type=int, default=10_000)
    eq.add_argument("--seed", type=int, default=0)
    eq.add_argument("--max-n", type=int, default=256)
    eq.add_argument("--max-d", type=int, default=64)
    eq.set_defaults(func=_cmd_equiv)

    mem = sub.add_parser("memory", help="deployment-scale KV memory")
    mem.add_argument("--b", type=int, required=True, help="batch size")
    mem.add_argument("--seq", type=int, required=True, help="sequence length")
    mem.add_argument("--layers", type=int, required=True)
    mem.add_argument("--kv-heads", type=int, required=True)
    mem.add_argument("--dh", type=int, required=True, help="head dimension")
    mem.add_argument("--bytes", type=int, default=2, help="bytes per scalar")
    mem.add_argument("--rk", type=float, help="key rank (default: d_h)")
    mem.add_argument("--rv", type=float, help="value rank (default: r_k)")
    mem.set_defaults(func=_cmd_memory)

    ins = sub.add_parser("inspect", help="summarize a cache snapshot")
    ins.add_argument("snapshot")
    ins.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
