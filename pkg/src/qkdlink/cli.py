"""Command-line entry point.

Exit codes: 0 success, 2 clock recovery failed, 3 invalid configuration.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, to_ini
from .presets import apply_overrides, preset
from .runner import run_scenario, summary_text, sweep_loss
from .sync import SyncError

EXIT_OK, EXIT_SYNC, EXIT_CONFIG = 0, 2, 3


def _losses(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad loss list {text!r}") from None


def _count(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    return int(value)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--sync-len", type=_count, help="public prefix length in slots (1e7 accepted)")
    p.add_argument("--duration-s", type=float, help="simulated duration in seconds")
    p.add_argument("--rate-hz", type=float, help="repetition rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdlink", description="Simulate and analyze a decoy-state polarization QKD link.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--loss-db", type=float, help="channel loss override")
    _common(run)

    sweep = sub.add_parser("sweep", help="sweep the channel loss")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--loss-db", type=_losses, required=True, help="comma-separated losses")
    sweep.add_argument("--repetitions", type=int, default=1)
    sweep.add_argument("--processes", type=int, default=1)
    _common(sweep)

    pre = sub.add_parser("preset", help="run a named scenario")
    pre.add_argument("name")
    pre.add_argument("--loss-db", type=_losses, help="one loss runs a point; several run a sweep")
    pre.add_argument("--gate-ns", type=float, help="detector gate for spad_projection")
    pre.add_argument("--repetitions", type=int, default=1)
    pre.add_argument("--processes", type=int, default=1)
    pre.add_argument("--dump", action="store_true", help="print the config instead of running")
    _common(pre)
    return parser


def _sweep(cfg, losses, args) -> None:
    rows, curve = sweep_loss(cfg, losses, args.repetitions, args.processes)
    for row in rows:
        print(f"{row['loss_db']:7.2f} dB  {row['status']:<6}  skr_inf={row.get('skr_inf', float('nan'))}  skr_fk={row.get('skr_fk', '')}")
    for p in curve:
        print(f"model {p.loss_db:7.2f} dB  sifted={p.sifted_rate:.6g}/s  skr_inf={p.skr_inf:.6g}  skr_fk={p.skr_fk:.6g}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = dict(
            sync_len=args.sync_len, duration_s=args.duration_s, rate_hz=args.rate_hz, seed=args.seed, output_dir=args.out
        )
        if args.command == "preset":
            single = args.loss_db[0] if args.loss_db and len(args.loss_db) == 1 else None
            cfg = preset(args.name, loss_db=single, gate_ns=args.gate_ns, **overrides)
            if args.dump:
                sys.stdout.write(to_ini(cfg))
                return EXIT_OK
            if args.loss_db and len(args.loss_db) > 1:
                _sweep(cfg, args.loss_db, args)
                return EXIT_OK
        else:
            cfg = apply_overrides(load_config(args.config), **overrides)
            if args.command == "sweep":
                _sweep(cfg, args.loss_db, args)
                return EXIT_OK
            if args.loss_db is not None:
                cfg = apply_overrides(cfg, loss_db=args.loss_db)
        report = run_scenario(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SyncError as exc:
        print(f"sync failure: {exc}", file=sys.stderr)
        return EXIT_SYNC
    sys.stdout.write(summary_text(cfg, report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
