"""Command line: ``fe2dyn <command> --config scenario.yaml --out results/``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fe2dyn import __version__, runner
from fe2dyn.config import load_config
from fe2dyn.errors import ConfigError

log = logging.getLogger("fe2dyn")


def _common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", type=Path, required=config_required, help="scenario YAML file")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for the Gauss-point RVE solves")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fe2dyn", description="Implicit dynamic FE² simulator for layered 1D bars")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("fe2", help="run the two-scale simulation"))
    _common(sub.add_parser("dns", help="run the phase-resolved reference simulation"))

    p = sub.add_parser("compare", help="epsilon between FE² and DNS displacement fields")
    _common(p, config_required=False)
    p.add_argument("--fe2-fields", type=Path, help="existing FE² field CSV (skips the FE² run)")
    p.add_argument("--dns-fields", type=Path, help="existing DNS field CSV (skips the DNS run)")
    p.add_argument("--u-max", type=float, help="normalization when only CSVs are given")

    p = sub.add_parser("check-tangents", help="finite-difference audit of the macroscopic moduli")
    _common(p)
    p.add_argument("--step", type=int, default=50, help="time step whose converged RVE states are audited")

    p = sub.add_parser("sweep-rve", help="unit cell and displacement-link study")
    _common(p)
    p.add_argument("--cells", type=int, nargs="+", default=[1, 3, 5, 7], help="cell counts per RVE")
    p.add_argument("--unit-cells", nargs="+", default=["A", "B"], choices=["A", "B"])
    p.add_argument("--constraints", nargs="+", default=["volume", "fixed_corners"],
                   choices=["volume", "fixed_corners"])
    p.add_argument("--no-dns", action="store_true", help="skip the DNS reference")
    return ap


def _compare(args) -> int:
    if args.fe2_fields and args.dns_fields:
        u_max = args.u_max
        if u_max is None:
            if args.config is None:
                raise ConfigError("--u-max or --config is needed to normalize epsilon")
            u_max = load_config(args.config).load.u_max
        cmp = runner.compare_series(runner.read_fields(args.fe2_fields), runner.read_fields(args.dns_fields),
                                    u_max, args.out)
        args.out.mkdir(parents=True, exist_ok=True)
    else:
        if args.config is None:
            raise ConfigError("compare needs --config, or both --fe2-fields and --dns-fields")
        fe2, _, cmp = runner.compare_scenario(load_config(args.config), args.out, args.threads)
        if fe2.failure is not None:
            log.error("FE² run failed at step %s: %s", fe2.failure_step, fe2.failure)
            print(f"epsilon_time {runner.fmt(cmp.epsilon_time)} (FE² incomplete)")
            return 2
    print(f"epsilon_time {runner.fmt(cmp.epsilon_time)} mm, relative {runner.fmt(cmp.relative)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "compare":
            return _compare(args)
        cfg = load_config(args.config)
        if args.command == "fe2":
            res = runner.run_fe2_scenario(cfg, args.out, args.threads)
        elif args.command == "dns":
            res = runner.run_dns_scenario(cfg, args.out)
        elif args.command == "check-tangents":
            rows = runner.check_tangents(cfg, args.step, args.out, args.threads)
            worst = max(a.max_rel_err for _, _, a in rows)
            print(f"audited {len(rows)} Gauss points at step {args.step}; max rel_err {worst:.3e}")
            return 0
        else:
            sw = runner.sweep_rve(cfg, args.out, tuple(args.cells), tuple(args.unit_cells),
                                  tuple(args.constraints), args.threads, with_dns=not args.no_dns)
            print((args.out / "summary.md").read_text())
            return 1 if any(o.failed for o in sw.outcomes) else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if res.failure is not None:
        print(f"failed at step {res.failure_step}: {res.failure}", file=sys.stderr)
        return 1
    print(f"completed {res.completed_steps} steps; results in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
