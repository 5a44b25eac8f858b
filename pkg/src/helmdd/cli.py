"""Command-line interface.

    helmdd solve <config>        one grid, report plus solution dumps
    helmdd convergence <config>  all grids, errors and rates (``--verify`` checks ``expect``)
    helmdd bench <config>        scaling timings, ``--vary n`` or ``--vary N``
    helmdd cache                 ``--list`` or ``--clear`` the Q-block cache

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-threshold failure (``--verify``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .ap_solver import APSingularError
from .assembly import ELIMINATED, SUPPLEMENTAL, QBlockCache
from .harness import (ConfigError, NumericalFailure, bench_csv, bench_scaling, bench_text, check_expectations,
                      default_cache_dir, dump_solutions, load_config, run_case, solve_case)
from .solver import RankDeficientError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser):
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: config value)")
    p.add_argument("--output-dir", default=None, help="directory for reports (default: config value)")
    p.add_argument("--mode", choices=(ELIMINATED, SUPPLEMENTAL), default=None,
                   help="resolve coupling equations by elimination or append them as rows")
    p.add_argument("--mstar-override", type=int, default=None, metavar="M",
                   help="use M basis functions per side on every grid")
    p.add_argument("--cache-dir", default=None, help="Q-block cache directory")
    p.add_argument("--no-cache", action="store_true", help="do not read or write cached Q-blocks")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="helmdd", description="Difference-potentials domain decomposition "
                                                              "for the Helmholtz equation")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve a case on one grid and dump the solution")
    p.add_argument("config")
    p.add_argument("--n", type=int, default=None, help="grid size (default: finest grid of the case)")
    _common(p)
    p = sub.add_parser("convergence", help="grid convergence study")
    p.add_argument("config")
    p.add_argument("--grids", default=None, help="comma-separated grid sizes overriding the case")
    p.add_argument("--verify", action="store_true", help="check the case's expect block (exit 4 on failure)")
    _common(p)
    p = sub.add_parser("bench", help="scaling benchmark")
    p.add_argument("config")
    p.add_argument("--vary", choices=("n", "N"), default="n")
    p.add_argument("--repeats", type=int, default=3)
    _common(p)
    p = sub.add_parser("cache", help="inspect or clear the Q-block cache")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--list", action="store_true")
    g.add_argument("--clear", action="store_true")
    p.add_argument("--cache-dir", default=None)
    return ap


def _cache(args, cfg) -> QBlockCache:
    d = args.cache_dir or cfg.cache_dir or default_cache_dir()
    return QBlockCache(d, enabled=cfg.cache_enabled and not args.no_cache)


def _outdir(args, cfg) -> Path:
    return Path(args.output_dir or cfg.output_dir) / cfg.name


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    if args.command == "cache":
        cache = QBlockCache(args.cache_dir or default_cache_dir())
        if args.clear:
            print(f"removed {cache.clear()} cached blocks from {cache.directory}")
        else:
            entries = cache.entries()
            print(f"{len(entries)} cached blocks in {cache.directory}")
            for e in entries:
                key = e["key"] or {}
                print(f"  {e['file']}  k={key.get('k')} n={key.get('n')} M*={key.get('mstar')} "
                      f"{e['bytes']} bytes")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.mstar_override is not None and args.mstar_override < 4:
            raise ConfigError("--mstar-override must be at least 4")
        cache = _cache(args, cfg)
        kw = dict(mode=args.mode, mstar_override=args.mstar_override, cache=cache, threads=args.threads)
        if args.command == "solve":
            rep = solve_case(cfg, args.n, **kw)
            out = rep.write(_outdir(args, cfg))
            files = dump_solutions(rep, out / "solutions")
            sys.stdout.write(rep.to_text())
            print(f"wrote {out} ({len(files)} solution dumps)")
            return EXIT_OK
        if args.command == "convergence":
            grids = None
            if args.grids:
                try:
                    grids = [int(g) for g in args.grids.split(",")]
                except ValueError:
                    raise ConfigError(f"bad --grids value {args.grids!r}") from None
            rep = run_case(cfg, grids=grids, **kw)
            out = rep.write(_outdir(args, cfg))
            sys.stdout.write(rep.to_text())
            print(f"wrote {out}")
            if args.verify:
                checks = check_expectations(rep, cfg.expect)
                for desc, ok in checks:
                    print(f"{'PASS' if ok else 'FAIL'}  {desc}")
                if not all(ok for _, ok in checks):
                    return EXIT_THRESHOLD
            return EXIT_OK
        if args.command == "bench":
            rows = bench_scaling(cfg, args.vary, args.repeats, cache=cache, mstar=args.mstar_override)
            out = _outdir(args, cfg)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"bench_{args.vary}.csv").write_text(bench_csv(rows))
            sys.stdout.write(bench_text(rows))
            return EXIT_OK
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, APSingularError, RankDeficientError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
