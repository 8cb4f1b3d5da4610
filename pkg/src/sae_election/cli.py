"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .pipeline import (TARGETS, RunConfig, StageError, assemble_report, fetch_snapshot, run_pipeline,
                       summary_line)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sae-election", description="Poll-bias SAE election prediction pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*TARGETS, "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="run configuration (INI)")
        p.add_argument("--out", help="output directory, overriding the config")
        p.add_argument("--seed-override", type=int, help="replace every seed in the config")
    f = sub.add_parser("fetch", help="download a public data snapshot")
    f.add_argument("url")
    f.add_argument("dest")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        if args.command == "fetch":
            rec = fetch_snapshot(args.url, args.dest)
            print(f"{args.dest} sha256={rec['sha256']}")
            return 0
        if args.command == "report" and not args.config:
            if not args.out:
                print("error: report needs --config or --out", file=sys.stderr)
                return 2
            print(assemble_report(args.out))
            return 0
        cfg = RunConfig.from_file(args.config)
        if args.out:
            cfg = replace(cfg, output_dir=Path(args.out))
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        if args.command == "report":
            print(assemble_report(cfg.output_dir))
            return 0
        st = run_pipeline(cfg, args.command)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if st.tallies:
        print(summary_line(st))
    print(f"outputs written to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
