"""Command line entry point: ``seedstab {prepare,train,eval,report,all}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import RunConfig, from_dict, load_config
from .errors import (
    AllSeedsFailedError,
    ConfigError,
    DataError,
    IncompleteEvaluationError,
    InputError,
    SeedstabError,
    SuiteBuildError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ALL_FAILED = 3
EXIT_INCOMPLETE = 4

STAGES = {
    "prepare": pipeline.prepare,
    "train": pipeline.train_all,
    "eval": pipeline.evaluate_all,
    "report": pipeline.report,
    "all": pipeline.run_all,
}


def _seed_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seedstab", description="Seed-stability study for a small sentiment classifier.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run config (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (overrides config and SEEDSTAB_OUT)")
        sp.add_argument("--seeds", type=_seed_list, help="e.g. 0-9 or 0,3,5")
        sp.add_argument("--variant", choices=["vanilla", "swa", "both"])
        sp.add_argument("--parallelism", type=int)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    if args.out:
        cfg.out_dir = args.out
    if args.seeds is not None:
        cfg.seeds = args.seeds
    if args.variant:
        cfg.variants = ["vanilla", "swa"] if args.variant == "both" else [args.variant]
    if args.parallelism is not None:
        cfg.parallelism = args.parallelism
    cfg.validate()
    cfg.out_path  # fail early when no output directory is known
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        result = STAGES[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AllSeedsFailedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    except IncompleteEvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (DataError, InputError, SuiteBuildError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SeedstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
