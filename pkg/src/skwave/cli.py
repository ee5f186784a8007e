"""Command-line entry point: ``skwave run|rerun|list-experiments|print-schema``."""

from __future__ import annotations

import argparse
import sys

from . import experiments


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="skwave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_re = sub.add_parser("rerun", help="re-run a manifest and check the results match")
    p_re.add_argument("manifest")
    p_re.add_argument("--out", help="output directory (default: <manifest dir>/rerun)")
    p_re.add_argument("--workers", type=int, help="override the worker count")
    sub.add_parser("list-experiments", help="list experiment names")
    sub.add_parser("print-schema", help="print every config key with its default")
    args = parser.parse_args(argv)

    if args.command == "run":
        return experiments.run(args.config)
    if args.command == "rerun":
        return experiments.rerun_manifest(args.manifest, args.out, args.workers)
    if args.command == "list-experiments":
        print("\n".join(experiments.EXPERIMENTS))
        return 0
    experiments.print_schema()
    return 0


if __name__ == "__main__":
    sys.exit(main())
