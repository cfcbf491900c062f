"""Command-line entry point: ``diffasr <subcommand> --config C --seed N --out DIR``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import EXIT_OK, EXIT_USAGE, SYSTEMS, HarnessError, PipelineConfig, Run


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (merged over defaults)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="diffasr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate corpus, manifests and mixtures")
    s.add_argument("--dataset", action="append", help="dataset name (repeatable; default all)")
    s = sub.add_parser("run-frontend", parents=[common], help="write ch-0 / ch-x / STD caches")
    s.add_argument("--dataset", action="append")
    s.add_argument("--variant", action="append", help="restrict caches to these ASR variants")
    sub.add_parser("train-std", parents=[common], help="train the side-talk detector")
    s = sub.add_parser("train-asr", parents=[common], help="train one or more ASR systems")
    s.add_argument("--system", action="append", choices=list(SYSTEMS))
    s = sub.add_parser("evaluate", parents=[common], help="decode eval sets and score WER")
    s.add_argument("--system", action="append", choices=list(SYSTEMS))
    s.add_argument("--dataset", action="append")
    s = sub.add_parser("compare", parents=[common], help="write the system comparison report")
    s.add_argument("--strict", action="store_true", help="fail when any configured system lacks results")
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(PipelineConfig.load(args.config, args.seed), args.out)
        cfg = run.config
        if args.command == "simulate":
            for name, rows in run.simulate(args.dataset).items():
                print(f"{name}: {len(rows)} mixtures")
        elif args.command == "run-frontend":
            for name in args.dataset or list(cfg["datasets"]):
                print(f"{name}: {run.run_frontend(name, args.variant)}")
        elif args.command == "train-std":
            print(json.dumps(run.train_std()))
        elif args.command == "train-asr":
            for system in args.system or cfg["systems"]:
                print(json.dumps(run.train_asr(system)))
        elif args.command == "evaluate":
            for system in args.system or cfg["systems"]:
                for ds in args.dataset or cfg["eval_sets"]:
                    print(run.evaluate(system, ds))
        elif args.command == "compare":
            rows, absent = run.compare(strict=args.strict)
            for row in rows:
                print(row)
            if absent:
                print("absent: " + ", ".join(absent), file=sys.stderr)
    except HarnessError as err:
        print(f"diffasr: error: {err}", file=sys.stderr)
        return err.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
