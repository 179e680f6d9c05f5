"""Command-line driver.

    miqcqp-heur classify FILE [--dump-json]
    miqcqp-heur solve FILE [options]
    miqcqp-heur bench DIR [--best-known CSV] [--out PREFIX] [options]
    miqcqp-heur compare A.json B.json
    miqcqp-heur export-corpus DIR

Exit codes: 0 solution found (or command succeeded), 2 no solution found,
1 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bench import BenchError, load_results, read_best_known, run_bench, run_compare, write_bench
from .corpus import desk_corpus
from .instance import InstanceError, classify, instance_to_json
from .pipeline import RunConfig, solve_instance
from .qplib import QplibParseError, read_qplib, write_qplib

EXIT_FOUND = 0
EXIT_USAGE = 1
EXIT_NOT_FOUND = 2


def _positive(kind):
    def parse(text: str):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v
    return parse


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1]")
    return v


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--time-limit", type=_positive(float), default=300.0, help="global budget in seconds")
    p.add_argument("--workers", type=_positive(int), default=4)
    p.add_argument("--alpha", type=_alpha, default=0.5)
    p.add_argument("--shift-rule", choices=("classic", "safe"), default="safe")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("internal", "external"), default="internal")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--eager-cut", action="store_true",
                   help="cancel sibling subproblems once one improves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miqcqp-heur",
                                     description="Primal heuristics for nonconvex MIQCQP instances")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="print the problem class of an instance")
    p.add_argument("instance")
    p.add_argument("--dump-json", action="store_true", help="print the parsed instance")

    p = sub.add_parser("solve", help="run the heuristic pipeline on one instance")
    p.add_argument("instance")
    p.add_argument("--out", help="write the result JSON here instead of stdout")
    p.add_argument("--best-known", type=float, help="best known objective for the metrics block")
    _run_options(p)

    p = sub.add_parser("bench", help="run every instance file of a directory")
    p.add_argument("directory")
    p.add_argument("--best-known", help="CSV with columns instance, objective")
    p.add_argument("--out", default="bench", help="output prefix for .csv and .json")
    _run_options(p)

    p = sub.add_parser("compare", help="compare two result files instance by instance")
    p.add_argument("results_a")
    p.add_argument("results_b")

    p = sub.add_parser("export-corpus", help="write the generated desk corpus as instance files")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=2024)
    return parser


def _config(args) -> RunConfig:
    return RunConfig(time_limit_s=args.time_limit, workers=args.workers, alpha=args.alpha,
                     shift_rule=args.shift_rule, seed=args.seed, backend=args.backend,
                     deterministic=args.deterministic, eager_cut=args.eager_cut)


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_FOUND if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "classify":
            inst = read_qplib(args.instance)
            payload = instance_to_json(inst) if args.dump_json else {
                "instance": inst.name, "class": classify(inst).value, "n": inst.n,
                "m1": inst.m1, "m2": inst.m2, "integers": int(inst.integer.sum())}
            _emit(payload, None)
            return EXIT_FOUND
        if args.command == "solve":
            inst = read_qplib(args.instance)
            res = solve_instance(inst, _config(args))
            _emit(res.to_json(args.best_known), args.out)
            return EXIT_FOUND if res.found else EXIT_NOT_FOUND
        if args.command == "bench":
            best = read_best_known(args.best_known) if args.best_known else None
            records, summary = run_bench(_config(args), args.directory, best)
            csv_path, json_path = write_bench(records, summary, args.out)
            print(json.dumps({"csv": str(csv_path), "json": str(json_path), "summary": summary}, indent=2))
            return EXIT_FOUND
        if args.command == "compare":
            _emit(run_compare(load_results(args.results_a), load_results(args.results_b)), None)
            return EXIT_FOUND
        if args.command == "export-corpus":
            out = Path(args.directory)
            out.mkdir(parents=True, exist_ok=True)
            for e in desk_corpus(args.seed):
                write_qplib(e.instance, out / f"{e.name}.qplib")
            return EXIT_FOUND
    except (QplibParseError, InstanceError, BenchError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
