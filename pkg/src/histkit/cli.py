"""Command line entry point: ``histkit validate | run | sweep``.

Exit codes: 0 every check passed, 1 a physics check failed, 2 usage or
parse error, 3 internal numerical error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from .linalg import HistkitError
from .report import FORMATS, EmitError, emit, emit_timing
from .scenario import Scenario, ScenarioError, parse_scenario, run, set_path

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("histkit")


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("HISTKIT_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ScenarioError(f"HISTKIT_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ScenarioError("thread count must be >= 1")
    return n


def _formats(text: str) -> list[str]:
    fmts = [f.strip() for f in text.split(",") if f.strip()]
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise ScenarioError(f"unknown format(s) {bad}; choose from {list(FORMATS)}")
    return fmts


def _run_one(scenario: Scenario, out_dir: str, formats: list[str], threads: int, stem: str | None = None) -> bool:
    start = time.perf_counter()
    report, prepared = run(scenario, threads)
    stem = stem or scenario.name
    emit(report, prepared.d, out_dir, formats, stem)
    emit_timing(out_dir, stem, time.perf_counter() - start)
    for name, result in report["checks"].items():
        print(f"{stem}: {name}: {'pass' if result['passed'] else 'FAIL'}")
    return report.passed


def cmd_validate(args) -> int:
    scenario = parse_scenario(args.file)
    print(f"{args.file}: valid scenario {scenario.name!r} ({len(scenario.checks)} checks)")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = parse_scenario(args.file)
    ok = _run_one(scenario, args.out, _formats(args.format), _threads(args))
    return EXIT_OK if ok else EXIT_FAIL


def _parse_values(text: str) -> list:
    text = text.strip()
    if text.startswith("["):
        values = json.loads(text)
    else:
        values = [json.loads(v) if _looks_json(v) else v for v in (s.strip() for s in text.split(","))]
    if not values:
        raise ScenarioError("--values is empty")
    return values


def _looks_json(v: str) -> bool:
    try:
        json.loads(v)
        return True
    except json.JSONDecodeError:
        return False


def _slug(value) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "_", json.dumps(value))


def cmd_sweep(args) -> int:
    base = parse_scenario(args.file)
    if len(args.param) != len(args.values):
        raise ScenarioError("give one --values list per --param")
    axes = [_parse_values(v) for v in args.values]
    raw = json.loads(open(args.file, encoding="utf-8").read())
    points = []
    for combo in itertools.product(*axes):
        data = raw
        parts = []
        for path, value in zip(args.param, combo):
            data = set_path(data, path, value)
            parts.append(f"{path}={_slug(value)}")
        try:
            scenario = Scenario.model_validate(data)
        except Exception as exc:
            raise ScenarioError(f"sweep point {', '.join(parts)}: {exc}") from None
        points.append((scenario, f"{base.name}__{'__'.join(parts)}"))
    formats = _formats(args.format)
    threads = _threads(args)

    def job(point):
        scenario, stem = point
        return _run_one(scenario, args.out, formats, 1, stem)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, points))
    else:
        results = [job(p) for p in points]
    return EXIT_OK if all(results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histkit", description="Consistent-histories scenario runner.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a scenario file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    for name, func, helptext in (("run", cmd_run, "run one scenario"),
                                 ("sweep", cmd_sweep, "run a Cartesian parameter sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--format", default="json", help="comma list of json,csv,svg (default json)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $HISTKIT_THREADS or 1)")
        if name == "sweep":
            p.add_argument("--param", action="append", required=True,
                           help="dotted path into the scenario, e.g. model.theta; repeatable")
            p.add_argument("--values", action="append", required=True,
                           help="comma list or JSON array of values for the matching --param")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, EmitError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HistkitError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArithmeticError, ValueError, MemoryError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
