"""Command line: run, verify, validate and report."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .consensus import verify_chain
from .harness.report import EXTENSIONS, RENDERERS, RenderError, render, report_from_jsonlines
from .harness.scenario import ScenarioError, bundled, load_scenario
from .harness.sim import run

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNVERIFIED = 2

log = logging.getLogger("witnessnet")


def _configure_logging() -> None:
    level = os.environ.get("WITNESSNET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _scenario_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    candidate = bundled(arg)
    return candidate if candidate.exists() else path


def _load(arg: str):
    path = _scenario_path(arg)
    if not path.exists():
        raise ScenarioError([f"no such scenario: {arg}"])
    return load_scenario(path)


def _print_errors(exc: ScenarioError) -> None:
    for err in exc.errors:
        print(f"error: {err}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        scenario = _load(args.scenario)
    except ScenarioError as exc:
        _print_errors(exc)
        return EXIT_INVALID
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    log.info("running %s with seed %s", scenario.name, scenario.seed)
    report = run(scenario)
    body = render(report, args.format)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.chain.export(out / "ledger.jsonl")
        (out / "report.jsonl").write_bytes(render(report, "jsonlines"))
        (out / f"report.{EXTENSIONS[args.format]}").write_bytes(body)
        log.info("wrote %s", out)
    sys.stdout.write(body.decode("utf-8"))
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(args.ledger)
    if not path.is_file():
        print(f"cannot read ledger {path}", file=sys.stderr)
        return EXIT_UNVERIFIED
    check = verify_chain(path)
    if check.ok:
        print(f"ok: {check.heights} heights verified")
        return EXIT_OK
    print(f"verification failed at height {check.height}: {check.reason}")
    return EXIT_UNVERIFIED


def cmd_validate(args) -> int:
    try:
        scenario = _load(args.scenario)
    except ScenarioError as exc:
        _print_errors(exc)
        return EXIT_INVALID
    counts = scenario.echo()["counts"]
    summary = ", ".join(f"{n} {k}" for k, n in counts.items())
    print(f"valid: {scenario.name} ({summary})")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.jsonl"
    if not path.is_file():
        print(f"no report.jsonl in {args.run_dir}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = report_from_jsonlines(path.read_text())
    except (RenderError, ValueError, KeyError) as exc:
        print(f"unreadable report: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sys.stdout.write(render(report, args.format).decode("utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="witnessnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a scenario")
    p.add_argument("scenario", help="scenario file or bundled name (testnet, cycling, beacons)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="directory for ledger and report files")
    p.add_argument("--format", choices=sorted(RENDERERS), default="text")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="replay an exported ledger from genesis")
    p.add_argument("ledger")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="re-render the report of a previous run")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=sorted(RENDERERS), default="text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)
