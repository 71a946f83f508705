"""Command-line entry point.

Exit codes: 0 success, 1 invalid scenario, 2 runtime error, 64 bad usage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__, metrics
from .domain import (ScenarioError, dumps_scenario, load_scenario, validate_scenario)
from .engine import ndjson_writer
from .roughset import ALL_ATTRIBUTES, record_values
from .scheduling import BASELINE, GNM
from .simulation import replication_seed, run_experiment, run_replication

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64

DEFAULT_SCENARIO = "paper-tables.cfg"

log = logging.getLogger("gnmsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gnmsim", description="Grid scheduling simulator with node-side "
                "rough-set and case-based prediction.",
                epilog="Exit codes: 0 ok, 1 invalid scenario, 2 runtime error, 64 bad usage. "
                       "GRIDSIM_LOG sets the log level (e.g. DEBUG).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a scenario file and list violations")
    v.add_argument("scenario", help="scenario file (bundled names are found too)")

    def common(sp):
        sp.add_argument("scenario", nargs="?", default=DEFAULT_SCENARIO,
                        help=f"scenario file (default: bundled {DEFAULT_SCENARIO})")
        sp.add_argument("--seed", type=int, default=42, help="base seed (default 42)")
        sp.add_argument("--scale", type=float, default=1.0,
                        help="shrink node and task counts by this factor (default 1.0)")
        sp.add_argument("--out", default="results", help="output directory (default results/)")

    r = sub.add_parser("run", help="run every policy x group x LS x replication")
    common(r)
    r.add_argument("--reps", type=int, default=None,
                   help="replications per cell (default: the scenario's value)")
    r.add_argument("--policy", choices=(GNM, BASELINE, "both"), default="both",
                   help="scheduling policy to run (default both)")
    r.add_argument("--long", action="store_true",
                   help="also write results_long.csv (one metric per row)")
    r.add_argument("--trace", action="store_true",
                   help="write an NDJSON event log per run under traces/")
    r.add_argument("--dump-records", action="store_true",
                   help="write every node's final history table per run under records/")

    d = sub.add_parser("dump-scenario", help="print a scenario in canonical form")
    d.add_argument("scenario", nargs="?", default=DEFAULT_SCENARIO)
    d.add_argument("--scale", type=float, default=1.0)
    d.add_argument("--out", default=None, help="write to this file instead of stdout")

    t = sub.add_parser("trace", help="run one replication with the event log on")
    common(t)
    t.add_argument("--ls", required=True, help="local scheduler id")
    t.add_argument("--group", required=True, help="job group name")
    t.add_argument("--policy", choices=(GNM, BASELINE), default=GNM)
    t.add_argument("--rep", type=int, default=0, help="replication index (default 0)")
    return p


def _load(path: str, scale: float):
    sc = load_scenario(path)
    problems = validate_scenario(sc.local_schedulers, sc.job_groups, sc.params)
    if problems:
        raise ScenarioError("\n".join(problems))
    return sc.scaled(scale) if scale != 1.0 else sc


def _policies(choice: str) -> tuple:
    return (GNM, BASELINE) if choice == "both" else (choice,)


def _run_name(policy, ls, group, rep) -> str:
    return f"{policy}_{ls}_{group}_r{rep:02d}"


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    problems = validate_scenario(sc.local_schedulers, sc.job_groups, sc.params)
    for msg in problems:
        print(msg)
    if problems:
        return EXIT_INVALID
    print(f"{args.scenario}: ok ({len(sc.local_schedulers)} local schedulers, "
          f"{len(sc.job_groups)} job groups)")
    return EXIT_OK


def cmd_dump(args) -> int:
    text = dumps_scenario(_load(args.scenario, args.scale))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.scale)
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handles = []

    def trace_factory(policy, ls, group, rep):
        (out / "traces").mkdir(exist_ok=True)
        fh = open(out / "traces" / f"{_run_name(policy, ls, group, rep)}.ndjson", "w",
                  encoding="utf-8", newline="\n")
        handles.append(fh)
        return ndjson_writer(fh)

    try:
        logs = run_experiment(sc, args.seed, args.reps, _policies(args.policy),
                              trace_factory if args.trace else None,
                              keep_records=args.dump_records)
    finally:
        for fh in handles:
            fh.close()

    with open(out / "results.csv", "w", encoding="utf-8", newline="") as fh:
        metrics.write_results_csv(logs, fh)
    with open(out / "allocations.csv", "w", encoding="utf-8", newline="") as fh:
        metrics.write_allocations_csv(logs, fh)
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        metrics.write_summary_json(logs, fh)
    if args.long:
        with open(out / "results_long.csv", "w", encoding="utf-8", newline="") as fh:
            metrics.write_long_csv(logs, fh)
    if args.dump_records:
        (out / "records").mkdir(exist_ok=True)
        for l in logs:
            path = out / "records" / f"{_run_name(l.policy, l.ls_id, l.group, l.rep)}.csv"
            with open(path, "w", encoding="utf-8", newline="") as fh:
                _write_records(l.node_records, fh)
    log.info("wrote %d runs to %s", len(logs), out)
    print(f"{len(logs)} runs written to {out}")
    return EXIT_OK


def _write_records(node_records: dict, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("node_id", "task_id") + ALL_ATTRIBUTES)
    for node_id in sorted(node_records):
        for rec in node_records[node_id]:
            vals = record_values(rec)
            w.writerow([node_id, rec.task_id]
                       + ["absent" if vals[a] is None else repr(vals[a])
                          if isinstance(vals[a], float) else vals[a] for a in ALL_ATTRIBUTES])


def cmd_trace(args) -> int:
    sc = _load(args.scenario, args.scale)
    sc.ls(args.ls)
    sc.group(args.group)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = _run_name(args.policy, args.ls, args.group, args.rep)
    seed = replication_seed(args.seed, args.rep)
    with open(out / f"{name}.ndjson", "w", encoding="utf-8", newline="\n") as fh:
        run = run_replication(sc, args.ls, args.group, seed, args.policy,
                              trace=ndjson_writer(fh), rep=args.rep)
    with open(out / f"{name}_allocations.csv", "w", encoding="utf-8", newline="") as fh:
        metrics.write_allocations_csv([run], fh)
    print(f"{run.events_processed} events written to {out / (name + '.ndjson')}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "dump-scenario": cmd_dump,
            "trace": cmd_trace}


def _configure_logging() -> None:
    level = os.environ.get("GRIDSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gnmsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except KeyError as exc:
        print(f"gnmsim: unknown name {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # reported, not raised, so scripts can rely on exit codes
        log.debug("run failed", exc_info=True)
        print(f"gnmsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
