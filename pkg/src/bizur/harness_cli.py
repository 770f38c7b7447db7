"""
Command-line harness.

    bizur run SCENARIO [--out DIR] [--seed N] [--trace]
    bizur check [--seeds A:B] [--keys K] [--drop P] [--mutant] [--out DIR]
    bizur list

``SCENARIO`` is a YAML file or the name of a built-in scenario. Exit status is
0 on success, 1 when a safety invariant or the checker fails and 2 for
configuration or usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .checker import CheckerParams, run_check
from .scenario import SUMMARY_HEADER, ConfigError, load_scenario, run, summary_rows, sweep_runs

log = logging.getLogger("bizur")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def builtin_scenarios() -> List[str]:
    root = resources.files("bizur") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_scenario(name: str) -> str:
    path = Path(name)
    if path.exists():
        return path.read_text()
    if name in builtin_scenarios():
        return (resources.files("bizur") / "scenarios" / (name + ".yaml")).read_text()
    raise ConfigError("no such scenario file or built-in: %s" % name)


def cmd_run(args) -> int:
    try:
        cfg = load_scenario(read_scenario(args.scenario))
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    summary = [SUMMARY_HEADER]
    for value, sub in sweep_runs(cfg):
        log.info("running %s", sub["name"])
        result = run(sub, trace=args.trace)
        (out / (sub["name"] + ".csv")).write_text(result.csv())
        if args.trace:
            (out / (sub["name"] + ".trace")).write_text("\n".join(result.trace) + "\n")
        if value is not None:
            summary.extend(summary_rows(cfg["sweep"]["param"], value, result))
        print("%s: %d ops, %.1f ops/s, mean %.3f ms, p99 %.3f ms" % (
            sub["name"], len(result.acked_times), result.throughput,
            result.latency_mean_ms(), result.latency_p99_ms()))
        if result.leader_violations:
            print("SAFETY VIOLATION: two leaders for one election: %s"
                  % result.leader_violations, file=sys.stderr)
            status = EXIT_FAILED
        if result.verdict is not None and not result.verdict.ok:
            path = out / (sub["name"] + ".history")
            path.write_text(result.history.dumps())
            print("checker violation on key %r; history written to %s"
                  % (result.verdict.key, path), file=sys.stderr)
            status = EXIT_FAILED
    if cfg.get("sweep"):
        (out / (cfg["name"] + "-summary.csv")).write_text("\n".join(summary) + "\n")
    return status


def _seed_range(text: str) -> range:
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            return range(int(a), int(b))
        return range(int(text))
    except ValueError:
        raise argparse.ArgumentTypeError("expected N or A:B, got %r" % text) from None


def cmd_check(args) -> int:
    params = CheckerParams(clients=args.clients, keys=args.keys, ops_per_client=args.ops,
                           drop_rate=args.drop, kill_leader=not args.no_kill,
                           mutant=args.mutant, chaos_rate=args.chaos,
                           servers=args.servers)
    out = Path(args.out) if args.out else None
    passed = violations = other = 0
    for seed in args.seeds:
        res = run_check(seed, params)
        if res.ok:
            passed += 1
            continue
        if not res.verdict.ok:
            violations += 1
            what = "violation on key %r" % res.verdict.key
        else:
            other += 1
            what = ("leader uniqueness broken" if res.leader_violations
                    else "workload did not finish")
        print("seed %d: %s" % (seed, what))
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / ("seed-%d.history" % seed)).write_text(res.history.dumps())
    print("%d passed, %d violations, %d other failures" % (passed, violations, other))
    return EXIT_OK if passed == len(args.seeds) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bizur", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write metrics CSV")
    r.add_argument("scenario", help="YAML file or built-in scenario name")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--trace", action=argparse.BooleanOptionalAction, default=False,
                   help="write the event trace next to the CSV")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="seeded linearizability runs")
    c.add_argument("--seeds", type=_seed_range, default=range(100), help="N or A:B")
    c.add_argument("--servers", type=int, default=3)
    c.add_argument("--clients", type=int, default=8)
    c.add_argument("--keys", type=int, default=None, help="default: drawn per seed in 1..64")
    c.add_argument("--ops", type=int, default=30, help="operations per client")
    c.add_argument("--drop", type=float, default=0.05)
    c.add_argument("--chaos", type=float, default=0.0, help="chaos point probability")
    c.add_argument("--no-kill", action="store_true", help="do not kill the leader")
    c.add_argument("--mutant", action="store_true",
                   help="use the node variant without recovery write-back")
    c.add_argument("--out", help="directory for failing histories")
    c.set_defaults(func=cmd_check)

    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.set_defaults(func=lambda args: print("\n".join(builtin_scenarios())) or EXIT_OK)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
