"""``iod-sim`` command line.

Exit codes: 0 success, 1 parse or validation error, 2 a runtime invariant
was breached (the trace and metrics are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .airspace import MalformedAddress, ValidationFailed, parse_address
from .checker import check_trace
from .engine import Engine
from .metrics import MalformedTrace, read_trace, stats, write_occupancy_csv, write_summary_csv
from .routing import Unreachable
from .scenario import ParseError, load_scenario
from .zsp import ZspError

EXIT_OK, EXIT_INVALID, EXIT_BREACH = 0, 1, 2

log = logging.getLogger("iodsim")


def _setup_logging() -> None:
    level = os.environ.get("IOD_SIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(path, seed=None, ticks=None, **sim):
    sc = load_scenario(path)
    changes = {k: v for k, v in sim.items() if v is not None}
    if seed is not None:
        changes["seed"] = seed
    if ticks is not None:
        changes["ticks"] = ticks
    return sc.with_sim(**changes) if changes else sc


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    for w in sc.warnings:
        print(f"warning: {w}")
    n = sum(len(z.elements) for z in sc.zones.values())
    print(f"ok: {len(sc.zones)} zones, {n} elements, {len(sc.gates)} gates, {len(sc.drones)} drones")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.seed, args.ticks, loss=args.loss,
               admission=False if args.no_admission else None)
    result = Engine(sc).run()
    result.write_trace(args.out)
    events = result.events
    summary = stats(events)
    if args.metrics:
        write_summary_csv(summary, args.metrics)
        occ_path = args.occupancy or _sibling(args.metrics, "occupancy")
        write_occupancy_csv(result.occupancy, occ_path)
    report = check_trace(events, sc)
    print(f"digest {result.digest}")
    for k, v in summary.totals().items():
        print(f"{k} {v}")
    if not report.ok:
        print(f"invariant breach: {report.summary()}", file=sys.stderr)
        return EXIT_BREACH
    return EXIT_OK


def _sibling(path: str, tag: str) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}.{tag}.{ext}" if dot else f"{path}.{tag}"


def cmd_route(args) -> int:
    sc = _load(args.scenario)
    src, dst = parse_address(args.src), parse_address(args.dst)
    providers = Engine(sc).providers
    by_zone = {p.zone: p for _, p in sorted(providers.items(), reverse=True)}
    cur, zone = src, src.zone if not src.is_gate else next(z for z in src.zones if z in by_zone)
    route = None
    for _ in range(len(sc.zones) + 1):
        pathway, gates = by_zone[zone].plan(cur, dst)
        if route is None:
            route = gates
            print("route: " + (" -> ".join(map(str, gates)) if gates else "(same zone)"))
        print(f"{zone}: " + " -> ".join(map(str, pathway.sequence)))
        if not gates:
            return EXIT_OK
        cur = gates[0]
        zone = next(z for z in cur.zones if z != zone)
    raise Unreachable(f"{dst} not reached from {src}")


def cmd_stats(args) -> int:
    s = stats(read_trace(args.trace))
    for k, v in s.totals().items():
        print(f"{k} {v}")
    return EXIT_OK


def cmd_reservations(args) -> int:
    sc = _load(args.scenario, args.seed)
    engine = Engine(sc)
    for tick in range(args.at + 1):
        engine.step(tick)
    dumps = [engine.providers[z].dump() for z in sorted(engine.providers)]
    if args.zsp:
        dumps = [d for d in dumps if d["zsp"] == args.zsp]
    print(json.dumps({"tick": args.at, "zsps": dumps}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iod-sim", description="Internet-of-Drones airspace simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a scenario and write its trace")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--ticks", type=int)
    p.add_argument("--out", default="trace.jsonl")
    p.add_argument("--metrics", help="summary CSV path; occupancy goes next to it")
    p.add_argument("--occupancy", help="per-tick occupancy CSV path")
    p.add_argument("--no-admission", action="store_true")
    p.add_argument("--loss", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("route", help="print the pathway and gate route between two elements")
    p.add_argument("scenario")
    p.add_argument("--from", dest="src", required=True)
    p.add_argument("--to", dest="dst", required=True)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("stats", help="summarize a trace file")
    p.add_argument("trace")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("reservations", help="dump ZSP reservation tables at a tick")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--at", type=int, default=0, help="tick to stop after")
    p.add_argument("--zsp", help="only this ZSP")
    p.set_defaults(func=cmd_reservations)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailed as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, MalformedAddress, MalformedTrace, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ZspError, Unreachable) as exc:
        print(f"no route: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
