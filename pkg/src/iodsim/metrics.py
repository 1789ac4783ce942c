"""Metrics recomputed from a trace alone, plus CSV writers."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .zsp import AIRBORNE_MODES

TRACE_FIELDS = ("tick", "seq", "kind", "subject", "data")


class MalformedTrace(ValueError):
    pass


@dataclass
class MetricsSummary:
    trip_times: dict[str, list[int]] = field(default_factory=dict)
    groundings: int = 0
    holdings: int = 0
    handoffs: int = 0
    failed_handoffs: int = 0
    sos: int = 0
    messages: int = 0
    dropped: int = 0
    messages_per_tick: dict[tuple[int, str], int] = field(default_factory=dict)
    occupancy: dict[str, dict[str, int]] = field(default_factory=dict)
    denial_delays: dict[str, list[int]] = field(default_factory=dict)
    ticks: int = 0

    def totals(self) -> dict[str, float]:
        trips = [t for times in self.trip_times.values() for t in times]
        delays = [d for ds in self.denial_delays.values() for d in ds]
        return {
            "ticks": self.ticks,
            "trips_completed": len(trips),
            "mean_trip_time": round(sum(trips) / len(trips), 3) if trips else 0.0,
            "groundings": self.groundings,
            "holdings": self.holdings,
            "handoffs": self.handoffs,
            "failed_handoffs": self.failed_handoffs,
            "sos": self.sos,
            "messages": self.messages,
            "messages_dropped": self.dropped,
            "peak_messages_per_tick": max(self.messages_per_tick.values(), default=0),
            "denials": len(delays),
            "mean_denial_delay": round(sum(delays) / len(delays), 3) if delays else 0.0,
        }


def percentile(values: list[int], q: float) -> int:
    """Nearest-rank percentile, 0 for an empty list."""
    if not values:
        return 0
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def parse_trace(lines: Iterable[str]) -> list[dict]:
    """Decode JSON-lines trace text, checking shape and (tick, seq) order."""
    events, last = [], None
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            ev = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {n}: {exc.msg}") from None
        if not isinstance(ev, dict) or tuple(ev) != TRACE_FIELDS:
            raise MalformedTrace(f"line {n}: expected fields {TRACE_FIELDS}")
        if not isinstance(ev["tick"], int) or not isinstance(ev["seq"], int) or not isinstance(ev["data"], dict):
            raise MalformedTrace(f"line {n}: bad field types")
        key = (ev["tick"], ev["seq"])
        if last is not None and key <= last:
            raise MalformedTrace(f"line {n}: out of order {key} after {last}")
        last = key
        events.append(ev)
    return events


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return parse_trace(fh)


def stats(trace: Iterable) -> MetricsSummary:
    """Summarize a trace given as event dicts or raw JSON lines."""
    items = list(trace)
    events = parse_trace(items) if items and isinstance(items[0], str) else items
    s = MetricsSummary()
    per_tick: Counter = Counter()
    occ: dict[str, Counter] = defaultdict(Counter)
    trips: dict[str, list[int]] = defaultdict(list)
    delays: dict[str, list[int]] = defaultdict(list)
    last_tick = -1
    for ev in events:
        kind, data = ev["kind"], ev["data"]
        last_tick = max(last_tick, ev["tick"])
        if kind == "ground":
            s.groundings += 1
        elif kind == "hold_start":
            s.holdings += 1
        elif kind == "sos":
            s.sos += 1
        elif kind == "handoff":
            if data.get("status") == "Completed":
                s.handoffs += 1
            elif data.get("status") == "Failed":
                s.failed_handoffs += 1
        elif kind == "msg":
            s.messages += 1
            per_tick[(ev["tick"], data.get("zone", ""))] += 1
        elif kind == "msg_dropped":
            s.dropped += 1
        elif kind == "trip_complete":
            trips[ev["subject"]].append(data.get("duration", 0))
        elif kind == "admission" and (data.get("verdict") != "Admit" or data.get("delay", 0) > 0):
            delays[data.get("cls", "")].append(data.get("delay", 0))
        elif kind == "state" and data.get("mode") in AIRBORNE_MODES and data.get("element"):
            occ[data["element"]][ev["tick"]] += 1
    s.ticks = last_tick + 1
    s.messages_per_tick = dict(sorted(per_tick.items()))
    s.trip_times = {k: trips[k] for k in sorted(trips)}
    s.denial_delays = {k: delays[k] for k in sorted(delays)}
    for el in sorted(occ):
        series = [occ[el].get(t, 0) for t in range(s.ticks)]
        s.occupancy[el] = {"p50": percentile(series, 50), "p95": percentile(series, 95), "max": max(series)}
    return s


def write_summary_csv(summary: MetricsSummary, path) -> None:
    """Two-column metric,value CSV followed by per-drone trip rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in summary.totals().items():
            w.writerow([k, v])
        for drone, times in summary.trip_times.items():
            for i, t in enumerate(times):
                w.writerow([f"trip_time:{drone}:{i}", t])
        for cls, ds in summary.denial_delays.items():
            w.writerow([f"denial_delay_mean:{cls}", round(sum(ds) / len(ds), 3)])
        for el, pct in summary.occupancy.items():
            for name, v in pct.items():
                w.writerow([f"occupancy_{name}:{el}", v])


def write_occupancy_csv(rows: Iterable[tuple[int, str, int, int]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "element", "count", "capacity"])
        w.writerows(rows)
