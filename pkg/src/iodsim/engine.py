"""Deterministic tick kernel: transport, timers, agent stepping and the trace.

Per tick the engine delivers the messages sent during the previous tick
(each independently dropped with the scenario loss probability), fires due
timers, spawns drones and injects scenario inputs, steps every ZSP and then
every drone in sorted id order, and finally records one ``state`` event per
spawned drone.  Each drone sees the end-of-tick snapshots of drones on its
own element and on elements up to two hops away.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .airspace import ElementId, derive_interzone
from .drone import Drone
from .messages import Envelope, TaskPost, Timer, ZonePublish
from .provider import Provider
from .scenario import Scenario
from .zsp import AIRBORNE_MODES, WeatherReport

log = logging.getLogger("iodsim")

PUBLISHER = "publisher"


@dataclass
class RunResult:
    lines: list[str]
    counters: Counter
    occupancy: list[tuple[int, str, int, int]]
    providers: dict[str, Provider] = field(default_factory=dict)
    drones: dict[str, Drone] = field(default_factory=dict)

    @property
    def events(self) -> list[dict]:
        return [json.loads(line) for line in self.lines]

    @property
    def digest(self) -> str:
        return trace_digest(self.lines)

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines:
                fh.write(line + "\n")


def trace_digest(lines) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def _plain(value):
    """Trace-safe rendering of event payload values."""
    if isinstance(value, float):
        return round(value, 3)
    if isinstance(value, ElementId):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(value[k]) for k in sorted(value)}
    return value


class Engine:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        sim = scenario.sim
        self.rng = random.Random(sim.seed)
        self.loss = sim.loss
        self.silent = frozenset(sim.silent_zsps)
        self.interzone = derive_interzone(scenario.zones.values())
        roster: dict[str, list[str]] = defaultdict(list)
        for s in scenario.zsps:
            roster[s.zone].append(s.zsp_id)
        self.roster = {z: tuple(sorted(ids)) for z, ids in roster.items()}
        self.providers = {
            s.zsp_id: Provider(s.zsp_id, s.owner, scenario.zones[s.zone], self.interzone, self.roster,
                               scenario.weather, gated=sim.admission, admission=sim.admission,
                               zone_maps=scenario.zones)
            for s in scenario.zsps
        }
        self.drones: dict[str, Drone] = {}
        self.specs = {d.drone_id: d for d in scenario.drones}
        self.capacity = {
            e.id: e.capacity for z in scenario.zones.values() for e in z.elements
        }
        adjacent: dict[ElementId, set[ElementId]] = defaultdict(set)
        for z in scenario.zones.values():
            for e in z.elements:
                adjacent[e.id] |= z.neighbors(e.id)
        # two hops, so traffic converging on a shared vertex is visible before either enters it
        self.nearby = {
            eid: sorted((near | {m for n in near for m in adjacent[n]}) - {eid})
            for eid, near in adjacent.items()
        }

        self.pending: list[Envelope] = []
        self.timers: list[tuple[int, int, str, Timer]] = []
        self.lines: list[str] = []
        self.counters: Counter = Counter()
        self.occupancy: list[tuple[int, str, int, int]] = []
        self.snapshots: dict[ElementId, list] = {}
        self.seq = 0
        self.msg_seq = 0
        self.timer_seq = 0

    # --- trace ----------------------------------------------------------------------

    def record(self, tick: int, kind: str, subject: str, data: dict) -> None:
        event = {"tick": tick, "seq": self.seq, "kind": kind, "subject": subject, "data": _plain(data)}
        self.seq += 1
        self.counters[kind] += 1
        if kind == "handoff":
            self.counters[f"handoff:{data.get('status')}"] += 1
        self.lines.append(json.dumps(event, separators=(",", ":")))

    # --- transport --------------------------------------------------------------------

    def _zone_of(self, agent: str) -> str:
        if agent in self.providers:
            return self.providers[agent].zone
        d = self.drones.get(agent)
        return d.zone if d is not None else ""

    def _post(self, src: str, outbox, tick: int) -> None:
        zone = self._zone_of(src)
        for dst, msg in outbox:
            self.pending.append(Envelope(src, dst, zone, msg, tick, self.msg_seq))
            self.msg_seq += 1

    def _deliver(self, tick: int) -> dict[str, list[Envelope]]:
        inbox: dict[str, list[Envelope]] = defaultdict(list)
        pending, self.pending = self.pending, []
        for env in pending:
            head = {"type": env.msg.type, "src": env.src, "dst": env.dst, "zone": env.zone, "sent": env.sent_at}
            drone = getattr(env.msg, "drone", None)
            if drone is not None:
                head["drone"] = drone
            reason = None
            if env.src in self.silent or env.dst in self.silent:
                reason = "silent"
            elif env.dst not in self.providers and env.dst not in self.drones:
                reason = "unknown"
            elif self.loss > 0 and self.rng.random() < self.loss:
                reason = "loss"
            if reason is None:
                self.record(tick, "msg", env.dst, head)
                inbox[env.dst].append(env)
            else:
                head["reason"] = reason
                self.record(tick, "msg_dropped", env.dst, head)
        while self.timers and self.timers[0][0] <= tick:
            _, _, agent, timer = heapq.heappop(self.timers)
            inbox[agent].append(Envelope(agent, agent, self._zone_of(agent), timer, tick))
        return inbox

    def _schedule(self, agent: str, timers) -> None:
        for at, timer in timers:
            heapq.heappush(self.timers, (at, self.timer_seq, agent, timer))
            self.timer_seq += 1

    # --- scenario inputs --------------------------------------------------------------

    def _weather(self, tick: int) -> WeatherReport:
        current = WeatherReport()
        for t, report in self.sc.weather:
            if t <= tick:
                current = report
        return current

    def _inject(self, tick: int, inbox) -> None:
        for spec in self.sc.drones:
            if spec.spawn_tick == tick:
                zone = self.sc.zones[spec.spawn.zone]
                self.drones[spec.drone_id] = Drone(
                    spec.drone_id, spec.owner, spec.profile, spec.spawn, zone, self.roster,
                    gated=self.sc.sim.admission, weight_kg=spec.weight_kg, fuel=spec.fuel,
                    dt=self.sc.sim.tick_s,
                )
                self.record(tick, "spawn", spec.drone_id, {"node": spec.spawn, "owner": spec.owner})
        for trip in self.sc.trips:
            spawn_tick = self.specs[trip.drone].spawn_tick
            if max(trip.tick, spawn_tick) == tick:
                self.drones[trip.drone].assign_trip(trip.dst, tick)
                self.record(tick, "trip_request", trip.drone, {"dst": trip.dst})
        for spec in self.sc.drones:
            if spec.fail_at == tick and spec.drone_id in self.drones:
                d = self.drones[spec.drone_id]
                d.events = []
                d.fail(tick)
                self._flush_drone(d, tick)
        for pub in self.sc.publications:
            if pub.tick == tick:
                zsp = self.roster[pub.zone][0]
                inbox[zsp].append(Envelope(PUBLISHER, zsp, pub.zone, ZonePublish(pub.msg_id, pub.zone, pub.payload,
                                                                                  pub.ttl), tick))
        for task in self.sc.tasks:
            if task.tick == tick:
                zsp = self.roster[task.zone][0]
                inbox[zsp].append(Envelope(PUBLISHER, zsp, task.zone,
                                           TaskPost(task.task_id, task.pickup, task.dropoff, task.ttl), tick))

    def _flush_drone(self, d: Drone, tick: int) -> None:
        for kind, data in d.events:
            self.record(tick, kind, d.drone_id, data)
        d.events = []

    # --- main loop ----------------------------------------------------------------------

    def _neighbors(self, d: Drone) -> list:
        el = d.current_element
        if el is None or not d.airborne:
            return []
        out = list(self.snapshots.get(el, ()))
        for other in self.nearby.get(el, ()):
            out += self.snapshots.get(other, ())
        return out

    def step(self, tick: int) -> None:
        inbox = self._deliver(tick)
        self._inject(tick, inbox)
        for zsp_id in sorted(self.providers):
            p = self.providers[zsp_id]
            p.step(tick, inbox.get(zsp_id, ()))
            for kind, data in p.events:
                self.record(tick, kind, zsp_id, data)
            self._post(zsp_id, p.outbox, tick)
            self._schedule(zsp_id, p.timers)
        weather = self._weather(tick)
        for drone_id in sorted(self.drones):
            d = self.drones[drone_id]
            d.step(tick, inbox.get(drone_id, ()), self._neighbors(d), weather)
            self._flush_drone(d, tick)
            self._post(drone_id, d.outbox, tick)
            self._schedule(drone_id, d.timers)
        snapshots: dict[ElementId, list] = defaultdict(list)
        occ: Counter = Counter()
        for drone_id in sorted(self.drones):
            d = self.drones[drone_id]
            airborne = d.mode in AIRBORNE_MODES
            self.record(tick, "state", drone_id, {
                "mode": d.mode,
                "element": d.current_element,
                "pos": d.position.as_list(),
                "serving": d.serving_zsp if airborne else None,
                "fuel": d.fuel_remaining,
            })
            if airborne:
                snapshots[d.current_element].append(d.snapshot())
                occ[d.current_element] += 1
        self.snapshots = snapshots
        for eid in sorted(occ):
            self.occupancy.append((tick, str(eid), occ[eid], self.capacity.get(eid, 0)))

    def run(self, ticks: int | None = None) -> RunResult:
        ticks = self.sc.sim.ticks if ticks is None else ticks
        for tick in range(ticks):
            self.step(tick)
            if log.isEnabledFor(logging.DEBUG) and tick % 50 == 0:
                log.debug("tick %d: %d events", tick, len(self.lines))
        return RunResult(self.lines, self.counters, self.occupancy, self.providers, self.drones)


def run(scenario: Scenario, ticks: int | None = None) -> RunResult:
    """Run ``scenario`` and return its trace, counters and occupancy table."""
    return Engine(scenario).run(ticks)
