"""Drone agent: trajectory following, broadcasting, fuel, commands and avoidance."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping

from .airspace import (
    Box,
    Corridor,
    ElementId,
    PerformanceProfile,
    Point,
    Sphere,
    ZoneGraph,
    shortest_pathway,
)
from .messages import (
    SOS,
    AdmissionDecisionMsg,
    AdmissionRequest,
    Envelope,
    HandoffAccept,
    HandoffComplete,
    HandoffFailed,
    N2NBroadcast,
    PathwayRequest,
    PathwayResponse,
    PositionBroadcast,
    PreciseControl,
    RefuelRequest,
    RefuelResponse,
    TaskClaim,
    TaskClaimResult,
    Timer,
    TrajectoryRequest,
    TrajectoryResponse,
    ZoneDeliver,
    ZspAdvertisement,
)
from .routing import choose_zsp
from .zsp import AIRBORNE_MODES, N2N_INTERVAL, WeatherReport, element_speed, landing_spot, trajectory_for

MODES = ("Grounded", "Airborne", "Holding", "Landing", "Emergency", "Landed", "Failed")
TRANSITIONS: dict[str, frozenset[str]] = {
    "Grounded": frozenset({"Airborne"}),
    "Airborne": frozenset({"Holding", "Landing", "Emergency", "Failed"}),
    "Holding": frozenset({"Airborne", "Landing", "Emergency", "Failed"}),
    "Landing": frozenset({"Landed", "Emergency", "Failed"}),
    "Emergency": frozenset({"Landed", "Failed"}),
    "Landed": frozenset({"Grounded"}),
    "Failed": frozenset(),
}

MERGE_LOOKOUT_M = 40.0  # only yield at a vertex to traffic this close to it
SEPARATION_M = 10.0
PREDICTION_TICKS = 5
HYSTERESIS_TICKS = 3
HOLD_CAP_TICKS = 30
GROUND_DELAY_TICKS = 10
LANDING_MARGIN_TICKS = 3.0
REFUEL_FACTOR = 1.5
SOS_FACTOR = 1.0
REQUEST_AHEAD_M = 60.0
WAIT_BACKOFF_M = 25.0
RESEND_TICKS = 10
PREVIEW_TICKS = 5


class InvalidModeTransition(Exception):
    pass


class RejectedNotServing(Exception):
    pass


@dataclass(frozen=True)
class Snapshot:
    """What a neighbour can see of a drone: its last broadcast state."""

    drone_id: str
    element: ElementId | None
    position: Point
    velocity: tuple[float, float, float]
    mode: str
    admitted_at: int | None
    progress: float
    next_element: ElementId | None = None

    @property
    def moving(self) -> bool:
        return math.hypot(*self.velocity) > 0.1


@dataclass
class Trip:
    dst: ElementId
    requested_at: int
    task_id: str | None = None
    leg: str = "trip"


def fuel_action(fuel: float, time_to_contingency: float) -> str | None:
    """``"sos"`` below 1.0x the time to contingency, ``"refuel"`` below 1.5x."""
    if fuel < SOS_FACTOR * time_to_contingency:
        return "sos"
    if fuel < REFUEL_FACTOR * time_to_contingency:
        return "refuel"
    return None


def ground_speed(air_speed: float, wind: tuple[float, float], direction: tuple[float, float, float]) -> float:
    """Air speed plus the wind component along the horizontal heading, floored at 1 m/s."""
    dx, dy, _ = direction
    h = math.hypot(dx, dy)
    along = 0.0 if h == 0 else (wind[0] * dx + wind[1] * dy) / h
    return max(1.0, air_speed + along)


def min_separation(p: Point, v, q: Point, w, horizon: float = PREDICTION_TICKS) -> float:
    """Closest approach over ``[0, horizon]`` under constant velocity."""
    rx, ry, rz = q.x - p.x, q.y - p.y, q.z - p.z
    vx, vy, vz = w[0] - v[0], w[1] - v[1], w[2] - v[2]
    vv = vx * vx + vy * vy + vz * vz
    t = 0.0 if vv == 0 else max(0.0, min(horizon, -(rx * vx + ry * vy + rz * vz) / vv))
    return math.sqrt((rx + vx * t) ** 2 + (ry + vy * t) ** 2 + (rz + vz * t) ** 2)


def element_points(
    zone_map: ZoneGraph, seq: tuple[ElementId, ...], idx: int, profile: PerformanceProfile,
    drone_id: str, start: Point | None = None,
) -> list[Point]:
    """Waypoints a drone follows through ``seq[idx]``.

    Nodes are free-flight volumes: a drone climbs from its parking spot to
    the first airway on takeoff and flies level then descends on landing.
    """
    eid = seq[idx]
    el = zone_map[eid]
    g = el.geometry
    if isinstance(g, Box):
        spot = landing_spot(g, drone_id)
        if idx + 1 < len(seq):
            exit_ = zone_map[seq[idx + 1]].geometry.centerline[0]
            a = start or spot
            pts = [a, Point(a.x, a.y, exit_.z), exit_]
        else:
            if start is not None:
                entry = start
            elif idx > 0:
                entry = zone_map[seq[idx - 1]].geometry.centerline[-1]
            else:
                entry = g.center
            pts = [entry, Point(spot.x, spot.y, entry.z), spot]
    else:
        pts = list(trajectory_for(zone_map, seq, idx, profile).waypoints)
        if start is not None and not isinstance(g, Corridor):
            pts = [start] + pts[1:] if len(pts) > 1 else [start, pts[-1]]
    out = [pts[0]]
    for p in pts[1:]:
        if p.dist(out[-1]) > 1e-9:
            out.append(p)
    return out


def _polyline_length(pts) -> float:
    return sum(a.dist(b) for a, b in zip(pts, pts[1:]))


class Drone:
    """A drone state machine stepped once per tick by the engine."""

    def __init__(
        self,
        drone_id: str,
        owner: str,
        profile: PerformanceProfile,
        spawn: ElementId,
        spawn_map: ZoneGraph,
        roster: Mapping[str, tuple[str, ...]],
        gated: bool = True,
        weight_kg: float | None = None,
        fuel: float | None = None,
        dt: float = 1.0,
    ):
        self.drone_id = drone_id
        self.owner = owner
        self.profile = profile
        self.weight_kg = profile.weight if weight_kg is None else weight_kg
        self.fuel_remaining = profile.fuel_capacity if fuel is None else min(fuel, profile.fuel_capacity)
        self.mode = "Grounded"
        self.maps: dict[str, ZoneGraph] = {spawn_map.zone: spawn_map}
        self.zone = spawn_map.zone
        self.current_element: ElementId | None = spawn
        box = spawn_map[spawn].geometry
        self.position = landing_spot(box, drone_id)
        self.velocity = (0.0, 0.0, 0.0)
        self.progress = 0.0
        self.pathway = None
        self.route: tuple[ElementId, ...] = ()
        self.path: tuple[ElementId, ...] = (spawn,)
        self.idx = 0
        self.points: list[Point] = [self.position]
        self.wp = 1
        self.serving_zsp: str | None = None
        self.prev_serving: str | None = None
        self.prev_until = -1
        self.admitted_at: int | None = None
        self.contingency: ElementId | None = None
        self.roster = {z: tuple(sorted(ids)) for z, ids in roster.items()}
        self.gated = gated
        self.dt = dt

        self.cleared: set[ElementId] = set()
        self.requested: tuple[tuple[ElementId, ...], int] | None = None
        self.incoming: tuple[str, Any, tuple, ZoneGraph | None] | None = None
        self.trips: deque[Trip] = deque()
        self.awaiting_admission: int | None = None
        self.retry_at: int | None = None
        self.ready_at = 0
        self.hold_reason: str | None = None
        self.hold_id = 0
        self.loiter_anchor: Point | None = None
        self.loiter_phase = 0.0
        self.yielding = False
        self.clear_streak = 0
        self.refuel_requested = False
        self.emergency_target: ElementId | None = None
        self.visited: list[ElementId] = [spawn]
        self.adverts: dict[str, float] = {}
        self.delivered: dict[str, int] = {}
        self.claiming: str | None = None
        self.offers: list[tuple[str, str]] = []
        self.airborne_ticks = 0
        self.alive_ticks = 0
        self.weather = WeatherReport()
        self._cont_cache: tuple | None = None
        self._tail_cache: dict = {}

        self.rejected_commands = 0
        self.outbox: list[tuple[str, Any]] = []
        self.events: list[tuple[str, dict]] = []
        self.timers: list[tuple[int, Timer]] = []

    # --- plumbing -----------------------------------------------------------

    def send(self, dst: str | None, msg) -> None:
        if dst is not None:
            self.outbox.append((dst, msg))

    def emit(self, kind: str, **data) -> None:
        self.events.append((kind, data))

    def set_mode(self, mode: str, tick: int, reason: str = "") -> None:
        if mode == self.mode:
            return
        if mode not in TRANSITIONS[self.mode]:
            raise InvalidModeTransition(f"{self.drone_id}: {self.mode} -> {mode}")
        self.emit("mode", **{"from": self.mode, "to": mode, "reason": reason})
        self.mode = mode

    @property
    def airborne(self) -> bool:
        return self.mode in AIRBORNE_MODES

    @property
    def map(self) -> ZoneGraph:
        return self.maps[self.zone]

    def snapshot(self) -> Snapshot:
        nxt = self.path[self.idx + 1] if self.idx + 1 < len(self.path) else None
        return Snapshot(self.drone_id, self.current_element, self.position, self.velocity, self.mode,
                        self.admitted_at, self.progress, nxt)

    def assign_trip(self, dst: ElementId, tick: int, task_id: str | None = None, leg: str = "trip") -> None:
        self.trips.append(Trip(dst, tick, task_id, leg))

    def fail(self, tick: int) -> None:
        if self.airborne:
            self.set_mode("Failed", tick, "injected")
            self.velocity = (0.0, 0.0, 0.0)
            self.emit("failed", element=str(self.current_element))

    # --- step ---------------------------------------------------------------

    def step(self, tick: int, inbox=(), neighbors=(), weather: WeatherReport | None = None):
        self.outbox, self.events, self.timers = [], [], []
        if weather is not None:
            self.weather = weather
        if self.mode == "Failed":
            return
        self.alive_ticks += 1
        for env in inbox:
            self.handle(env.src if isinstance(env, Envelope) else env[0],
                        env.msg if isinstance(env, Envelope) else env[1], tick)
        if self.mode == "Failed":
            return
        if self.mode == "Landed" and self.trips and tick >= self.ready_at:
            self.set_mode("Grounded", tick, "ready")
        if self.mode == "Grounded":
            self._grounded(tick)
        if self.airborne:
            self._fly(tick, neighbors)
        if self.mode in ("Grounded", "Landed") and self.alive_ticks % N2N_INTERVAL == 0:
            for zsp in self.roster.get(self.zone, ()):
                self.send(zsp, self._n2n(tick))

    def _grounded(self, tick: int) -> None:
        if self.pathway is not None and self.admitted_at is not None:
            if not self.gated or (len(self.path) < 2 or self.path[1] in self.cleared):
                self._takeoff(tick)
            else:
                self._request_chunk(tick, (self.path[0], self.path[1]), self.serving_zsp)
            return
        if not self.trips:
            return
        if self.awaiting_admission is not None and tick - self.awaiting_admission < RESEND_TICKS:
            return
        if self.retry_at is not None and tick < self.retry_at:
            return
        trip = self.trips[0]
        if trip.dst == self.current_element:
            self._finish_trip(tick, trip.dst)
            return
        zsps = self.roster.get(self.zone, ())
        if not zsps:
            return
        target = choose_zsp({z: self.adverts.get(z, 0.0) for z in zsps})
        self.awaiting_admission = tick
        self.send(target, AdmissionRequest(self.drone_id, self.owner, self.profile, self.current_element,
                                           trip.dst, tick))

    def _takeoff(self, tick: int) -> None:
        self.set_mode("Airborne", tick, "takeoff")
        self.idx = 0
        self.points = element_points(self.map, self.path, 0, self.profile, self.drone_id, self.position)
        self.wp = 1
        self.cleared.discard(self.path[0])
        self.requested = None
        self.emit("takeoff", element=str(self.current_element), serving=self.serving_zsp)

    # --- messages -----------------------------------------------------------

    def handle(self, src: str, msg, tick: int) -> None:
        if isinstance(msg, AdmissionDecisionMsg):
            self._on_admission(src, msg, tick)
        elif isinstance(msg, TrajectoryResponse):
            if msg.granted:
                self.cleared.update(e for e in msg.elements if e in self.path or self._incoming_has(e))
                self.requested = None
        elif isinstance(msg, PathwayResponse):
            if msg.pathway is not None and self.airborne and self.mode != "Emergency":
                self._adopt(msg.pathway, msg.route or self.route, tick, reroute=msg.reroute)
        elif isinstance(msg, PreciseControl):
            try:
                self.execute_command(src, msg, tick)
            except RejectedNotServing:
                self.rejected_commands += 1
                self.emit("rejected", src=src, command=msg.command)
        elif isinstance(msg, HandoffAccept):
            if self.airborne and self.mode != "Emergency":
                self.incoming = (msg.to_zsp, msg.pathway, msg.route, msg.zone_map)
                if self.mode == "Holding" and self.hold_reason == "handoff":
                    self._end_hold(tick, "handoff-accepted")
        elif isinstance(msg, RefuelResponse):
            if msg.pathway is not None and self.mode in ("Airborne", "Holding"):
                self._adopt(msg.pathway, (), tick, reroute=True)
                self.emit("refuel_divert", station=str(msg.pathway.dst))
        elif isinstance(msg, ZoneDeliver):
            self._on_deliver(src, msg, tick)
        elif isinstance(msg, TaskClaimResult):
            self._on_claim_result(src, msg, tick)
        elif isinstance(msg, ZspAdvertisement):
            self.adverts[msg.zsp] = msg.congestion
        elif isinstance(msg, Timer):
            self._on_timer(msg, tick)

    def _incoming_has(self, eid: ElementId) -> bool:
        return self.incoming is not None and self.incoming[1] is not None and eid in self.incoming[1].sequence

    def _on_admission(self, src: str, msg: AdmissionDecisionMsg, tick: int) -> None:
        self.awaiting_admission = None
        if self.mode != "Grounded" or not self.trips:
            return
        if msg.error:
            trip = self.trips.popleft()
            self.emit("trip_rejected", dst=str(trip.dst), error=msg.error)
            while trip.task_id is not None and self.trips and self.trips[0].task_id == trip.task_id:
                dropped = self.trips.popleft()
                self.emit("trip_rejected", dst=str(dropped.dst), error="task abandoned")
            return
        if not msg.admit:
            self.retry_at = tick + msg.delay
            self.timers.append((self.retry_at, Timer("retry-admission")))
            return
        self.retry_at = None
        if msg.zone_map is not None:
            self.maps[msg.zone_map.zone] = msg.zone_map
        self.serving_zsp = src
        self.admitted_at = tick
        self.pathway = msg.pathway
        self.route = tuple(msg.route)
        self.path = msg.pathway.sequence
        self.idx = 0
        self.contingency = msg.pathway.contingency
        self._cont_cache = None
        self.requested = None

    def _on_timer(self, msg: Timer, tick: int) -> None:
        if msg.name == "hold-cap" and self.mode == "Holding" and msg.data == self.hold_id:
            self._end_hold(tick, "cap")

    def _on_deliver(self, src: str, msg: ZoneDeliver, tick: int) -> None:
        self.delivered[msg.msg_id] = self.delivered.get(msg.msg_id, 0) + 1
        try:
            task = json.loads(msg.payload.decode())
        except (ValueError, UnicodeDecodeError):
            return
        if not isinstance(task, dict) or "task_id" not in task:
            return
        self.offers.append((task["task_id"], src))
        self._claim_next(tick)

    def _claim_next(self, tick: int) -> None:
        """Claim the oldest offered task when idle; losers move on to the next offer."""
        idle = self.mode in ("Grounded", "Landed") and not self.trips and self.claiming is None
        if idle and self.offers:
            task_id, zsp = self.offers.pop(0)
            self.claiming = task_id
            self.send(zsp, TaskClaim(self.drone_id, task_id, tick))

    def _on_claim_result(self, src: str, msg: TaskClaimResult, tick: int) -> None:
        if msg.task_id == self.claiming:
            self.claiming = None
        if not msg.ok:
            self._claim_next(tick)
            return
        self.offers.clear()
        self.assign_trip(msg.pickup, tick, msg.task_id, "pickup")
        self.assign_trip(msg.dropoff, tick, msg.task_id, "dropoff")

    # --- commands ------------------------------------------------------------

    def execute_command(self, src: str, cmd: PreciseControl, tick: int) -> None:
        if src != self.serving_zsp:
            raise RejectedNotServing(f"{src} does not serve {self.drone_id}")
        if not self.airborne or self.mode == "Emergency":
            return
        if cmd.command == "Hold":
            if self.mode == "Airborne":
                self._start_hold(tick, cmd.reason or "command")
        elif cmd.command == "Resume":
            if self.mode == "Holding" and self.hold_reason != "clearance":
                self._end_hold(tick, "resume")
        elif cmd.command == "Land":
            if self.mode in ("Airborne", "Holding"):
                self._land_at(cmd.target or self._pick_contingency()[0], tick, cmd.reason or "command")
        elif cmd.command == "MoveTo" and cmd.target is not None and self.current_element is not None:
            self.send(self.serving_zsp, PathwayRequest(self.drone_id, self.current_element, cmd.target,
                                                       self.profile, self.owner))

    def _start_hold(self, tick: int, reason: str) -> None:
        self.set_mode("Holding", tick, reason)
        self.hold_reason = reason
        self.hold_id += 1
        self.loiter_anchor = self.position
        self.emit("hold_start", reason=reason, element=str(self.current_element))
        if reason != "clearance":
            self.timers.append((tick + HOLD_CAP_TICKS, Timer("hold-cap", self.hold_id)))

    def _end_hold(self, tick: int, why: str) -> None:
        self.set_mode("Airborne", tick, why)
        self.emit("hold_end", reason=self.hold_reason, why=why)
        self.hold_reason = None

    def _land_at(self, target: ElementId | None, tick: int, reason: str) -> None:
        seq = self._path_to(target) if target is not None else None
        if seq is None:
            target, seq = self._pick_contingency()
        if seq is None:
            if self.profile.hover and self.mode == "Airborne":
                self._start_hold(tick, "stranded")
            return
        if self.mode == "Holding":
            self.emit("hold_end", reason=self.hold_reason, why="land")
            self.hold_reason = None
        self.set_mode("Landing", tick, reason)
        self.emit("ground", reason=reason, target=str(target))
        self._set_path(seq)

    # --- planning helpers -------------------------------------------------------

    def _adopt(self, pathway, route, tick: int, reroute: bool = False) -> None:
        if pathway.src != self.current_element:
            return
        self.pathway = pathway
        self.route = tuple(route)
        self.contingency = pathway.contingency
        self._set_path(pathway.sequence)
        if reroute:
            self.emit("reroute", dst=str(pathway.dst))

    def _set_path(self, seq: tuple[ElementId, ...]) -> None:
        self.path = tuple(seq)
        self.idx = 0
        self._cont_cache = None
        self.requested = None
        el = self.map[self.current_element]
        if el.kind != "airway" and self.airborne:
            self.points = element_points(self.map, self.path, 0, self.profile, self.drone_id, self.position)
            self.wp = 1

    def _path_to(self, target: ElementId) -> tuple[ElementId, ...] | None:
        cur = self.current_element
        m = self.map
        if cur is None or cur not in m or target not in m:
            return None
        if cur == target:
            return (cur,)
        el = m[cur]
        if el.kind == "airway":
            found = shortest_pathway(m, el.meta.direction[1], target)
            return None if found is None else (cur,) + found[1]
        found = shortest_pathway(m, cur, target)
        return None if found is None else found[1]

    def _pick_contingency(self) -> tuple[ElementId | None, tuple[ElementId, ...] | None]:
        key = (self.current_element, self.contingency, self.mode, self.path[-1] if self.path else None)
        if self._cont_cache is not None and self._cont_cache[0] == key:
            return self._cont_cache[1]
        result: tuple = (None, None)
        if self.mode in ("Landing", "Emergency") and self.path and self.map[self.path[-1]].kind == "node":
            target = self.path[-1]
            result = (target, self.path[self.idx:])
        else:
            candidates = []
            if self.contingency is not None:
                seq = self._path_to(self.contingency)
                if seq is not None:
                    candidates.append((0, 0.0, str(self.contingency), self.contingency, seq))
            if not candidates:
                for n in self.map.vertices:
                    if n.landing:
                        seq = self._path_to(n.id)
                        if seq is not None:
                            length = sum(self.map[e].length for e in seq if self.map[e].kind == "airway")
                            candidates.append((1, length, str(n.id), n.id, seq))
            if candidates:
                best = min(candidates, key=lambda c: c[:3])
                result = (best[3], best[4])
        self._cont_cache = (key, result)
        return result

    def remaining_on_element(self) -> float:
        if self.wp >= len(self.points):
            return 0.0
        return self.position.dist(self.points[self.wp]) + _polyline_length(self.points[self.wp:])

    def time_to_contingency(self) -> float:
        target, seq = self._pick_contingency()
        if seq is None:
            return math.inf
        seq = tuple(seq)
        tail = self._tail_cache.get(seq)
        if tail is None:
            tail = sum(_polyline_length(element_points(self.map, seq, i, self.profile, self.drone_id))
                       for i in range(1, len(seq)))
            if len(self._tail_cache) > 16:
                self._tail_cache.clear()
            self._tail_cache[seq] = tail
        dist = self.remaining_on_element() + tail
        el = self.map[self.current_element]
        air = element_speed(el, self.profile)
        gs = max(1.0, air - self.weather.wind_speed)
        return dist / gs + LANDING_MARGIN_TICKS

    def commit_time(self) -> float:
        """Time to contingency once the next airway on the path is entered.

        Airways cannot be reversed, so when the drone is within two ticks of
        its next decision vertex the fuel check also prices the commitment
        to the airway after it.  Returns 0 when no commitment is imminent.
        """
        cur = self.current_element
        if cur not in self.map:
            return 0.0
        air = element_speed(self.map[cur], self.profile)
        gs = max(1.0, air - self.weather.wind_speed)
        j = self.idx + (1 if self.map[cur].kind == "airway" else 0) + 1
        if j >= len(self.path) or self.remaining_on_element() > 2 * gs * self.dt:
            return 0.0
        nxt = self.path[j]
        if nxt not in self.map or self.map[nxt].kind != "airway":
            return 0.0
        target = self._pick_contingency()[0]
        if target is None:
            return math.inf
        found = shortest_pathway(self.map, self.map[nxt].meta.direction[1], target)
        if found is None:
            return math.inf
        seq = tuple(self.path[self.idx:j + 1]) + found[1]
        tail = self._tail_cache.get(seq)
        if tail is None:
            tail = sum(_polyline_length(element_points(self.map, seq, i, self.profile, self.drone_id))
                       for i in range(1, len(seq)))
            self._tail_cache[seq] = tail
        return (self.remaining_on_element() + tail) / gs + LANDING_MARGIN_TICKS

    def check_fuel(self, tick: int) -> str | None:
        if self.mode == "Emergency" or not self.airborne:
            return None
        action = fuel_action(self.fuel_remaining, max(self.time_to_contingency(), self.commit_time()))
        if action == "sos":
            self._emergency(tick, "fuel")
        elif action == "refuel" and not self.refuel_requested and self.mode in ("Airborne", "Holding"):
            self.refuel_requested = True
            self.send(self.serving_zsp, RefuelRequest(self.drone_id, self.current_element, self.profile, self.owner))
            self.emit("refuel_request", fuel=round(self.fuel_remaining, 3))
        return action

    def _emergency(self, tick: int, reason: str) -> None:
        target, seq = self._pick_contingency()
        if self.mode == "Holding":
            self.emit("hold_end", reason=self.hold_reason, why="emergency")
            self.hold_reason = None
        self.set_mode("Emergency", tick, reason)
        self.emergency_target = target
        self.send(self.serving_zsp, SOS(self.drone_id, self.current_element, reason, tick))
        self.emit("sos", reason=reason, element=str(self.current_element))
        self.emit("emergency", target=str(target), fuel=round(self.fuel_remaining, 3))
        if seq is not None and tuple(seq) != self.path[self.idx:]:
            self._set_path(seq)

    # --- flight ---------------------------------------------------------------

    def _chunk(self) -> tuple[tuple[ElementId, ...], str | None] | None:
        n = self.idx + 1
        if n >= len(self.path):
            return None
        nxt = self.path[n]
        if nxt in self.cleared:
            return None
        if n == len(self.path) - 1 and nxt.is_gate:
            # exit gate: cleared by the next zone's provider once it has accepted us
            if self.incoming is None or self.incoming[1] is None:
                return None
            seq = self.incoming[1].sequence
            return seq[:2], self.incoming[0]
        chunk = [nxt]
        if nxt.is_vertex and n + 1 < len(self.path):
            chunk.append(self.path[n + 1])
        return tuple(chunk), self.serving_zsp

    def _request_chunk(self, tick: int, elements, dst) -> None:
        if self.requested is not None and self.requested[0] == tuple(elements) and tick - self.requested[1] < RESEND_TICKS:
            return
        self.requested = (tuple(elements), tick)
        self.send(dst, TrajectoryRequest(self.drone_id, tuple(elements), tick))

    def _blocked(self) -> bool:
        if not self.gated or self.mode == "Emergency":
            return False
        n = self.idx + 1
        return n < len(self.path) and self.path[n] not in self.cleared

    def _fly(self, tick: int, neighbors) -> None:
        self.airborne_ticks += 1
        self.check_fuel(tick)
        if self.mode != "Emergency":
            want = self._chunk()
            if want is not None and self.remaining_on_element() <= REQUEST_AHEAD_M:
                self._request_chunk(tick, *want)
        el = self.map[self.current_element] if self.current_element in self.map else None
        blocked = self._blocked()
        if self.mode == "Holding" and self.hold_reason == "clearance" and not blocked:
            self._end_hold(tick, "cleared")
        cap = math.inf
        if blocked:
            backoff = min(WAIT_BACKOFF_M, el.length / 2) if el is not None and el.kind == "airway" else 0.0
            cap = max(0.0, self.remaining_on_element() - backoff)
        yield_now = False
        if self.mode in ("Airborne", "Landing") and el is not None:
            trail, yield_now = self.avoid(neighbors, tick, trail_only=el.kind == "node")
            cap = min(cap, trail)
        start = self.position
        if self.mode == "Holding" or yield_now:
            self._loiter(el)
        else:
            self._advance(tick, cap)
            if blocked and self.mode == "Airborne" and self.remaining_on_element() <= (
                    min(WAIT_BACKOFF_M, el.length / 2) if el is not None and el.kind == "airway" else 0.0) + 1e-6:
                self._start_hold(tick, "clearance")
        if self.mode == "Failed":
            return
        self.velocity = tuple((b - a) / self.dt for a, b in zip(start, self.position))
        if self.airborne:
            self.fuel_remaining = max(0.0, self.fuel_remaining - self.dt)
            if self.fuel_remaining == 0.0 and self.mode not in ("Emergency",):
                self._emergency(tick, "fuel-exhausted")
            self._broadcast(tick)

    def _loiter(self, el) -> None:
        if self.profile.hover or el is None:
            return
        if self.loiter_anchor is None:
            self.loiter_anchor = self.position
        g = el.geometry
        r = g.radius if isinstance(g, (Corridor, Sphere)) else 10.0
        radius = min(4.0, 0.2 * r)
        self.loiter_phase += max(1.0, self.profile.max_speed * 0.25) / radius
        a = self.loiter_anchor
        self.position = Point(a.x + radius * math.cos(self.loiter_phase), a.y + radius * math.sin(self.loiter_phase), a.z)

    def _advance(self, tick: int, max_dist: float) -> None:
        if self.loiter_anchor is not None:
            self.loiter_anchor = None
        time_left = self.dt
        travelled = 0.0
        guard = 0
        while time_left > 1e-9 and guard < 64:
            guard += 1
            if self.wp >= len(self.points):
                if not self._next_element(tick):
                    break
                continue
            target = self.points[self.wp]
            seg = self.position.dist(target)
            if seg < 1e-9:
                self.wp += 1
                continue
            d = ((target.x - self.position.x) / seg, (target.y - self.position.y) / seg,
                 (target.z - self.position.z) / seg)
            el = self.map[self.current_element]
            gs = ground_speed(element_speed(el, self.profile), self.weather.wind, d)
            can = min(gs * time_left, max_dist - travelled)
            if can <= 1e-9:
                break
            if can >= seg:
                self.position = target
                self.wp += 1
                time_left -= seg / gs
                travelled += seg
            else:
                self.position = Point(self.position.x + d[0] * can, self.position.y + d[1] * can,
                                      self.position.z + d[2] * can)
                time_left -= can / gs
                travelled += can
                break
        total = _polyline_length(self.points)
        self.progress = 1.0 if total == 0 else max(0.0, min(1.0, 1.0 - self.remaining_on_element() / total))

    def _next_element(self, tick: int) -> bool:
        cur = self.path[self.idx]
        if self.idx == len(self.path) - 1:
            if self.map[cur].kind == "node":
                self._touchdown(tick)
                return False
            if cur.is_gate:
                return self._cross_gate(tick)
            return False
        nxt = self.path[self.idx + 1]
        if self._blocked():
            return False
        self.idx += 1
        self.cleared.discard(cur)
        self.current_element = nxt
        if nxt not in self.visited[-1:]:
            self.visited.append(nxt)
        self.points = element_points(self.map, self.path, self.idx, self.profile, self.drone_id, self.position)
        self.wp = 1
        if self.idx == len(self.path) - 1 and self.map[nxt].kind == "node" and self.mode == "Airborne":
            self.set_mode("Landing", tick, "arrival")
        return True

    def _cross_gate(self, tick: int) -> bool:
        gate = self.path[self.idx]
        if self.incoming is not None and self.incoming[1] is not None:
            to_zsp, pathway, route, zone_map = self.incoming
            old = self.serving_zsp
            if zone_map is not None:
                self.maps[zone_map.zone] = zone_map
            self.zone = pathway.src.zones[0] if zone_map is None else zone_map.zone
            self.prev_serving, self.serving_zsp = old, to_zsp
            self.prev_until = tick + N2N_INTERVAL
            self.incoming = None
            self.pathway = pathway
            self.route = tuple(route)
            self.contingency = pathway.contingency
            self.path = pathway.sequence
            self.idx = 0
            self._cont_cache = None
            self.requested = None
            self.points = element_points(self.map, self.path, 0, self.profile, self.drone_id, self.position)
            self.wp = 1
            self.send(to_zsp, HandoffComplete(self.drone_id, old, to_zsp, gate))
            self.send(old, HandoffComplete(self.drone_id, old, to_zsp, gate))
            self.emit("handoff", status="Completed", gate=str(gate), **{"from": old, "to": to_zsp})
            return True
        self.send(self.serving_zsp, HandoffFailed(self.drone_id, self.serving_zsp, gate))
        self.emit("handoff", status="Failed", gate=str(gate), **{"from": self.serving_zsp, "to": None})
        if self.profile.hover:
            if self.mode != "Holding":
                self._start_hold(tick, "handoff")
            return False
        self._land_at(self._pick_contingency()[0], tick, "handoff-failed")
        return self.mode == "Landing"

    def _touchdown(self, tick: int) -> None:
        node = self.path[self.idx]
        prior = self.mode
        self.set_mode("Landed", tick, "touchdown")
        self.velocity = (0.0, 0.0, 0.0)
        self.emit("landed", node=str(node), fuel=round(self.fuel_remaining, 3), via=prior)
        self.send(self.serving_zsp, self._n2n(tick))
        self.serving_zsp = None
        self.prev_serving = None
        self.pathway = None
        self.admitted_at = None
        self.cleared.clear()
        self.requested = None
        self.incoming = None
        self.refuel_requested = False
        self.hold_reason = None
        station = self.map[node].fuel_kind == self.profile.fuel_kind
        if station:
            self.fuel_remaining = self.profile.fuel_capacity
            self.emit("refuel", node=str(node))
        self.ready_at = tick + GROUND_DELAY_TICKS
        if self.trips and self.trips[0].dst == node:
            self._finish_trip(tick, node)
        elif prior == "Emergency" and not station and self.trips:
            dropped = [str(t.dst) for t in self.trips]
            self.trips.clear()
            self.emit("trip_abandoned", trips=dropped)
        self.emergency_target = None

    def _finish_trip(self, tick: int, node: ElementId) -> None:
        trip = self.trips.popleft()
        self.emit("trip_complete", dst=str(node), duration=tick - trip.requested_at, task=trip.task_id,
                  leg=trip.leg)
        if trip.leg == "dropoff" and trip.task_id is not None:
            self.emit("task_complete", task=trip.task_id, node=str(node))

    # --- avoidance ------------------------------------------------------------

    def _priority(self, mode: str, admitted_at: int | None, drone_id: str) -> tuple:
        if mode == "Emergency":
            return (-1, drone_id)
        return (admitted_at if admitted_at is not None else 10**9, drone_id)

    def avoid(self, neighbors, tick: int, trail_only: bool = False) -> tuple[float, bool]:
        """Return (distance cap for this tick, whether to yield this tick).

        The cap keeps SEPARATION_M behind traffic ahead and, when a
        higher-priority drone converges on the same vertex from another
        element, stops this drone at that vertex's boundary.  Inside nodes
        (free flight) only the in-trail part applies.
        """
        cap = math.inf
        nxt = self.path[self.idx + 1] if self.idx + 1 < len(self.path) else None
        merge = nxt if nxt is not None and nxt.kind in ("intersection", "gate") and nxt in self.map else None
        mine = self._priority(self.mode, self.admitted_at, self.drone_id)
        if self.wp < len(self.points):
            seg = self.position.dist(self.points[self.wp])
            speed = element_speed(self.map[self.current_element], self.profile)
            v = tuple(speed * (b - a) / seg for a, b in zip(self.position, self.points[self.wp])) if seg > 0 else (0, 0, 0)
        else:
            v = self.velocity
        conflict = False
        for nb in neighbors:
            if nb.drone_id == self.drone_id or nb.mode in ("Grounded", "Landed"):
                continue
            gap = self.position.dist(nb.position)
            ahead = (nb.element == self.current_element and nb.progress > self.progress) or (
                nxt is not None and nb.element == nxt)
            if ahead:
                cap = min(cap, max(0.0, gap - SEPARATION_M))
                continue
            if trail_only:
                continue
            if nb.element == self.current_element and nb.progress < self.progress:
                continue
            if (merge is not None and nb.next_element == merge and nb.element != self.current_element
                    and nb.moving and nb.mode != "Failed"
                    and self._priority(nb.mode, nb.admitted_at, nb.drone_id) < mine
                    and nb.position.dist(self.map[merge].geometry.center) < self.map[merge].geometry.radius + MERGE_LOOKOUT_M):
                radius = self.map[merge].geometry.radius
                cap = min(cap, max(0.0, self.remaining_on_element() - radius))
            if not nb.moving or nb.mode == "Failed":
                continue
            if min_separation(self.position, v, nb.position, nb.velocity) < SEPARATION_M and \
                    self._priority(nb.mode, nb.admitted_at, nb.drone_id) < mine:
                conflict = True
        if conflict:
            self.clear_streak = 0
            if not self.yielding:
                self.yielding = True
                self.emit("avoid", element=str(self.current_element))
        elif self.yielding:
            self.clear_streak += 1
            if self.clear_streak >= HYSTERESIS_TICKS:
                self.yielding = False
        return cap, self.yielding

    # --- broadcasts -----------------------------------------------------------

    def _preview(self) -> tuple[Point, ...]:
        speed = element_speed(self.map[self.current_element], self.profile) if self.current_element in self.map else 0
        out, pos, wp = [], self.position, self.wp
        for _ in range(PREVIEW_TICKS):
            budget = speed * self.dt
            while budget > 1e-9 and wp < len(self.points):
                seg = pos.dist(self.points[wp])
                if seg <= budget:
                    budget -= seg
                    pos = self.points[wp]
                    wp += 1
                else:
                    pos = pos.lerp(self.points[wp], budget / seg)
                    budget = 0
            out.append(pos)
        return tuple(out)

    def _n2n(self, tick: int) -> N2NBroadcast:
        return N2NBroadcast(
            self.drone_id, tick, self.current_element, self.progress, tuple(self.path[self.idx + 1:]),
            self.fuel_remaining, self.mode, self.position, self.owner, self.profile, self.admitted_at,
            self.serving_zsp,
        )

    def _broadcast(self, tick: int) -> None:
        future = tuple(self.path[self.idx + 1:])
        pos = PositionBroadcast(self.drone_id, tick, self.position, self.current_element, self.progress,
                                self.mode, self._preview(), future)
        targets = [self.serving_zsp]
        if self.prev_serving and tick <= self.prev_until and self.prev_serving != self.serving_zsp:
            targets.append(self.prev_serving)
        for t in targets:
            self.send(t, pos)
        if self.airborne_ticks % N2N_INTERVAL == 0:
            for t in targets:
                self.send(t, self._n2n(tick))
