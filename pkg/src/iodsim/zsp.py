"""Zone Service Provider core: map, tracking, planning and zone-level control.

:class:`ZspState` is a single-writer state machine.  Its methods are the
airspace and node-to-node layer operations; message plumbing lives in
:mod:`iodsim.provider`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .airspace import (
    Box,
    Corridor,
    Element,
    ElementId,
    PerformanceProfile,
    Point,
    Sphere,
    ZoneGraph,
    distances_to,
    meets_performance,
    shortest_pathway,
)
from .messages import N2NBroadcast, PathwayResponse, PositionBroadcast, PreciseControl, SOS

N2N_INTERVAL = 5
SILENCE_TIMEOUT = 3 * N2N_INTERVAL
QUARANTINE_TICKS = 60
DEFAULT_SPEED_LIMIT = 15.0
SAMPLE_SPACING = 25.0
AIRBORNE_MODES = frozenset({"Airborne", "Holding", "Landing", "Emergency"})


class ZspError(Exception):
    pass


class UnknownElement(ZspError):
    pass


class UnknownDrone(ZspError):
    pass


class NoPath(ZspError):
    pass


class PerformanceInsufficient(NoPath):
    pass


class AccessDenied(NoPath):
    pass


class NotOnPathway(ZspError):
    pass


class NoCompatibleStation(ZspError):
    pass


@dataclass(frozen=True)
class WeatherReport:
    wind: tuple[float, float] = (0.0, 0.0)
    temperature: float = 20.0
    valid_until: int = 2**31 - 1
    issued: int = 0

    @property
    def wind_speed(self) -> float:
        return math.hypot(*self.wind)


@dataclass
class TrackEntry:
    drone_id: str
    current_element: ElementId | None
    progress: float
    future_path: tuple[ElementId, ...]
    fuel_remaining: float
    last_broadcast: int
    position: Point
    mode: str = "Airborne"
    profile: PerformanceProfile | None = None
    owner: str = ""
    admitted_at: int | None = None

    @property
    def airborne(self) -> bool:
        return self.mode in AIRBORNE_MODES


@dataclass(frozen=True)
class Pathway:
    src: ElementId
    dst: ElementId
    elements: tuple[ElementId, ...]
    contingency: ElementId | None
    planned_at: int = 0
    length: float = 0.0
    contingency_costs: tuple[float, ...] = ()

    @property
    def sequence(self) -> tuple[ElementId, ...]:
        if self.src == self.dst and not self.elements:
            return (self.src,)
        return (self.src, *self.elements, self.dst)


@dataclass(frozen=True)
class Trajectory:
    element: ElementId
    waypoints: tuple[Point, ...]
    speeds: tuple[float, ...]

    @property
    def length(self) -> float:
        return sum(a.dist(b) for a, b in zip(self.waypoints, self.waypoints[1:]))


@dataclass(frozen=True)
class CongestionReport:
    src: ElementId
    dst: ElementId
    ratios: tuple[tuple[ElementId, float], ...]
    aggregate: float


def _sample_segments(points: Iterable[Point], spacing: float = SAMPLE_SPACING) -> list[Point]:
    pts = list(points)
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        seg = a.dist(b)
        if seg == 0:
            continue
        n = max(1, math.ceil(seg / spacing - 1e-9))
        out += [a.lerp(b, k / n) for k in range(1, n + 1)]
    return out


def landing_spot(box: Box, drone_id: str = "") -> Point:
    """Ground point inside a node; distinct drones park on a small grid."""
    c = box.center
    if not drone_id:
        return Point(c.x, c.y, box.min.z)
    slot = sum(ord(ch) * (i + 1) for i, ch in enumerate(drone_id)) % 16
    span_x = (box.max.x - box.min.x) * 0.35
    span_y = (box.max.y - box.min.y) * 0.35
    gx, gy = slot % 4, slot // 4
    return Point(c.x - span_x + gx * 2 * span_x / 3, c.y - span_y + gy * 2 * span_y / 3, box.min.z)


def element_speed(element: Element, profile: PerformanceProfile) -> float:
    limit = element.speed_limit if element.speed_limit is not None else DEFAULT_SPEED_LIMIT
    return min(profile.max_speed, limit)


def boundary_points(zone_map: ZoneGraph, sequence: tuple[ElementId, ...], idx: int) -> tuple[Point, Point]:
    """Entry and exit points of ``sequence[idx]`` given its neighbours."""
    el = zone_map[sequence[idx]]
    g = el.geometry
    if isinstance(g, Corridor):
        return g.centerline[0], g.centerline[-1]
    center = g.center if isinstance(g, Sphere) else landing_spot(g)
    entry = exit_ = center
    if idx > 0 and sequence[idx - 1] in zone_map and sequence[idx - 1].kind == "airway":
        entry = zone_map[sequence[idx - 1]].geometry.centerline[-1]
    if idx + 1 < len(sequence) and sequence[idx + 1] in zone_map and sequence[idx + 1].kind == "airway":
        exit_ = zone_map[sequence[idx + 1]].geometry.centerline[0]
    return entry, exit_


def trajectory_for(
    zone_map: ZoneGraph, sequence: tuple[ElementId, ...], idx: int, profile: PerformanceProfile
) -> Trajectory:
    eid = sequence[idx]
    el = zone_map[eid]
    speed = element_speed(el, profile)
    g = el.geometry
    if isinstance(g, Corridor):
        pts = _sample_segments(g.centerline)
    else:
        entry, exit_ = boundary_points(zone_map, sequence, idx)
        if el.kind == "gate":
            pts = _sample_segments([entry, g.center, exit_])
        else:
            pts = _sample_segments([entry, exit_])
    dedup = [pts[0]] + [b for a, b in zip(pts, pts[1:]) if a != b]
    return Trajectory(eid, tuple(dedup), tuple(speed for _ in dedup))


class ZspState:
    def __init__(
        self,
        zsp_id: str,
        owner_iodsp: str,
        zone_map: ZoneGraph,
        weather_timeline: Iterable[tuple[int, WeatherReport]] = (),
        peers: Iterable[str] = (),
        silence_timeout: int = SILENCE_TIMEOUT,
        quarantine_ticks: int = QUARANTINE_TICKS,
    ):
        self.zsp_id = zsp_id
        self.owner_iodsp = owner_iodsp
        self.zone = zone_map.zone
        self.map = zone_map
        self.live: dict[str, TrackEntry] = {}
        self.timeline = sorted(weather_timeline, key=lambda item: item[0])
        self.weather = self.timeline[0][1] if self.timeline and self.timeline[0][0] <= 0 else WeatherReport()
        self.peers = tuple(sorted(peers))
        self.silence_timeout = silence_timeout
        self.quarantine_ticks = quarantine_ticks
        self.quarantine: dict[ElementId, int] = {}
        self.failed: set[str] = set()
        self.outbox: list[tuple[str, object]] = []
        self.downgrades: list[str] = []

    # --- tracking -------------------------------------------------------------

    def ingest_broadcast(self, msg: PositionBroadcast | N2NBroadcast, now: int) -> TrackEntry:
        if msg.tick > now:
            raise ValueError(f"broadcast from the future: tick {msg.tick} > now {now}")
        if msg.element is not None and msg.element not in self.map:
            raise UnknownElement(f"{msg.element} is not in zone {self.zone}")
        entry = self.live.get(msg.drone)
        if entry is None:
            entry = TrackEntry(msg.drone, msg.element, msg.progress, (), 0.0, msg.tick, msg.position)
            self.live[msg.drone] = entry
        elif msg.tick < entry.last_broadcast:
            return entry
        entry.current_element = msg.element
        entry.progress = msg.progress
        entry.position = msg.position
        entry.mode = msg.mode
        entry.last_broadcast = msg.tick
        entry.future_path = msg.future_path
        if isinstance(msg, N2NBroadcast):
            entry.fuel_remaining = msg.fuel_remaining
            if msg.profile is not None:
                entry.profile = msg.profile
            entry.owner = msg.owner or entry.owner
            if msg.admitted_at is not None:
                entry.admitted_at = msg.admitted_at
        self.failed.discard(msg.drone)
        return entry

    def forget(self, drone_id: str) -> None:
        self.live.pop(drone_id, None)

    def occupancy(self) -> dict[ElementId, int]:
        occ: dict[ElementId, int] = {}
        for e in self.live.values():
            if e.airborne and e.drone_id not in self.failed and e.current_element is not None:
                occ[e.current_element] = occ.get(e.current_element, 0) + 1
        return occ

    def is_quarantined(self, eid: ElementId, now: int) -> bool:
        return self.quarantine.get(eid, -1) > now

    def effective_capacity(self, eid: ElementId, now: int) -> int:
        return 0 if self.is_quarantined(eid, now) else self.map[eid].capacity

    # --- planning -------------------------------------------------------------

    def _allowed(self, profile, owner, now, src, check_perf=True, check_access=True):
        extra = self.weather_report(now).wind_speed

        def ok(el: Element) -> bool:
            if el.id == src:
                return True
            if self.is_quarantined(el.id, now):
                return False
            if check_perf and not meets_performance(profile, el, extra):
                return False
            if check_access and not el.meta.allows(owner):
                return False
            return True

        return ok

    def _search(self, src, dst, allowed):
        if src not in self.map:
            raise UnknownElement(f"{src} is not in zone {self.zone}")
        el = self.map[src]
        if el.kind == "airway":
            exit_ = el.meta.direction[1]
            found = shortest_pathway(self.map, exit_, dst, allowed)
            if found is None:
                return None
            return found[0], (src,) + found[1]
        return shortest_pathway(self.map, src, dst, allowed)

    def plan_pathway(
        self,
        src: ElementId,
        dst: ElementId,
        profile: PerformanceProfile,
        requester_owner: str = "",
        now: int = 0,
    ) -> Pathway:
        if dst not in self.map:
            return self._partial_pathway(src, dst, profile, requester_owner, now)
        full = self._allowed(profile, requester_owner, now, src)
        found = self._search(src, dst, full)
        if found is None:
            raise self._diagnose(src, dst, profile, requester_owner, now)
        cost, seq = found
        return self._pathway(seq, cost, full, now)

    def _diagnose(self, src, dst, profile, owner, now) -> NoPath:
        def reachable(perf, access):
            return self._search(src, dst, self._allowed(profile, owner, now, src, perf, access)) is not None

        if not reachable(False, False):
            return NoPath(f"{src} -> {dst}")
        if reachable(False, True) and not reachable(True, False):
            return PerformanceInsufficient(f"{src} -> {dst}: performance floor blocks every path")
        if reachable(True, False) and not reachable(False, True):
            return AccessDenied(f"{src} -> {dst}: private elements block every path")
        return PerformanceInsufficient(f"{src} -> {dst}: performance and access floors block every path")

    def _partial_pathway(self, src, dst, profile, owner, now) -> Pathway:
        allowed = self._allowed(profile, owner, now, src)
        best = None
        for g in self.map.gates:
            found = self._search(src, g, allowed)
            if found and (best is None or (found[0], str(g)) < (best[0], str(best[1][-1]))):
                best = found
        if best is None:
            raise NoPath(f"{src} -> {dst}: no gate reachable")
        return self._pathway(best[1], best[0], allowed, now)

    def _pathway(self, seq, cost, allowed, now) -> Pathway:
        src, dst = seq[0], seq[-1]
        elements = tuple(seq[1:-1])
        sequence = (src,) if len(seq) == 1 else tuple(seq)
        contingency, costs = self._contingency(sequence, allowed)
        return Pathway(src, dst, elements, contingency, now, cost, costs)

    def _contingency(self, sequence, allowed):
        best = None
        for n in sorted(self.map.vertices, key=lambda e: str(e.id)):
            if not n.landing or not allowed(n):
                continue
            d = distances_to(self.map, [n.id], allowed)
            covered = sum(1 for e in sequence if e in d)
            if not covered:
                continue
            start = d.get(sequence[0], math.inf)
            key = (-covered, start, str(n.id))
            if best is None or key < best[0]:
                best = (key, n.id, d)
        if best is None:
            return None, tuple(math.inf for _ in sequence)
        _, node, d = best
        return node, tuple(d.get(e, math.inf) for e in sequence)

    def contingency_for(self, element: ElementId | None, now: int = 0) -> tuple[ElementId | None, float]:
        if element is None or element not in self.map:
            return None, math.inf
        allowed = lambda el: el.id == element or not self.is_quarantined(el.id, now)  # noqa: E731
        best = (math.inf, "", None)
        for n in self.map.vertices:
            if n.landing and allowed(n):
                d = distances_to(self.map, [n.id], allowed).get(element, math.inf)
                if (d, str(n.id)) < best[:2]:
                    best = (d, str(n.id), n.id)
        return best[2], best[0]

    def plan_trajectory(self, pathway: Pathway, element: ElementId, profile: PerformanceProfile) -> Trajectory:
        seq = pathway.sequence
        if element not in seq:
            raise NotOnPathway(f"{element} not on pathway {pathway.src} -> {pathway.dst}")
        return trajectory_for(self.map, seq, seq.index(element), profile)

    def refuel_pathway(self, entry: TrackEntry, profile: PerformanceProfile, now: int = 0) -> Pathway:
        stations = sorted(
            (n for n in self.map.vertices if n.fuel_kind == profile.fuel_kind), key=lambda e: str(e.id)
        )
        best = None
        for st in stations:
            try:
                pw = self.plan_pathway(entry.current_element, st.id, profile, entry.owner, now)
            except NoPath:
                continue
            if best is None or (pw.length, str(st.id)) < (best.length, str(best.dst)):
                best = pw
        if best is None:
            raise NoCompatibleStation(f"no reachable {profile.fuel_kind} station in zone {self.zone}")
        return best

    # --- control ------------------------------------------------------------

    def precise_control(
        self,
        drone_id: str,
        command: str,
        target: ElementId | None = None,
        point: Point | None = None,
        now: int = 0,
        reason: str = "",
    ) -> PreciseControl:
        entry = self.live.get(drone_id)
        if entry is None:
            raise UnknownDrone(drone_id)
        if command == "Hold" and entry.profile is not None and not entry.profile.hover:
            contingency, _ = self.contingency_for(entry.current_element, now)
            self.downgrades.append(drone_id)
            return PreciseControl(drone_id, "Land", target=contingency, reason=f"hold-downgrade:{reason}")
        return PreciseControl(drone_id, command, target=target, point=point, reason=reason)

    def handle_sos(self, sos: SOS, now: int) -> list[tuple[str, object]]:
        element = sos.element
        if element is None and sos.drone in self.live:
            element = self.live[sos.drone].current_element
        if element is None or element not in self.map:
            return []
        until = now + self.quarantine_ticks
        self.quarantine[element] = max(self.quarantine.get(element, until), until)
        directives: list[tuple[str, object]] = []
        for drone_id in sorted(self.live):
            entry = self.live[drone_id]
            if drone_id == sos.drone or not entry.airborne or drone_id in self.failed:
                continue
            if element.kind == "node" and entry.current_element == element:
                directives.append((drone_id, self.precise_control(drone_id, "Hold", now=now, reason="sos")))
            elif element in entry.future_path and entry.current_element != element:
                dst = entry.future_path[-1]
                try:
                    pw = self.plan_pathway(entry.current_element, dst, entry.profile or PerformanceProfile(),
                                           entry.owner, now)
                    directives.append((drone_id, PathwayResponse(drone_id, pw, reroute=True)))
                except (NoPath, UnknownElement):
                    directives.append((drone_id, self.precise_control(drone_id, "Hold", now=now, reason="sos")))
        return directives

    def detect_silent(self, now: int) -> list[str]:
        declared = []
        for drone_id in sorted(self.live):
            entry = self.live[drone_id]
            if not entry.airborne or drone_id in self.failed:
                continue
            if now - entry.last_broadcast > self.silence_timeout:
                self.failed.add(drone_id)
                declared.append(drone_id)
                self.outbox.extend(self.handle_sos(SOS(drone_id, entry.current_element, "silent", now), now))
        return declared

    def congestion_report(self, src: ElementId, dst: ElementId, now: int = 0) -> CongestionReport:
        found = self._search(src, dst, lambda el: True)
        if found is None:
            raise NoPath(f"{src} -> {dst}")
        occ = self.occupancy()
        ratios = []
        for eid in found[1]:
            cap = self.effective_capacity(eid, now)
            ratios.append((eid, occ.get(eid, 0) / cap if cap else 1.0))
        aggregate = min(1.0, max((r for _, r in ratios), default=0.0))
        return CongestionReport(src, dst, tuple(ratios), aggregate)

    def zone_congestion(self, now: int = 0) -> float:
        occ = self.occupancy()
        worst = 0.0
        for eid, n in occ.items():
            if eid in self.map:
                cap = self.effective_capacity(eid, now)
                worst = max(worst, n / cap if cap else 1.0)
        return min(1.0, worst)

    def weather_report(self, now: int) -> WeatherReport:
        latest = self._latest(now)
        if latest is not None:
            self.weather = latest
        return self.weather

    def _latest(self, now: int) -> WeatherReport | None:
        current = None
        for tick, report in self.timeline:
            if tick <= now:
                current = report
        return current

