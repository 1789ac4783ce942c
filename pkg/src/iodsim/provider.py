"""ZSP actor: the message-driven shell around :class:`~iodsim.zsp.ZspState`.

One provider instance owns the tracking state, clearance book, reservation
table, ECN table, handoff records and zone services for its zone.  The engine
feeds it an inbox each tick; it answers through ``outbox``, ``events`` and
``timers``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .admission import MAX_SHIFT, Occupant, ReservationTable, mitigate, shadow_reserve, travel_times
from .airspace import ElementId, InterzoneGraph, PerformanceProfile, ZoneGraph, distances_to, meets_performance
from .messages import (
    SOS,
    AdmissionDecisionMsg,
    AdmissionRequest,
    CongestionQuery,
    CongestionReportMsg,
    EcnNoticeMsg,
    Envelope,
    HandoffAccept,
    HandoffComplete,
    HandoffFailed,
    HandoffRequest,
    N2NBroadcast,
    PathwayRequest,
    PathwayResponse,
    PositionBroadcast,
    PreciseControl,
    RefuelRequest,
    RefuelResponse,
    ShadowQuery,
    ShadowReply,
    TaskClaim,
    TaskClaimResult,
    TaskPost,
    Timer,
    TrajectoryRequest,
    TrajectoryResponse,
    WeatherQuery,
    WeatherReportMsg,
    ZoneDeliver,
    ZonePublish,
    ZspAdvertisement,
)
from .routing import (
    ACCEPTED,
    FAILED,
    HANDOFF_THRESHOLD_M,
    REQUESTED,
    EcnTable,
    HandoffRecord,
    NoCandidates,
    StaleNotice,
    Unreachable,
    best_route,
    choose_zsp,
    publish_ecn,
    transit_subject,
)
from .service import Task, TaskPool, ZoneBroadcast, ZoneMessage, encode_task
from .zsp import (
    N2N_INTERVAL,
    NoCompatibleStation,
    NoPath,
    TrackEntry,
    UnknownDrone,
    UnknownElement,
    ZspState,
    trajectory_for,
)

ECN_INTERVAL = 5
ADVERT_INTERVAL = 5
HANDOFF_TIMEOUT = 10
HANDOFF_RETRY = 3
INCOMING_TIMEOUT = 120
SHADOW_TIMEOUT = 5
EXTRA_LOAD_TICKS = 10


@dataclass
class Plan:
    pathway: object
    route: tuple[ElementId, ...]
    dst: ElementId
    profile: PerformanceProfile
    owner: str
    admitted_at: int | None = None


def gate_quota(gate: ElementId, zone: str, capacity: int) -> int:
    """Share of a gate's capacity granted by the provider of ``zone``."""
    first = math.ceil(capacity / 2)
    return first if zone == gate.zones[0] else capacity - first


class Provider:
    def __init__(
        self,
        zsp_id: str,
        owner: str,
        zone_map: ZoneGraph,
        interzone: InterzoneGraph,
        roster: Mapping[str, Iterable[str]],
        weather=(),
        gated: bool = True,
        admission: bool = True,
        zone_maps: Mapping[str, ZoneGraph] | None = None,
    ):
        self.zsp_id = zsp_id
        self.zone = zone_map.zone
        self.map = zone_map
        self.zone_maps = dict(zone_maps or {})
        self.interzone = interzone
        self.roster = {z: tuple(sorted(ids)) for z, ids in roster.items()}
        adjacent = sorted({z for g in zone_map.gates for z in g.zones if z != self.zone})
        self.adjacent_zones = tuple(adjacent)
        self.ecn_peers = tuple(p for z in adjacent for p in self.roster.get(z, ()))
        self.peers = tuple(p for p in self.roster.get(self.zone, ()) if p != zsp_id) + self.ecn_peers
        self.state = ZspState(zsp_id, owner, zone_map, weather, self.peers)
        self.gated = gated
        self.admission = admission
        self.now = 0
        self.table = ReservationTable(self.grant_capacity)
        self.ecn = EcnTable()
        self.adverts: dict[str, float] = {}
        self.cleared: dict[ElementId, set[str]] = {}
        self.granted: dict[str, list[ElementId]] = {}
        self.queue: list[tuple[str, str, tuple[ElementId, ...]]] = []
        self.plans: dict[str, Plan] = {}
        self.out_handoffs: dict[str, HandoffRecord] = {}
        self.handoff_sent: dict[str, int] = {}
        self.incoming: dict[str, tuple[HandoffRecord, Plan, TrackEntry, int]] = {}
        self.pending_adm: dict[str, dict] = {}
        self.held: dict[str, tuple[ElementId, int]] = {}
        self.grounding: dict[str, ElementId] = {}
        self.broadcast = ZoneBroadcast(self.zone)
        self.pool = TaskPool()
        self.stale_notices = 0

        self.outbox: list[tuple[str, object]] = []
        self.events: list[tuple[str, dict]] = []
        self.timers: list[tuple[int, Timer]] = []

    # --- plumbing -----------------------------------------------------------------

    def send(self, dst: str, msg) -> None:
        self.outbox.append((dst, msg))

    def emit(self, kind: str, **data) -> None:
        self.events.append((kind, data))

    def grant_capacity(self, eid: ElementId) -> int:
        cap = self.state.effective_capacity(eid, self.now)
        if eid.is_gate:
            return gate_quota(eid, self.zone, cap)
        return cap

    # --- step -----------------------------------------------------------------------

    def step(self, tick: int, inbox: Iterable[Envelope] = ()) -> None:
        self.outbox, self.events, self.timers = [], [], []
        self.now = tick
        self.state.weather_report(tick)
        for env in inbox:
            self.handle(env.src, env.msg, tick)
        self.ecn.purge(tick)
        self.table.purge(tick - 1)
        self._housekeeping(tick)
        self._handoff_triggers(tick)
        self._process_queue(tick)
        if not self.gated:
            self._mitigate(tick)
        if tick % ECN_INTERVAL == 0:
            self._publish_ecn(tick)
        if tick % ADVERT_INTERVAL == 0:
            self._advertise(tick)
        self._service_tick(tick)

    def handle(self, src: str, msg, tick: int) -> None:
        if isinstance(msg, (PositionBroadcast, N2NBroadcast)):
            self._on_broadcast(msg, tick)
        elif isinstance(msg, AdmissionRequest):
            self._on_admission_request(src, msg, tick)
        elif isinstance(msg, ShadowQuery):
            self._on_shadow_query(src, msg, tick)
        elif isinstance(msg, ShadowReply):
            self._finish_admission(msg.drone, msg.shift, tick)
        elif isinstance(msg, TrajectoryRequest):
            self._on_trajectory_request(src, msg, tick)
        elif isinstance(msg, PathwayRequest):
            self._on_pathway_request(src, msg, tick)
        elif isinstance(msg, RefuelRequest):
            self._on_refuel(src, msg, tick)
        elif isinstance(msg, SOS):
            self._on_sos(msg, tick)
        elif isinstance(msg, CongestionQuery):
            try:
                self.send(src, CongestionReportMsg(self.state.congestion_report(msg.src, msg.dst, tick)))
            except (NoPath, UnknownElement):
                self.send(src, CongestionReportMsg(None))
        elif isinstance(msg, WeatherQuery):
            self.send(src, WeatherReportMsg(self.state.weather_report(tick)))
        elif isinstance(msg, HandoffRequest):
            self._on_handoff_request(src, msg, tick)
        elif isinstance(msg, HandoffAccept):
            rec = self.out_handoffs.get(msg.drone)
            if rec is not None and rec.status == REQUESTED and rec.to_zsp == msg.to_zsp:
                rec.accept(tick)
        elif isinstance(msg, HandoffComplete):
            self._on_handoff_complete(msg, tick)
        elif isinstance(msg, HandoffFailed):
            self._on_handoff_failed(msg, tick)
        elif isinstance(msg, EcnNoticeMsg):
            try:
                self.ecn.ingest(msg.notice, tick)
            except StaleNotice:
                self.stale_notices += 1
                self.emit("ecn_stale", subject=msg.notice.subject, origin=msg.notice.origin_zsp)
        elif isinstance(msg, ZspAdvertisement):
            self.adverts[msg.zsp] = msg.congestion
        elif isinstance(msg, ZonePublish):
            self._publish(ZoneMessage(msg.msg_id, msg.zone, msg.payload, tick, msg.ttl), tick)
        elif isinstance(msg, TaskPost):
            task = Task(msg.task_id, msg.pickup, msg.dropoff, tick)
            self.pool.post(task)
            self._publish(ZoneMessage(f"task:{msg.task_id}", self.zone, encode_task(task), tick, msg.ttl), tick)
        elif isinstance(msg, TaskClaim):
            self.pool.submit(msg.tick, msg.drone, msg.task_id)
        elif isinstance(msg, Timer):
            if msg.name == "shadow-timeout" and msg.data in self.pending_adm:
                self._finish_admission(msg.data, 0, tick, timed_out=True)

    # --- tracking and clearance -----------------------------------------------------------

    def _on_broadcast(self, msg, tick: int) -> None:
        drone = msg.drone
        if drone in self.incoming and msg.element is not None and msg.element in self.map:
            self._register_incoming(drone, tick)
        try:
            prev = self.state.live[drone].current_element if drone in self.state.live else None
            entry = self.state.ingest_broadcast(msg, tick)
        except UnknownElement:
            self._drop(drone)
            return
        if entry.mode in ("Landed", "Grounded") and entry.current_element is not None:
            if entry.mode == "Landed":
                self._release(drone, None, ())
                self.table.remove_drone(drone)
                self.plans.pop(drone, None)
                self.pending_adm.pop(drone, None)
                self.out_handoffs.pop(drone, None)
                self.held.pop(drone, None)
                self.grounding.pop(drone, None)
            else:
                self._release(drone, entry.current_element, entry.future_path)
            return
        self._release(drone, entry.current_element, entry.future_path)
        if prev != entry.current_element:
            self._advance_reservations(drone, entry.current_element)

    def _release(self, drone: str, current, future) -> None:
        mine = self.granted.get(drone)
        if not mine:
            return
        keep = []
        for e in mine:
            if e == current or e in future:
                keep.append(e)
            else:
                self.cleared.get(e, set()).discard(drone)
        if keep:
            self.granted[drone] = keep
        else:
            del self.granted[drone]

    def _advance_reservations(self, drone: str, current) -> None:
        mine = self.table.by_drone.get(drone)
        if not mine:
            return
        hits = [r.index for r in mine if r.element == current]
        if not hits:
            return
        before = [r for r in mine if r.index < min(hits)]
        if before:
            self.table.release(drone, max(before, key=lambda r: r.index).element)

    def _drop(self, drone: str) -> None:
        self.state.forget(drone)
        self._release(drone, None, ())
        self.table.remove_drone(drone)
        self.plans.pop(drone, None)
        self.pending_adm.pop(drone, None)
        self.out_handoffs.pop(drone, None)
        self.held.pop(drone, None)
        self.grounding.pop(drone, None)
        self.queue = [q for q in self.queue if q[0] != drone]

    def _fits(self, drone: str, elements) -> bool:
        for e in elements:
            if e not in self.map:
                return False
            holders = self.cleared.get(e, set())
            if drone not in holders and len(holders) >= self.grant_capacity(e):
                return False
        return True

    def _grant(self, drone: str, reply_to: str, elements, tick: int) -> None:
        if self.gated:
            book = self.granted.setdefault(drone, [])
            for e in elements:
                self.cleared.setdefault(e, set()).add(drone)
                if e not in book:
                    book.append(e)
        trajectories = ()
        plan = self.plans.get(drone) or (self.incoming[drone][1] if drone in self.incoming else None)
        if plan is not None:
            seq = plan.pathway.sequence
            trajectories = tuple(
                trajectory_for(self.map, seq, seq.index(e), plan.profile) for e in elements if e in seq
            )
        self.send(reply_to, TrajectoryResponse(drone, tuple(elements), True, trajectories))

    def _on_trajectory_request(self, src: str, msg: TrajectoryRequest, tick: int) -> None:
        elements = tuple(msg.elements)
        if not self.gated or self._fits(msg.drone, elements):
            self._grant(msg.drone, src, elements, tick)
            self.queue = [q for q in self.queue if q[0] != msg.drone]
            return
        self.queue = [q for q in self.queue if q[0] != msg.drone]
        self.queue.append((msg.drone, src, elements))

    def _process_queue(self, tick: int) -> None:
        if not self.queue:
            return
        waiting = []
        for drone, src, elements in self.queue:
            if self._fits(drone, elements):
                self._grant(drone, src, elements, tick)
            else:
                waiting.append((drone, src, elements))
        self.queue = waiting

    # --- planning and admission --------------------------------------------------------

    def plan(self, src: ElementId, dst: ElementId, profile=None, owner: str = "", now: int = 0):
        """In-zone pathway toward ``dst`` plus the interzone gate route (empty when local)."""
        return self._plan(src, dst, profile or PerformanceProfile(), owner, now)

    def _plan(self, src: ElementId, dst: ElementId, profile, owner: str, now: int):
        if dst in self.map:
            return self.state.plan_pathway(src, dst, profile, owner, now), ()
        if src not in self.map:
            raise UnknownElement(f"{src} is not in zone {self.zone}")
        allowed = self.state._allowed(profile, owner, now, src)
        costs = {}
        for g in self.map.gates:
            if g == src:
                continue
            found = self.state._search(src, g, allowed)
            if found is not None:
                costs[g] = found[0]
        levels = self.ecn.levels(now)
        route = best_route(self.interzone, self.zone, dst.zone, levels, costs,
                           dest_costs=self._dest_costs(dst, profile, owner))
        pathway = self.state.plan_pathway(src, route.gates[0], profile, owner, now)
        return pathway, route.gates

    def _dest_costs(self, dst: ElementId, profile, owner: str):
        """Cost from each entry gate of the destination zone to ``dst``, if that map is known."""
        dst_map = self.zone_maps.get(dst.zone)
        if dst_map is None or dst not in dst_map:
            return None
        allowed = lambda el: meets_performance(profile, el) and el.meta.allows(owner)  # noqa: E731
        dist = distances_to(dst_map, [dst], allowed)
        return {g: dist[g] for g in dst_map.gates if g in dist}

    def _reserved_elements(self, pathway, dst: ElementId):
        seq = pathway.sequence
        if seq[-1].is_gate and dst not in self.map:
            seq = seq[:-1]
        return [self.map[e] for e in seq]

    def _extra_load(self, drone: str, now: int):
        counts = Counter(
            e.current_element for e in self.state.live.values()
            if e.airborne and e.drone_id != drone and e.drone_id not in self.table.by_drone
            and e.drone_id not in self.state.failed
        )
        hi = now + EXTRA_LOAD_TICKS

        def extra(el, t):
            return counts.get(el, 0) if now <= t <= hi else 0

        return extra

    def _next_zsp(self, zone: str) -> str | None:
        ids = self.roster.get(zone, ())
        if not ids:
            return None
        try:
            return choose_zsp({z: self.adverts.get(z, 0.0) for z in ids})
        except NoCandidates:
            return None

    def _on_admission_request(self, src: str, msg: AdmissionRequest, tick: int) -> None:
        drone = msg.drone
        try:
            pathway, route = self._plan(msg.src, msg.dst, msg.profile, msg.owner, tick)
        except (NoPath, UnknownElement, Unreachable) as exc:
            self.emit("admission", drone=drone, verdict="Error", delay=0, error=type(exc).__name__)
            self.send(src, AdmissionDecisionMsg(drone, False, 0, error=type(exc).__name__))
            return
        self.plans[drone] = Plan(pathway, tuple(route), msg.dst, msg.profile, msg.owner)
        if not self.admission:
            self._decide(drone, src, 0, tick)
            return
        elements = self._reserved_elements(pathway, msg.dst)
        res = shadow_reserve(drone, elements, tick + 1, msg.profile)
        self.table.remove_drone(drone)
        extra = self._extra_load(drone, tick)
        s1 = self.table.min_shift(res, 0, extra)
        s1 = MAX_SHIFT if s1 is None else s1
        pending = {"src": src, "res": res, "s1": s1, "extra": extra, "requested": tick}
        self.pending_adm[drone] = pending
        target = self._next_zsp(route[0].zones[0] if route and route[0].zones[0] != self.zone
                                else route[0].zones[1]) if route else None
        if target is None:
            self._finish_admission(drone, 0, tick)
            return
        times = travel_times(elements, msg.profile)
        elapsed = times[-1][1] if times else 0.0
        self.send(target, ShadowQuery(drone, self.zsp_id, route[0], msg.dst, tuple(route), msg.profile, msg.owner,
                                      tick + 1 + s1 + math.ceil(elapsed), len(elements), elapsed, False))
        self.timers.append((tick + SHADOW_TIMEOUT, Timer("shadow-timeout", drone)))

    def _finish_admission(self, drone: str, s2: int, tick: int, timed_out: bool = False) -> None:
        pending = self.pending_adm.pop(drone, None)
        if pending is None:
            return
        shift = pending["s1"]
        if s2 > 0:
            found = self.table.min_shift(pending["res"], shift + s2, pending["extra"])
            shift = MAX_SHIFT if found is None else found
        shift = min(shift, MAX_SHIFT)
        self.table.add(r.shifted(shift) for r in pending["res"])
        self._decide(drone, pending["src"], shift, tick)

    def _decide(self, drone: str, reply_to: str, delay: int, tick: int) -> None:
        plan = self.plans.get(drone)
        if plan is None:  # drone was dropped while the shadow query was out
            return
        speed_class = f"v{int(plan.profile.max_speed)}"
        if delay == 0:
            plan.admitted_at = tick
            self.emit("admission", drone=drone, verdict="Admit", delay=0, cls=speed_class)
            self.send(reply_to, AdmissionDecisionMsg(drone, True, 0, plan.pathway, plan.route, (), self.map))
        else:
            self.emit("admission", drone=drone, verdict="Deny", delay=delay, cls=speed_class)
            self.send(reply_to, AdmissionDecisionMsg(drone, False, delay))

    def _on_shadow_query(self, src: str, msg: ShadowQuery, tick: int) -> None:
        try:
            pathway, _ = self._plan(msg.entry_gate, msg.dst, msg.profile, msg.owner, tick)
        except (NoPath, UnknownElement, Unreachable):
            self.send(src, ShadowReply(msg.drone, 0))
            return
        elements = self._reserved_elements(pathway, msg.dst)
        res = shadow_reserve(msg.drone, elements, msg.eta, msg.profile, index_offset=msg.index_offset,
                             elapsed=msg.elapsed)
        self.table.remove_drone(msg.drone)
        s2 = self.table.min_shift(res, 0, self._extra_load(msg.drone, tick))
        s2 = MAX_SHIFT if s2 is None else s2
        self.table.add(r.shifted(s2) for r in res)
        self.send(src, ShadowReply(msg.drone, s2))

    def _on_pathway_request(self, src: str, msg: PathwayRequest, tick: int) -> None:
        try:
            pathway, route = self._plan(msg.src, msg.dst, msg.profile, msg.owner, tick)
        except (NoPath, UnknownElement, Unreachable) as exc:
            self.send(src, PathwayResponse(msg.drone, None, (), type(exc).__name__))
            return
        old = self.plans.get(msg.drone)
        self.plans[msg.drone] = Plan(pathway, tuple(route), msg.dst, msg.profile, msg.owner,
                                     old.admitted_at if old else None)
        self.send(src, PathwayResponse(msg.drone, pathway, tuple(route)))

    def _on_refuel(self, src: str, msg: RefuelRequest, tick: int) -> None:
        entry = self.state.live.get(msg.drone)
        if entry is None:
            self.send(src, RefuelResponse(msg.drone, None, "UnknownDrone"))
            return
        try:
            pathway = self.state.refuel_pathway(entry, msg.profile, tick)
        except (NoCompatibleStation, UnknownElement) as exc:
            self.send(src, RefuelResponse(msg.drone, None, type(exc).__name__))
            return
        old = self.plans.get(msg.drone)
        if old is not None:
            self.plans[msg.drone] = replace(old, pathway=pathway, route=(), dst=pathway.dst)
        self.send(src, RefuelResponse(msg.drone, pathway))

    def _on_sos(self, msg: SOS, tick: int) -> None:
        directives = self.state.handle_sos(msg, tick)
        element = msg.element
        if element is not None and element in self.map:
            self.emit("quarantine", element=str(element), until=self.state.quarantine[element], drone=msg.drone)
        self._send_directives(directives, tick)

    def _send_directives(self, directives, tick: int) -> None:
        for drone, directive in directives:
            if isinstance(directive, PathwayResponse) and directive.pathway is not None:
                old = self.plans.get(drone)
                if old is not None:
                    self.plans[drone] = replace(old, pathway=directive.pathway)
            elif isinstance(directive, PreciseControl):
                self.emit("directive", drone=drone, command=directive.command, reason=directive.reason)
            self.send(drone, directive)

    # --- handoff ------------------------------------------------------------------------

    def _handoff_triggers(self, tick: int) -> None:
        for drone in sorted(self.plans):
            plan = self.plans[drone]
            entry = self.state.live.get(drone)
            if entry is None or not entry.airborne or entry.mode == "Emergency" or drone in self.state.failed:
                continue
            gate = plan.pathway.dst
            if not gate.is_gate or plan.dst in self.map or entry.current_element not in plan.pathway.sequence:
                continue
            rec = self.out_handoffs.get(drone)
            if rec is not None and rec.status in (REQUESTED, ACCEPTED):
                if rec.status == REQUESTED and self.gated and tick - self.handoff_sent[drone] > HANDOFF_TIMEOUT:
                    rec.fail(tick)
                    self.emit("handoff", drone=drone, status="Failed", gate=str(gate), reason="timeout",
                              **{"from": self.zsp_id, "to": rec.to_zsp})
                    self._hold_or_land(drone, "handoff", tick)
                continue
            if rec is not None and (not plan.profile.hover or tick - self.handoff_sent.get(drone, -99) < HANDOFF_RETRY):
                continue
            if entry.position.dist(self.map[gate].geometry.center) > HANDOFF_THRESHOLD_M:
                continue
            other = [z for z in gate.zones if z != self.zone][0]
            target = self._next_zsp(other)
            if target is None:
                continue
            rec = HandoffRecord(drone, self.zsp_id, target, gate, entry, plan.route)
            rec.history.append((tick, REQUESTED))
            self.out_handoffs[drone] = rec
            self.handoff_sent[drone] = tick
            self.send(target, HandoffRequest(drone, self.zsp_id, gate, replace(entry), plan.route, plan.dst,
                                             plan.profile, plan.owner, plan.admitted_at or 0))
            self.emit("handoff", drone=drone, status="Requested", gate=str(gate),
                      **{"from": self.zsp_id, "to": target})

    def _hold_or_land(self, drone: str, reason: str, tick: int) -> None:
        try:
            directive = self.state.precise_control(drone, "Hold", now=tick, reason=reason)
        except UnknownDrone:
            return
        self._send_directives([(drone, directive)], tick)

    def _on_handoff_request(self, src: str, msg: HandoffRequest, tick: int) -> None:
        try:
            pathway, route = self._plan(msg.gate, msg.dst, msg.profile, msg.owner, tick)
        except (NoPath, UnknownElement, Unreachable) as exc:
            self.emit("handoff_reject", drone=msg.drone, gate=str(msg.gate), error=type(exc).__name__)
            return
        plan = Plan(pathway, tuple(route), msg.dst, msg.profile, msg.owner, msg.admitted_at)
        rec = HandoffRecord(msg.drone, src, self.zsp_id, msg.gate, msg.snapshot, tuple(route))
        rec.accept(tick)
        self.incoming[msg.drone] = (rec, plan, msg.snapshot, tick)
        if self.admission:
            elements = self._reserved_elements(pathway, msg.dst)
            speed = max(1.0, msg.profile.max_speed)
            eta = tick + math.ceil(msg.snapshot.position.dist(self.map[msg.gate].geometry.center) / speed)
            self.table.replace(msg.drone, shadow_reserve(msg.drone, elements, eta, msg.profile))
        accept = HandoffAccept(msg.drone, src, self.zsp_id, msg.gate, pathway, tuple(route), self.map)
        self.send(src, accept)
        self.send(msg.drone, accept)
        self.emit("handoff", drone=msg.drone, status="Accepted", gate=str(msg.gate),
                  **{"from": src, "to": self.zsp_id})

    def _register_incoming(self, drone: str, tick: int) -> None:
        rec, plan, snapshot, _ = self.incoming.pop(drone)
        if rec.status == ACCEPTED:
            rec.complete(tick)
        self.plans[drone] = plan
        if drone not in self.state.live:
            entry = replace(snapshot)
            entry.current_element = rec.gate
            entry.future_path = plan.pathway.sequence[1:]
            entry.last_broadcast = tick - 1
            self.state.live[drone] = entry

    def _on_handoff_complete(self, msg: HandoffComplete, tick: int) -> None:
        if msg.to_zsp == self.zsp_id and msg.drone in self.incoming:
            self._register_incoming(msg.drone, tick)
        elif msg.from_zsp == self.zsp_id:
            rec = self.out_handoffs.get(msg.drone)
            if rec is not None and rec.status == ACCEPTED:
                rec.complete(tick)
            self._drop(msg.drone)

    def _on_handoff_failed(self, msg: HandoffFailed, tick: int) -> None:
        rec = self.out_handoffs.get(msg.drone)
        if rec is None:
            return
        if rec.status == REQUESTED:
            rec.fail(tick)
        elif rec.status != FAILED:
            self.out_handoffs[msg.drone] = replace(rec, status=FAILED, history=rec.history + [(tick, FAILED)])
        self.handoff_sent[msg.drone] = tick - HANDOFF_RETRY

    # --- housekeeping -------------------------------------------------------------------

    def _housekeeping(self, tick: int) -> None:
        live = self.state.live
        for drone in sorted(live):
            entry = live[drone]
            rec = self.out_handoffs.get(drone)
            silent = tick - entry.last_broadcast > self.state.silence_timeout
            if silent and rec is not None and rec.status == ACCEPTED and entry.current_element == rec.gate:
                self._drop(drone)
            elif not entry.airborne and tick - entry.last_broadcast > 3 * N2N_INTERVAL + 1:
                self._drop(drone)
        before = set(self.state.failed)
        self.state.detect_silent(tick)
        for drone in sorted(self.state.failed - before):
            self.emit("silent", drone=drone, element=str(live[drone].current_element))
            element = live[drone].current_element
            if element is not None:
                self.emit("quarantine", element=str(element), until=self.state.quarantine.get(element), drone=drone)
        directives, self.state.outbox = self.state.outbox, []
        self._send_directives(directives, tick)
        for drone in sorted(self.incoming):
            if tick - self.incoming[drone][3] > INCOMING_TIMEOUT:
                self.incoming.pop(drone)
                self._release(drone, None, ())
                self.table.remove_drone(drone)

    def _mitigate(self, tick: int) -> None:
        live = self.state.live
        occ = self.state.occupancy()
        by_el: dict[ElementId, list[TrackEntry]] = {}
        for drone in sorted(live):
            e = live[drone]
            if e.airborne and drone not in self.state.failed and e.current_element is not None:
                by_el.setdefault(e.current_element, []).append(e)
        for drone in sorted(self.held):
            eid, since = self.held[drone]
            entry = live.get(drone)
            if entry is None or entry.current_element != eid or (entry.mode != "Holding" and tick - since > 2):
                del self.held[drone]
            elif occ.get(eid, 0) <= self.state.effective_capacity(eid, tick):
                del self.held[drone]
                self._send_directives([(drone, PreciseControl(drone, "Resume", reason="mitigate"))], tick)
        for drone in sorted(self.grounding):
            entry = live.get(drone)
            if entry is None or entry.current_element != self.grounding[drone] or not entry.airborne:
                del self.grounding[drone]
        for eid in sorted(by_el):
            if eid not in self.map:
                continue
            cap = self.state.effective_capacity(eid, tick)
            here = by_el[eid]
            directed = [e for e in here if e.drone_id in self.held or e.drone_id in self.grounding]
            effective = len(here) - len(directed)
            if effective <= cap:
                continue
            candidates = [
                Occupant(e.drone_id, e.admitted_at or 0, bool(e.profile and e.profile.hover))
                for e in here
                if e.drone_id not in self.held and e.drone_id not in self.grounding and e.mode == "Airborne"
            ]
            room = 0
            el = self.map[eid]
            if el.kind == "airway":
                up = el.meta.direction[0]
                room = max(0, self.state.effective_capacity(up, tick) - occ.get(up, 0))
            excess = effective - cap
            for drone, action in mitigate(candidates, max(0, len(candidates) - excess), room):
                self.emit("mitigate", drone=drone, element=str(eid), action=action)
                if action == "Hold":
                    directive = self.state.precise_control(drone, "Hold", now=tick, reason="mitigate")
                else:
                    target, _ = self.state.contingency_for(eid, tick)
                    directive = PreciseControl(drone, "Land", target=target, reason="mitigate")
                if directive.command == "Hold":
                    self.held[drone] = (eid, tick)
                else:
                    self.grounding[drone] = eid
                self._send_directives([(drone, directive)], tick)

    # --- congestion notification and adverts ---------------------------------------------

    def _ratio(self, occ, eid: ElementId, tick: int) -> float:
        cap = self.state.effective_capacity(eid, tick)
        return occ.get(eid, 0) / cap if cap else 1.0

    def _publish_ecn(self, tick: int) -> None:
        occ = self.state.occupancy()
        subjects = [(str(g), self._ratio(occ, g, tick)) for g in self.map.gates]
        for t in self.interzone.transits:
            if t.zone == self.zone:
                subjects.append((transit_subject(t), max((self._ratio(occ, e, tick) for e in t.path), default=0.0)))
        for subject, ratio in subjects:
            notice = publish_ecn(self.zsp_id, subject, ratio, tick)
            if notice is None:
                continue
            self.ecn.ingest(notice, tick)
            self.emit("ecn", subject=subject, level=round(notice.level, 6))
            for peer in self.ecn_peers:
                self.send(peer, EcnNoticeMsg(notice))

    def _advertise(self, tick: int) -> None:
        advert = ZspAdvertisement(self.zsp_id, self.zone, round(self.state.zone_congestion(tick), 6), tick)
        for peer in self.peers:
            self.send(peer, advert)
        if len(self.roster.get(self.zone, ())) > 1:
            for drone in sorted(self.state.live):
                if self.state.live[drone].mode == "Grounded":
                    self.send(drone, advert)

    # --- zone services ----------------------------------------------------------------------

    def _present(self) -> list[str]:
        return sorted(
            d for d, e in self.state.live.items()
            if e.current_element is not None and e.current_element in self.map and d not in self.state.failed
            and e.mode != "Failed"
        )

    def _publish(self, message: ZoneMessage, tick: int) -> None:
        for drone, msg in self.broadcast.publish(message, self._present()):
            self._deliver(drone, msg)

    def _deliver(self, drone: str, msg: ZoneMessage) -> None:
        self.emit("zone_deliver", drone=drone, msg_id=msg.msg_id)
        self.send(drone, ZoneDeliver(msg.msg_id, msg.zone, msg.payload))

    def _service_tick(self, tick: int) -> None:
        deliveries, expired = self.broadcast.tick(tick, self._present())
        for drone, msg in deliveries:
            self._deliver(drone, msg)
        for msg in expired:
            self.emit("zone_expire", msg_id=msg.msg_id)
        for outcome in self.pool.resolve():
            task = self.pool.tasks.get(outcome.task_id)
            self.emit("task_claim", drone=outcome.drone_id, task=outcome.task_id, ok=outcome.ok,
                      error=outcome.error)
            self.send(outcome.drone_id, TaskClaimResult(
                outcome.drone_id, outcome.task_id, outcome.ok, outcome.error,
                task.pickup if task and outcome.ok else None, task.dropoff if task and outcome.ok else None))

    # --- inspection -------------------------------------------------------------------------

    def dump(self) -> dict:
        return {
            "zsp": self.zsp_id,
            "zone": self.zone,
            "reservations": self.table.dump(),
            "cleared": {str(e): sorted(d) for e, d in sorted(self.cleared.items(), key=lambda kv: str(kv[0])) if d},
            "queue": [{"drone": d, "elements": [str(e) for e in els]} for d, _, els in self.queue],
        }
