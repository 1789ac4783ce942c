"""End-to-end layer: interzone routing, handoff records and explicit congestion notification."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .airspace import ECN_PENALTY, ElementId, InterzoneGraph, Transit, effective_cost

ECN_THRESHOLD = 0.8
ECN_TTL = 30
HANDOFF_THRESHOLD_M = 100.0


class Unreachable(Exception):
    pass


class NoCandidates(Exception):
    pass


class StaleNotice(Exception):
    pass


class InvalidTransition(Exception):
    pass


@dataclass(frozen=True)
class Route:
    gates: tuple[ElementId, ...]
    cost: float = 0.0

    @property
    def next_gate(self) -> ElementId | None:
        return self.gates[0] if self.gates else None


def transit_subject(t: Transit) -> str:
    return f"{t.from_gate}>{t.to_gate}@{t.zone}"


def _other_zone(gate: ElementId, zone: str) -> str:
    a, b = gate.zones
    return b if a == zone else a


def best_route(
    interzone: InterzoneGraph,
    current_zone: str,
    dest_zone: str,
    ecn: Mapping[str, float] | None = None,
    origin_costs: Mapping[ElementId, float] | None = None,
    penalty: float = ECN_PENALTY,
    dest_costs: Mapping[ElementId, float] | None = None,
) -> Route:
    """Minimum effective-cost gate sequence leaving ``current_zone`` toward ``dest_zone``.

    ``ecn`` maps transit subjects (see :func:`transit_subject`) and gate
    addresses to congestion levels; a transit's level is the max of its own
    and its destination gate's.  ``origin_costs`` gives the in-zone cost to
    each exit gate; when omitted every gate of the current zone costs 0.
    ``dest_costs`` likewise prices the final in-zone leg from each entry gate
    of the destination zone; gates missing from it cannot end the route.
    """
    if current_zone == dest_zone:
        return Route(())
    ecn = ecn or {}
    heap: list[tuple[float, tuple[str, ...], tuple[ElementId, ...], str]] = []
    exits = [g for g in interzone.gates if current_zone in g.zones]
    for g in exits:
        if origin_costs is not None and g not in origin_costs:
            continue
        c = 0.0 if origin_costs is None else origin_costs[g]
        heapq.heappush(heap, (c, (str(g),), (g,), _other_zone(g, current_zone)))
    by_gate: dict[ElementId, list[Transit]] = {}
    for t in interzone.transits:
        by_gate.setdefault(t.from_gate, []).append(t)
    done: set[tuple[ElementId, str]] = set()
    while heap:
        cost, key, gates, zone = heapq.heappop(heap)
        state = (gates[-1], zone)
        if zone and state in done:
            continue
        done.add(state)
        if not zone:
            return Route(gates, cost)
        if zone == dest_zone:
            if dest_costs is None:
                return Route(gates, cost)
            if gates[-1] in dest_costs:
                heapq.heappush(heap, (cost + dest_costs[gates[-1]], key, gates, ""))
            continue
        if zone == current_zone:
            continue
        for t in by_gate.get(gates[-1], ()):
            if t.zone != zone or t.to_gate in gates:
                continue
            level = max(ecn.get(transit_subject(t), 0.0), ecn.get(str(t.to_gate), 0.0), t.ecn_level)
            nxt = (t.to_gate, _other_zone(t.to_gate, zone))
            if nxt in done:
                continue
            heapq.heappush(
                heap,
                (cost + effective_cost(t.cost, level, penalty), key + (str(t.to_gate),), gates + (t.to_gate,), nxt[1]),
            )
    raise Unreachable(f"zone {dest_zone} unreachable from {current_zone}")


def next_gate(
    interzone: InterzoneGraph,
    current_zone: str,
    dest_zone: str,
    ecn: Mapping[str, float] | None = None,
    origin_costs: Mapping[ElementId, float] | None = None,
) -> ElementId | None:
    """First gate of the cheapest route; ``None`` means already in the destination zone."""
    return best_route(interzone, current_zone, dest_zone, ecn, origin_costs).next_gate


@dataclass(frozen=True)
class Advertisement:
    zsp_id: str
    zone: str
    congestion: float


def choose_zsp(candidates: Iterable[Any]) -> str:
    """Lowest advertised congestion, ties by zsp id.

    Accepts advertisements (anything with ``zsp``/``zsp_id`` and
    ``congestion``) or a mapping of zsp id to congestion.
    """
    if isinstance(candidates, Mapping):
        pairs = list(candidates.items())
    else:
        pairs = [(getattr(c, "zsp_id", None) or c.zsp, c.congestion) for c in candidates]
    if not pairs:
        raise NoCandidates("no ZSP advertised for the zone")
    return min(pairs, key=lambda p: (p[1], p[0]))[0]


# --- handoff -------------------------------------------------------------------

REQUESTED, ACCEPTED, COMPLETED, FAILED = "Requested", "Accepted", "Completed", "Failed"
_TRANSITIONS = {REQUESTED: {ACCEPTED, FAILED}, ACCEPTED: {COMPLETED}}


@dataclass
class HandoffRecord:
    drone_id: str
    from_zsp: str
    to_zsp: str
    gate: ElementId
    snapshot: Any = None
    route: tuple[ElementId, ...] = ()
    status: str = REQUESTED
    history: list[tuple[int, str]] = field(default_factory=list)

    def _move(self, status: str, tick: int) -> None:
        if status not in _TRANSITIONS.get(self.status, ()):
            raise InvalidTransition(f"{self.drone_id}: {self.status} -> {status}")
        self.status = status
        self.history.append((tick, status))

    def accept(self, tick: int) -> None:
        self._move(ACCEPTED, tick)

    def complete(self, tick: int) -> None:
        self._move(COMPLETED, tick)

    def fail(self, tick: int) -> None:
        self._move(FAILED, tick)

    def resolve_crossing(self, tick: int, hover: bool) -> str | None:
        """Settle the record when the drone reaches the gate center.

        Returns ``None`` on completion, otherwise the fallback action
        (``"Hold"`` for hover-capable drones, ``"Land"`` for the rest).
        """
        if self.status == ACCEPTED:
            self.complete(tick)
            return None
        self.fail(tick)
        return "Hold" if hover else "Land"


# --- explicit congestion notification -------------------------------------------


@dataclass(frozen=True)
class EcnNotice:
    origin_zsp: str
    subject: str
    level: float
    issued_at: int
    ttl: int = ECN_TTL

    def active(self, now: int) -> bool:
        return now < self.issued_at + self.ttl


def ecn_level(ratio: float, threshold: float = ECN_THRESHOLD) -> float:
    return min(1.0, max(0.0, (ratio - threshold) / (1.0 - threshold)))


def publish_ecn(
    zsp_id: str, subject: str, ratio: float, now: int, threshold: float = ECN_THRESHOLD, ttl: int = ECN_TTL
) -> EcnNotice | None:
    if ratio < threshold:
        return None
    return EcnNotice(zsp_id, subject, ecn_level(ratio, threshold), now, ttl)


class EcnTable:
    def __init__(self):
        self.notices: list[EcnNotice] = []
        self.stale = 0

    def ingest(self, notice: EcnNotice, now: int) -> None:
        if not notice.active(now):
            self.stale += 1
            raise StaleNotice(f"{notice.subject} from {notice.origin_zsp} expired")
        self.notices.append(notice)

    def purge(self, now: int) -> None:
        self.notices = [n for n in self.notices if n.active(now)]

    def levels(self, now: int) -> dict[str, float]:
        out: dict[str, float] = {}
        for n in self.notices:
            if n.active(now):
                out[n.subject] = max(out.get(n.subject, 0.0), n.level)
        return out

    def effective_costs(self, interzone: InterzoneGraph, now: int) -> dict[str, float]:
        levels = self.levels(now)
        return {
            transit_subject(t): effective_cost(
                t.cost, max(levels.get(transit_subject(t), 0.0), levels.get(str(t.to_gate), 0.0))
            )
            for t in interzone.transits
        }
