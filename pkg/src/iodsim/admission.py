"""Admission control with probability-weighted shadow reservations.

A drone's planned elements are reserved ahead of time: the i-th element
ahead gets weight ``rho**i`` over a tick window around its estimated time of
arrival.  A takeoff is admitted only if every reserved element stays within
capacity for every tick of its window; otherwise the earliest start shift
that fits is returned as a ground delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .airspace import Box, Corridor, Element, ElementId, PerformanceProfile, Sphere

RHO = 0.8
SIGMA_FRACTION = 0.2
SIGMA_MIN = 2.0
HORIZON_ZONES = 2
MAX_SHIFT = 300
DEFAULT_SPEED = 15.0


@dataclass(frozen=True)
class Reservation:
    drone_id: str
    element: ElementId
    window: tuple[int, int]
    weight: float
    index: int = 0

    def __post_init__(self):
        lo, hi = self.window
        if lo > hi:
            raise ValueError(f"empty window {self.window}")
        if not 0 < self.weight <= 1:
            raise ValueError(f"weight {self.weight} outside (0, 1]")

    def shifted(self, s: int) -> Reservation:
        lo, hi = self.window
        return Reservation(self.drone_id, self.element, (lo + s, hi + s), self.weight, self.index)


@dataclass(frozen=True)
class AdmissionDecision:
    admit: bool
    delay: int = 0
    reservations: tuple[Reservation, ...] = ()

    def __post_init__(self):
        if not self.admit and self.delay < 1:
            raise ValueError("a denial carries a delay of at least one tick")

    @property
    def verdict(self) -> str:
        return "Admit" if self.admit else f"Deny({self.delay})"


def traverse_length(el: Element) -> float:
    g = el.geometry
    if isinstance(g, Corridor):
        return g.length
    if isinstance(g, Sphere):
        return g.radius
    if isinstance(g, Box):
        return g.max.z - g.min.z
    return 0.0


def travel_times(elements: Sequence[Element], profile: PerformanceProfile) -> list[tuple[float, float]]:
    """(enter, exit) offsets in ticks for each element, at 1 s per tick."""
    out = []
    t = 0.0
    for el in elements:
        limit = el.speed_limit if el.speed_limit is not None else DEFAULT_SPEED
        speed = max(1.0, min(profile.max_speed, limit))
        dt = traverse_length(el) / speed
        out.append((t, t + dt))
        t += dt
    return out


def _zone_index(elements: Sequence[Element]) -> list[int]:
    """Zone ordinal per element; a gate counts toward the zone it leads into."""
    idx, inside, out = 0, False, []
    for el in elements:
        if el.id.is_gate:
            if inside:
                idx += 1
            inside = False
        else:
            inside = True
        out.append(idx)
    return out


def shadow_reserve(
    drone_id: str,
    elements: Sequence[Element],
    start_tick: int,
    profile: PerformanceProfile,
    rho: float = RHO,
    horizon: int = HORIZON_ZONES,
    index_offset: int = 0,
    elapsed: float = 0.0,
) -> list[Reservation]:
    """Weighted reservations for ``elements`` (element 0 is the current one).

    ``elapsed`` is travel time already accumulated before the first element
    and feeds the window widening; ``index_offset`` continues the weight
    decay of a reservation chain started in another zone.
    """
    out = []
    zones = _zone_index(elements)
    for i, (el, (t_in, t_out)) in enumerate(zip(elements, travel_times(elements, profile))):
        if zones[i] >= horizon:
            break
        sigma = max(SIGMA_MIN, SIGMA_FRACTION * (elapsed + t_in))
        lo = math.floor(start_tick + t_in - sigma)
        hi = math.ceil(start_tick + t_out + sigma)
        k = i + index_offset
        out.append(Reservation(drone_id, el.id, (lo, hi), rho**k, k))
    return out


class ReservationTable:
    """Per-ZSP reservation book with an incremental per-tick load map."""

    def __init__(self, capacity: Callable[[ElementId], float], rho: float = RHO, max_shift: int = MAX_SHIFT):
        self.capacity = capacity
        self.rho = rho
        self.max_shift = max_shift
        self.by_drone: dict[str, list[Reservation]] = {}
        self._load: dict[ElementId, dict[int, float]] = {}

    # --- bookkeeping --------------------------------------------------------

    def _apply(self, res: Reservation, sign: float) -> None:
        slots = self._load.setdefault(res.element, {})
        lo, hi = res.window
        for t in range(lo, hi + 1):
            v = slots.get(t, 0.0) + sign * res.weight
            if abs(v) < 1e-12:
                slots.pop(t, None)
            else:
                slots[t] = v

    def add(self, reservations: Iterable[Reservation]) -> None:
        for r in reservations:
            self.by_drone.setdefault(r.drone_id, []).append(r)
            self._apply(r, 1.0)

    def remove_drone(self, drone_id: str) -> list[Reservation]:
        gone = self.by_drone.pop(drone_id, [])
        for r in gone:
            self._apply(r, -1.0)
        return gone

    def replace(self, drone_id: str, reservations: Iterable[Reservation]) -> None:
        self.remove_drone(drone_id)
        self.add(reservations)

    def load(self, element: ElementId, tick: int) -> float:
        return self._load.get(element, {}).get(tick, 0.0)

    def reservations(self) -> list[Reservation]:
        return [r for d in sorted(self.by_drone) for r in self.by_drone[d]]

    def purge(self, now: int) -> None:
        for drone_id in sorted(self.by_drone):
            old = self.by_drone[drone_id]
            keep = [r for r in old if r.window[1] >= now]
            if len(keep) != len(old):
                for r in old:
                    if r.window[1] < now:
                        self._apply(r, -1.0)
                if keep:
                    self.by_drone[drone_id] = keep
                else:
                    del self.by_drone[drone_id]

    # --- decisions ----------------------------------------------------------

    def fits(self, reservations: Sequence[Reservation], shift: int = 0, extra=None) -> bool:
        for r in reservations:
            cap = self.capacity(r.element)
            lo, hi = r.window
            for t in range(lo + shift, hi + shift + 1):
                base = self.load(r.element, t)
                if extra is not None:
                    base += extra(r.element, t)
                if base + r.weight > cap + 1e-9:
                    return False
        return True

    def min_shift(self, reservations: Sequence[Reservation], start: int = 0, extra=None) -> int | None:
        for s in range(start, self.max_shift + 1):
            if self.fits(reservations, s, extra):
                return s
        return None

    def request_admission(self, drone_id: str, reservations: Sequence[Reservation], extra=None) -> AdmissionDecision:
        """Admit at shift 0 or deny with the earliest fitting shift.

        Any previous booking by the same drone is replaced, and the chosen
        slot is booked either way so a re-request after the delay fits.
        """
        self.remove_drone(drone_id)
        shift = self.min_shift(reservations, 0, extra)
        if shift is None:
            return AdmissionDecision(False, self.max_shift, ())
        booked = tuple(r.shifted(shift) for r in reservations)
        self.add(booked)
        if shift == 0:
            return AdmissionDecision(True, 0, booked)
        return AdmissionDecision(False, shift, booked)

    def release(self, drone_id: str, element: ElementId | None = None) -> None:
        """Drop reservations up to and including ``element`` and promote the rest.

        With ``element`` None every reservation of the drone is dropped.
        """
        mine = self.by_drone.get(drone_id)
        if not mine:
            return
        if element is None:
            self.remove_drone(drone_id)
            return
        hit = [r.index for r in mine if r.element == element]
        if not hit:
            return
        cut = max(hit)
        rest = [r for r in mine if r.index > cut]
        self.remove_drone(drone_id)
        if rest:
            base = rest[0].index
            self.add(Reservation(r.drone_id, r.element, r.window, self.rho ** (r.index - base), r.index - base)
                     for r in rest)

    def dump(self) -> list[dict]:
        return [
            {"drone": r.drone_id, "element": str(r.element), "lo": r.window[0], "hi": r.window[1],
             "weight": round(r.weight, 6), "index": r.index}
            for r in self.reservations()
        ]


@dataclass(frozen=True)
class Occupant:
    drone_id: str
    admitted_at: int
    hover: bool


def mitigate(occupants: Sequence[Occupant], capacity: int, upstream_room: int) -> list[tuple[str, str]]:
    """Hold or Ground the latest-admitted occupants until the element fits.

    A hover-capable drone is held while the upstream vertex has room;
    everything else is grounded (landed at its contingency node).
    """
    excess = len(occupants) - capacity
    out: list[tuple[str, str]] = []
    if excess <= 0:
        return out
    ranked = sorted(occupants, key=lambda o: (o.admitted_at, o.drone_id), reverse=True)
    for occ in ranked[:excess]:
        if occ.hover and upstream_room > 0:
            upstream_room -= 1
            out.append((occ.drone_id, "Hold"))
        else:
            out.append((occ.drone_id, "Ground"))
    return out
