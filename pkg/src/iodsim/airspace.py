"""Airspace elements, zone graphs and the derived interzone graph.

All coordinates are local Cartesian meters (x east, y north, z up).
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping

ALTITUDE_LIMIT_M = 152.4
REGISTRATION_WEIGHT_KG = (0.25, 25.0)
SEPARATION_SPACING_M = 50.0
DEFAULT_VERTEX_CAPACITY = 2
DEFAULT_NODE_CAPACITY = 16
EARTH_RADIUS_M = 6_371_008.8

KINDS = ("airway", "intersection", "node", "gate")
VERTEX_KINDS = ("intersection", "node", "gate")
_TOKEN = re.compile(r"^[A-Za-z0-9_.\-]+$")


class MalformedAddress(ValueError):
    pass


class ValidationFailed(Exception):
    def __init__(self, message: str, errors: Iterable[str] = ()):
        self.errors = list(errors)
        detail = "; ".join(self.errors)
        super().__init__(f"{message}: {detail}" if detail else message)


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float = 0.0

    def __iter__(self):
        return iter((self.x, self.y, self.z))

    def dist(self, other: Point) -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))

    def lerp(self, other: Point, t: float) -> Point:
        return Point(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
            self.z + (other.z - self.z) * t,
        )

    def is_valid(self) -> bool:
        return all(math.isfinite(c) for c in self) and self.z >= 0.0

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z]


def geodetic_to_local(lat: float, lon: float, alt: float, origin_lat: float, origin_lon: float) -> Point:
    """Equirectangular projection around a reference origin."""
    x = EARTH_RADIUS_M * math.radians(lon - origin_lon) * math.cos(math.radians(origin_lat))
    y = EARTH_RADIUS_M * math.radians(lat - origin_lat)
    return Point(x, y, alt)


@dataclass(frozen=True)
class ElementId:
    zones: tuple[str, ...]
    kind: str
    local: str

    @property
    def zone(self) -> str:
        return self.zones[0]

    @property
    def is_gate(self) -> bool:
        return self.kind == "gate"

    @property
    def is_vertex(self) -> bool:
        return self.kind in VERTEX_KINDS

    def in_zone(self, zone: str) -> bool:
        return zone in self.zones

    def __str__(self) -> str:
        return format_address(self)

    def __lt__(self, other: ElementId) -> bool:
        return str(self) < str(other)


def format_address(eid: ElementId) -> str:
    return f"{'+'.join(eid.zones)}/{eid.kind}/{eid.local}"


def parse_address(text: str) -> ElementId:
    parts = text.split("/") if isinstance(text, str) else []
    if len(parts) != 3:
        raise MalformedAddress(f"expected zone/kind/local, got {text!r}")
    zone_part, kind, local = parts
    if kind not in KINDS:
        raise MalformedAddress(f"unknown element kind {kind!r} in {text!r}")
    zones = tuple(zone_part.split("+"))
    if not _TOKEN.match(local) or not all(_TOKEN.match(z) for z in zones):
        raise MalformedAddress(f"bad token in {text!r}")
    if kind == "gate":
        if len(zones) != 2 or zones[0] == zones[1]:
            raise MalformedAddress(f"gate needs two distinct zones: {text!r}")
        zones = tuple(sorted(zones))
    elif len(zones) != 1:
        raise MalformedAddress(f"{kind} must belong to exactly one zone: {text!r}")
    return ElementId(zones, kind, local)


def gate_id(zone_a: str, zone_b: str, local: str) -> ElementId:
    return ElementId(tuple(sorted((zone_a, zone_b))), "gate", local)


# --- geometry ---------------------------------------------------------------


@dataclass(frozen=True)
class Corridor:
    centerline: tuple[Point, ...]
    radius: float

    @cached_property
    def length(self) -> float:
        return sum(a.dist(b) for a, b in zip(self.centerline, self.centerline[1:]))

    def point_at(self, s: float) -> Point:
        """Point at arc length ``s`` along the centerline (clamped)."""
        if s <= 0:
            return self.centerline[0]
        for a, b in zip(self.centerline, self.centerline[1:]):
            seg = a.dist(b)
            if s <= seg and seg > 0:
                return a.lerp(b, s / seg)
            s -= seg
        return self.centerline[-1]


@dataclass(frozen=True)
class Sphere:
    center: Point
    radius: float


@dataclass(frozen=True)
class Box:
    min: Point
    max: Point

    @property
    def center(self) -> Point:
        return self.min.lerp(self.max, 0.5)


Geometry = Corridor | Sphere | Box

_GEOMETRY_FOR_KIND = {"airway": Corridor, "intersection": Sphere, "gate": Sphere, "node": Box}


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    ab = (b.x - a.x, b.y - a.y, b.z - a.z)
    ap = (p.x - a.x, p.y - a.y, p.z - a.z)
    denom = ab[0] ** 2 + ab[1] ** 2 + ab[2] ** 2
    t = 0.0 if denom == 0 else max(0.0, min(1.0, sum(u * v for u, v in zip(ab, ap)) / denom))
    return p.dist(a.lerp(b, t))


def contains(geometry: Geometry, p: Point, tol: float = 1e-9) -> bool:
    """Boundary-inclusive containment test."""
    if isinstance(geometry, Sphere):
        return p.dist(geometry.center) <= geometry.radius + tol * max(1.0, geometry.radius)
    if isinstance(geometry, Corridor):
        pts = geometry.centerline
        d = min(_point_segment_distance(p, a, b) for a, b in zip(pts, pts[1:]))
        return d <= geometry.radius + tol * max(1.0, geometry.radius)
    if isinstance(geometry, Box):
        lo, hi = geometry.min, geometry.max
        return all(a - tol <= v <= b + tol for v, a, b in zip(p, lo, hi))
    raise TypeError(f"unsupported geometry {type(geometry).__name__}")


def anchor(geometry: Geometry) -> Point:
    """Representative interior point used when connecting airways."""
    if isinstance(geometry, Corridor):
        return geometry.point_at(geometry.length / 2)
    return geometry.center


def top_altitude(geometry: Geometry) -> float:
    if isinstance(geometry, Corridor):
        return max(p.z for p in geometry.centerline) + geometry.radius
    if isinstance(geometry, Sphere):
        return geometry.center.z + geometry.radius
    return geometry.max.z


# --- metadata and performance -------------------------------------------------


@dataclass(frozen=True)
class PerformanceProfile:
    vtol: bool = True
    hover: bool = True
    max_speed: float = 10.0
    fuel_capacity: float = 1800.0
    fuel_kind: str = "electric"
    weight: float = 2.0


@dataclass(frozen=True)
class PerformanceFloor:
    vtol: bool = False
    hover: bool = False
    max_speed: float = 0.0
    fuel_capacity: float = 0.0


@dataclass(frozen=True)
class Metadata:
    capacity: int | None = None
    min_performance: PerformanceFloor = PerformanceFloor()
    access: frozenset[str] | None = None  # None means public
    components: Mapping[str, str] = field(default_factory=dict, hash=False, compare=False)
    direction: tuple[ElementId, ElementId] | None = None

    @property
    def is_public(self) -> bool:
        return self.access is None

    def allows(self, owner: str) -> bool:
        return self.access is None or owner in self.access


@dataclass(frozen=True)
class Element:
    id: ElementId
    geometry: Geometry
    meta: Metadata = Metadata()

    @property
    def kind(self) -> str:
        return self.id.kind

    @cached_property
    def length(self) -> float:
        return self.geometry.length if isinstance(self.geometry, Corridor) else 0.0

    @property
    def capacity(self) -> int:
        if self.meta.capacity is not None:
            return self.meta.capacity
        if self.kind == "airway":
            return max(1, math.floor(self.length / SEPARATION_SPACING_M))
        if self.kind == "node":
            return DEFAULT_NODE_CAPACITY
        return DEFAULT_VERTEX_CAPACITY

    @property
    def landing(self) -> bool:
        return self.kind == "node" and self.meta.components.get("landing", "false") == "true"

    @property
    def fuel_kind(self) -> str | None:
        return self.meta.components.get("fuel_kind") if self.kind == "node" else None

    @property
    def speed_limit(self) -> float | None:
        raw = self.meta.components.get("speed_limit")
        return float(raw) if raw is not None else None


def meets_performance(profile: PerformanceProfile, element: Element, extra_speed: float = 0.0) -> bool:
    """Componentwise dominance of ``profile`` over the element's floor.

    ``extra_speed`` raises the max_speed floor (wind coupling).
    """
    floor = element.meta.min_performance
    if floor.vtol and not profile.vtol:
        return False
    if floor.hover and not profile.hover:
        return False
    speed_floor = floor.max_speed + (extra_speed if element.kind == "airway" else 0.0)
    return profile.max_speed >= speed_floor and profile.fuel_capacity >= floor.fuel_capacity


# --- zone graph ------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneGraph:
    zone: str
    elements: tuple[Element, ...]

    @cached_property
    def by_id(self) -> dict[ElementId, Element]:
        return {e.id: e for e in self.elements}

    @property
    def vertices(self) -> list[Element]:
        return [e for e in self.elements if e.id.is_vertex]

    @property
    def edges(self) -> list[Element]:
        return [e for e in self.elements if e.kind == "airway"]

    @property
    def gates(self) -> list[ElementId]:
        return sorted(e.id for e in self.elements if e.id.is_gate)

    def __contains__(self, eid: ElementId) -> bool:
        return eid in self.by_id

    def __getitem__(self, eid: ElementId) -> Element:
        return self.by_id[eid]

    @cached_property
    def _out(self) -> dict[ElementId, list[Element]]:
        out: dict[ElementId, list[Element]] = {v.id: [] for v in self.vertices}
        for a in self.edges:
            if a.meta.direction is None:
                continue
            src = a.meta.direction[0]
            out.setdefault(src, []).append(a)
        for lst in out.values():
            lst.sort(key=lambda e: str(e.id))
        return out

    def out_airways(self, vertex: ElementId) -> list[Element]:
        return self._out.get(vertex, [])

    def neighbors(self, eid: ElementId) -> set[ElementId]:
        """Elements sharing an endpoint with ``eid`` (graph adjacency)."""
        el = self.by_id.get(eid)
        if el is None:
            return set()
        if el.kind == "airway":
            return set(el.meta.direction or ())
        found = set()
        for a in self.edges:
            if a.meta.direction and eid in a.meta.direction:
                found.add(a.id)
        return found

    def with_elements(self, elements: Iterable[Element]) -> ZoneGraph:
        return ZoneGraph(self.zone, tuple(elements))


# --- validation ------------------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _geometry_errors(el: Element) -> list[str]:
    g, name = el.geometry, str(el.id)
    errs = []
    expected = _GEOMETRY_FOR_KIND.get(el.kind)
    if expected is None or not isinstance(g, expected):
        errs.append(f"{name}: kind {el.kind} does not match geometry {type(g).__name__}")
        return errs
    if isinstance(g, Corridor):
        if len(g.centerline) < 2:
            errs.append(f"{name}: corridor needs at least 2 centerline points")
        if any(a == b for a, b in zip(g.centerline, g.centerline[1:])):
            errs.append(f"{name}: repeated centerline point")
        pts = g.centerline
    elif isinstance(g, Sphere):
        pts = (g.center,)
    else:
        pts = (g.min, g.max)
        if not all(a < b for a, b in zip(g.min, g.max)):
            errs.append(f"{name}: box min must be below max componentwise")
    if not isinstance(g, Box) and not g.radius > 0:
        errs.append(f"{name}: radius must be positive")
    if not all(p.is_valid() for p in pts):
        errs.append(f"{name}: coordinates must be finite with z >= 0")
    return errs


def validate_zone_graph(graph: ZoneGraph) -> ValidationReport:
    report = ValidationReport()
    errors, warnings = report.errors, report.warnings
    seen: set[ElementId] = set()
    for el in graph.elements:
        if el.id in seen:
            errors.append(f"{el.id}: duplicate element id")
        seen.add(el.id)
    vertex_ids = {e.id for e in graph.elements if e.id.is_vertex}

    for el in graph.elements:
        name = str(el.id)
        if graph.zone not in el.id.zones:
            errors.append(f"{name}: element does not belong to zone {graph.zone}")
        if el.id.is_gate and (len(el.id.zones) != 2 or el.id.zones[0] == el.id.zones[1]):
            errors.append(f"{name}: gate must join exactly two zones")
        if not el.id.is_gate and len(el.id.zones) != 1:
            errors.append(f"{name}: only gates may span zones")
        errors.extend(_geometry_errors(el))
        meta = el.meta
        if meta.capacity is not None and meta.capacity < 1:
            errors.append(f"{name}: capacity must be >= 1")
        if meta.access is not None and not meta.access:
            errors.append(f"{name}: private element needs a non-empty allowlist")
        if isinstance(el.geometry, _GEOMETRY_FOR_KIND.get(el.kind, ())) and top_altitude(el.geometry) > ALTITUDE_LIMIT_M:
            warnings.append(f"{name}: geometry exceeds {ALTITUDE_LIMIT_M} m altitude limit")
        lo, hi = REGISTRATION_WEIGHT_KG
        for key in ("min_weight_kg", "max_weight_kg"):
            if key in meta.components:
                w = float(meta.components[key])
                if not lo <= w <= hi:
                    warnings.append(f"{name}: {key}={w} outside registration band [{lo}, {hi}] kg")

        if el.kind != "airway":
            if meta.direction is not None:
                errors.append(f"{name}: only airways carry a direction")
            continue
        if meta.direction is None:
            errors.append(f"{name}: airway has no from/to vertices")
            continue
        src, dst = meta.direction
        if src == dst:
            errors.append(f"{name}: airway joins a vertex to itself")
        if graph.zone not in src.zones or graph.zone not in dst.zones:
            errors.append(f"{name}: airway crosses zone border")
        for end in (src, dst):
            if not end.is_vertex:
                errors.append(f"{name}: endpoint {end} is not a vertex element")
            elif end not in vertex_ids:
                errors.append(f"{name}: dangling endpoint {end}")
        if isinstance(el.geometry, Corridor) and len(el.geometry.centerline) >= 2:
            by_id = graph.by_id
            for end, p in ((src, el.geometry.centerline[0]), (dst, el.geometry.centerline[-1])):
                v = by_id.get(end)
                if v is not None and not _geometry_errors(v) and not contains(v.geometry, p):
                    errors.append(f"{name}: centerline end not inside {end}")
    return report


def validate_airspace(graphs: Iterable[ZoneGraph]) -> ValidationReport:
    """Per-zone checks plus the cross-zone gate rules."""
    graphs = list(graphs)
    report = ValidationReport()
    owners: dict[ElementId, list[str]] = {}
    for g in graphs:
        sub = validate_zone_graph(g)
        report.errors += sub.errors
        report.warnings += sub.warnings
        for el in g.elements:
            owners.setdefault(el.id, []).append(g.zone)
    zones = {g.zone for g in graphs}
    for eid, zs in sorted(owners.items(), key=lambda kv: str(kv[0])):
        if eid.is_gate:
            if sorted(zs) != sorted(eid.zones):
                if all(z in zones for z in eid.zones):
                    report.errors.append(f"{eid}: gate must appear in both zone graphs {eid.zones}")
                else:
                    report.errors.append(f"{eid}: gate references unknown zone")
        elif len(zs) != 1:
            report.errors.append(f"{eid}: element appears in {len(zs)} zone graphs")
    return report


# --- shortest paths ----------------------------------------------------------------


def _default_ok(_: Element) -> bool:
    return True


def shortest_pathway(
    graph: ZoneGraph,
    src: ElementId,
    dst: ElementId,
    allowed: Callable[[Element], bool] = _default_ok,
) -> tuple[float, tuple[ElementId, ...]] | None:
    """Minimum-length element sequence ``src .. dst`` (endpoints included).

    Intermediate vertices must be intersections.  Ties resolve to the
    lexicographically smallest sequence of rendered addresses.
    """
    if src not in graph or dst not in graph:
        return None
    if not allowed(graph[src]) or not allowed(graph[dst]):
        return None
    if src == dst:
        return 0.0, (src,)
    start = (str(src),)
    heap: list[tuple[float, tuple[str, ...], tuple[ElementId, ...]]] = [(0.0, start, (src,))]
    done: set[ElementId] = set()
    while heap:
        cost, key, path = heapq.heappop(heap)
        v = path[-1]
        if v in done:
            continue
        done.add(v)
        if v == dst:
            return cost, path
        if v != src and graph[v].kind != "intersection":
            continue
        for a in graph.out_airways(v):
            w = a.meta.direction[1]
            if w in done or w not in graph or not allowed(a) or not allowed(graph[w]):
                continue
            heapq.heappush(heap, (cost + a.length, key + (str(a.id), str(w)), path + (a.id, w)))
    return None


def distances_to(
    graph: ZoneGraph,
    targets: Iterable[ElementId],
    allowed: Callable[[Element], bool] = _default_ok,
) -> dict[ElementId, float]:
    """Shortest remaining length from every element to the nearest target.

    Airways report the distance from their exit end.  Gates may be passed
    through here (a drone can turn around at one), unlike in pathways.
    """
    rev: dict[ElementId, list[Element]] = {}
    for a in graph.edges:
        if a.meta.direction and allowed(a):
            rev.setdefault(a.meta.direction[1], []).append(a)
    dist: dict[ElementId, float] = {}
    heap = [(0.0, str(t), t) for t in targets if t in graph and allowed(graph[t])]
    heapq.heapify(heap)
    while heap:
        d, _, v = heapq.heappop(heap)
        if v in dist:
            continue
        dist[v] = d
        el = graph[v]
        if el.kind == "airway":
            u = el.meta.direction[0]
            if u in graph and u not in dist and allowed(graph[u]):
                heapq.heappush(heap, (d + el.length, str(u), u))
            continue
        if el.kind not in ("intersection", "gate") and d > 0:
            continue
        for a in rev.get(v, []):
            if a.id not in dist:
                heapq.heappush(heap, (d, str(a.id), a.id))
    return dist


# --- interzone graph ----------------------------------------------------------------


@dataclass(frozen=True)
class Transit:
    from_gate: ElementId
    to_gate: ElementId
    zone: str
    cost: float
    ecn_level: float = 0.0
    path: tuple[ElementId, ...] = ()

    @property
    def key(self) -> tuple[str, str, str]:
        return (str(self.from_gate), str(self.to_gate), self.zone)

    @property
    def effective_cost(self) -> float:
        return effective_cost(self.cost, self.ecn_level)


ECN_PENALTY = 2.0


def effective_cost(cost: float, level: float, penalty: float = ECN_PENALTY) -> float:
    return cost * (1.0 + penalty * level)


@dataclass(frozen=True)
class InterzoneGraph:
    gates: tuple[ElementId, ...]
    transits: tuple[Transit, ...]

    def transits_from(self, gate: ElementId) -> list[Transit]:
        return [t for t in self.transits if t.from_gate == gate]

    def transit(self, from_gate: ElementId, to_gate: ElementId, zone: str) -> Transit | None:
        for t in self.transits:
            if t.from_gate == from_gate and t.to_gate == to_gate and t.zone == zone:
                return t
        return None

    def zones(self) -> set[str]:
        return {z for g in self.gates for z in g.zones}

    def with_levels(self, levels: Mapping[tuple[str, str, str], float]) -> InterzoneGraph:
        return InterzoneGraph(
            self.gates,
            tuple(
                Transit(t.from_gate, t.to_gate, t.zone, t.cost, levels.get(t.key, 0.0), t.path)
                for t in self.transits
            ),
        )


def derive_interzone(zones: Iterable[ZoneGraph]) -> InterzoneGraph:
    zones = sorted(zones, key=lambda g: g.zone)
    bad = [e for g in zones for e in validate_zone_graph(g).errors]
    if bad:
        raise ValidationFailed("zone graph invalid", bad)
    gates: set[ElementId] = set()
    transits: list[Transit] = []
    for g in zones:
        zone_gates = g.gates
        gates.update(zone_gates)
        for a in zone_gates:
            for b in zone_gates:
                if a == b:
                    continue
                found = shortest_pathway(g, a, b)
                if found is not None:
                    transits.append(Transit(a, b, g.zone, found[0], 0.0, found[1]))
    transits.sort(key=lambda t: t.key)
    return InterzoneGraph(tuple(sorted(gates)), tuple(transits))
