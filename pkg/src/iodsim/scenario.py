"""Scenario files: parsing, validation, serialization and built-in generators.

A scenario is a JSON document with the sections ``zones``, ``elements``,
``zsps``, ``drones``, ``trips``, ``weather`` and ``sim`` plus an optional
``services`` section (zone publications and demo tasks).  See
``docs/SCHEMA.md`` for the field reference.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .airspace import (
    REGISTRATION_WEIGHT_KG,
    Box,
    Corridor,
    Element,
    ElementId,
    MalformedAddress,
    Metadata,
    PerformanceFloor,
    PerformanceProfile,
    Point,
    Sphere,
    ValidationFailed,
    ZoneGraph,
    geodetic_to_local,
    parse_address,
    validate_airspace,
)
from .fixtures import fixture_2z, fixture_3z
from .zsp import WeatherReport


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class DroneSpec:
    drone_id: str
    owner: str
    spawn: ElementId
    spawn_tick: int = 0
    profile: PerformanceProfile = PerformanceProfile()
    weight_kg: float | None = None
    fuel: float | None = None
    fail_at: int | None = None


@dataclass(frozen=True)
class TripSpec:
    drone: str
    dst: ElementId
    tick: int = 0


@dataclass(frozen=True)
class ZspSpec:
    zsp_id: str
    zone: str
    owner: str


@dataclass(frozen=True)
class Publication:
    msg_id: str
    zone: str
    payload: bytes
    tick: int
    ttl: int


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    zone: str
    pickup: ElementId
    dropoff: ElementId
    tick: int
    ttl: int = 30


@dataclass(frozen=True)
class SimParams:
    seed: int
    ticks: int = 200
    tick_s: float = 1.0
    loss: float = 0.0
    admission: bool = True
    silent_zsps: tuple[str, ...] = ()


@dataclass
class Scenario:
    zones: dict[str, ZoneGraph]
    zsps: list[ZspSpec]
    drones: list[DroneSpec]
    trips: list[TripSpec]
    weather: list[tuple[int, WeatherReport]]
    sim: SimParams
    publications: list[Publication] = field(default_factory=list)
    tasks: list[TaskSpec] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    origin: tuple[float, float] | None = None

    def with_sim(self, **changes) -> Scenario:
        return replace(self, sim=replace(self.sim, **changes))

    @property
    def gates(self) -> list[ElementId]:
        return sorted({g for z in self.zones.values() for g in z.gates})


# --- parsing ----------------------------------------------------------------------------


def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise ParseError(f"{where}: missing field {key!r}")
    return raw[key]


def _address(text: Any, where: str) -> ElementId:
    try:
        return parse_address(text)
    except MalformedAddress as exc:
        raise ParseError(f"{where}: {exc}") from None


def _point(raw: Any, origin, where: str) -> Point:
    if isinstance(raw, dict):
        if origin is None:
            raise ParseError(f"{where}: geodetic point needs sim.origin")
        try:
            return geodetic_to_local(float(raw["lat"]), float(raw["lon"]), float(raw.get("alt", 0.0)), *origin)
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{where}: geodetic point needs lat, lon and alt") from None
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ParseError(f"{where}: a point is [x, y, z] or {{lat, lon, alt}}")
    try:
        return Point(*(float(v) for v in raw))
    except (TypeError, ValueError):
        raise ParseError(f"{where}: non-numeric coordinate") from None


def _geometry(raw: dict, origin, where: str):
    kind = raw.get("type")
    if kind == "corridor":
        return Corridor(tuple(_point(p, origin, where) for p in _require(raw, "points", where)),
                        float(_require(raw, "radius", where)))
    if kind == "sphere":
        return Sphere(_point(_require(raw, "center", where), origin, where), float(_require(raw, "radius", where)))
    if kind == "box":
        return Box(_point(_require(raw, "min", where), origin, where), _point(_require(raw, "max", where), origin, where))
    raise ParseError(f"{where}: unknown geometry type {kind!r}")


def _element(raw: dict, origin) -> Element:
    eid = _address(_require(raw, "id", "element"), "element")
    where = f"element {eid}"
    geometry = _geometry(_require(raw, "geometry", where), origin, where)
    direction = None
    if "from" in raw or "to" in raw:
        direction = (_address(_require(raw, "from", where), where), _address(_require(raw, "to", where), where))
    floor = PerformanceFloor(**raw.get("min_performance", {}))
    access = raw.get("access")
    meta = Metadata(
        capacity=raw.get("capacity"),
        min_performance=floor,
        access=None if access is None else frozenset(access),
        components={str(k): str(v) for k, v in sorted(raw.get("components", {}).items())},
        direction=direction,
    )
    return Element(eid, geometry, meta)


def _profile(raw: dict) -> PerformanceProfile:
    allowed = PerformanceProfile.__dataclass_fields__
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ParseError(f"profile: unknown fields {unknown}")
    return PerformanceProfile(**raw)


def parse_scenario(doc: dict) -> Scenario:
    """Build and validate a :class:`Scenario` from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    for section in ("zones", "elements", "zsps", "drones", "sim"):
        if section not in doc:
            raise ParseError(f"missing section {section!r}")
    sim_raw = doc["sim"]
    if "seed" not in sim_raw:
        raise ParseError("seed required")
    origin = None
    if "origin" in sim_raw:
        origin = (float(sim_raw["origin"]["lat"]), float(sim_raw["origin"]["lon"]))
    loss = float(sim_raw.get("loss", 0.0))
    if not 0.0 <= loss < 1.0:
        raise ParseError(f"loss probability {loss} outside [0, 1)")
    sim = SimParams(
        seed=int(sim_raw["seed"]),
        ticks=int(sim_raw.get("ticks", 200)),
        tick_s=float(sim_raw.get("tick_s", 1.0)),
        loss=loss,
        admission=bool(sim_raw.get("admission", True)),
        silent_zsps=tuple(sorted(sim_raw.get("silent_zsps", ()))),
    )

    zone_names = sorted(z if isinstance(z, str) else z["id"] for z in doc["zones"])
    elements = sorted((_element(e, origin) for e in doc["elements"]), key=lambda e: str(e.id))
    errors: list[str] = []
    for el in elements:
        for z in el.id.zones:
            if z not in zone_names:
                errors.append(f"{el.id}: unknown zone {z}")
    zones = {z: ZoneGraph(z, tuple(e for e in elements if z in e.id.zones)) for z in zone_names}
    report = validate_airspace(zones.values())
    errors += report.errors
    warnings = list(report.warnings)

    zsps = sorted(
        (ZspSpec(_require(z, "id", "zsp"), _require(z, "zone", "zsp"), z.get("owner", "iodsp")) for z in doc["zsps"]),
        key=lambda s: s.zsp_id,
    )
    for s in zsps:
        if s.zone not in zones:
            errors.append(f"zsp {s.zsp_id}: unknown zone {s.zone}")
    for z in zone_names:
        if not any(s.zone == z for s in zsps):
            errors.append(f"zone {z}: no ZSP serves it")

    lo, hi = REGISTRATION_WEIGHT_KG
    drones = []
    for raw in doc["drones"]:
        did = _require(raw, "id", "drone")
        spawn = _address(_require(raw, "spawn", f"drone {did}"), f"drone {did}")
        profile = _profile(raw.get("profile", {}))
        weight = raw.get("weight_kg")
        spec = DroneSpec(did, raw.get("owner", ""), spawn, int(raw.get("spawn_tick", 0)), profile,
                         None if weight is None else float(weight), raw.get("fuel"), raw.get("fail_at"))
        w = profile.weight if spec.weight_kg is None else spec.weight_kg
        if not lo <= w <= hi:
            warnings.append(f"drone {did}: weight {w} kg outside registration band [{lo}, {hi}] kg")
        if spawn.zone not in zones or spawn not in zones[spawn.zone] or spawn.kind != "node":
            errors.append(f"drone {did}: spawn {spawn} is not a node of the airspace")
        drones.append(spec)
    drones.sort(key=lambda d: d.drone_id)
    ids = [d.drone_id for d in drones]
    if len(set(ids)) != len(ids):
        errors.append("duplicate drone ids")

    trips = []
    for raw in doc.get("trips", []):
        trip = TripSpec(_require(raw, "drone", "trip"), _address(_require(raw, "dst", "trip"), "trip"),
                        int(raw.get("tick", 0)))
        if trip.drone not in ids:
            errors.append(f"trip: unknown drone {trip.drone}")
        if trip.dst.zone not in zones or trip.dst not in zones[trip.dst.zone]:
            errors.append(f"trip: unknown destination {trip.dst}")
        trips.append(trip)
    trips.sort(key=lambda t: (t.tick, t.drone))

    weather = []
    for raw in doc.get("weather", []):
        report_ = WeatherReport(tuple(raw.get("wind", (0.0, 0.0))), float(raw.get("temperature", 20.0)),
                                int(raw.get("valid_until", 2**31 - 1)), int(raw.get("tick", 0)))
        weather.append((int(raw.get("tick", 0)), report_))
    weather.sort(key=lambda w: w[0])

    services = doc.get("services", {})
    pubs = [
        Publication(p["msg_id"], p["zone"], p.get("payload", "").encode(), int(p.get("tick", 0)), int(p.get("ttl", 10)))
        for p in services.get("publications", [])
    ]
    tasks = [
        TaskSpec(t["task_id"], t["zone"], _address(t["pickup"], "task"), _address(t["dropoff"], "task"),
                 int(t.get("tick", 0)), int(t.get("ttl", 30)))
        for t in services.get("tasks", [])
    ]
    for item in pubs + tasks:
        if item.zone not in zones:
            errors.append(f"service item in unknown zone {item.zone}")
        elif isinstance(item, Publication) and item.ttl < 1:
            errors.append(f"publication {item.msg_id}: ttl must be >= 1")

    if errors:
        raise ValidationFailed("scenario invalid", errors)
    return Scenario(zones, zsps, drones, trips, weather, sim, pubs, tasks, warnings, origin)


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_scenario(doc)


# --- serialization ------------------------------------------------------------------------


def _geometry_doc(g) -> dict:
    if isinstance(g, Corridor):
        return {"type": "corridor", "points": [p.as_list() for p in g.centerline], "radius": g.radius}
    if isinstance(g, Sphere):
        return {"type": "sphere", "center": g.center.as_list(), "radius": g.radius}
    return {"type": "box", "min": g.min.as_list(), "max": g.max.as_list()}


def element_doc(el: Element) -> dict:
    doc: dict[str, Any] = {"id": str(el.id), "geometry": _geometry_doc(el.geometry)}
    m = el.meta
    if m.direction is not None:
        doc["from"], doc["to"] = str(m.direction[0]), str(m.direction[1])
    if m.capacity is not None:
        doc["capacity"] = m.capacity
    if m.min_performance != PerformanceFloor():
        doc["min_performance"] = dict(vars(m.min_performance))
    if m.access is not None:
        doc["access"] = sorted(m.access)
    if m.components:
        doc["components"] = dict(sorted(m.components.items()))
    return doc


def scenario_to_dict(sc: Scenario) -> dict:
    elements = sorted({e.id: e for z in sc.zones.values() for e in z.elements}.values(), key=lambda e: str(e.id))
    default = PerformanceProfile()

    def drone_doc(d: DroneSpec) -> dict:
        doc: dict[str, Any] = {"id": d.drone_id, "owner": d.owner, "spawn": str(d.spawn), "spawn_tick": d.spawn_tick}
        prof = {k: v for k, v in vars(d.profile).items() if getattr(default, k) != v}
        if prof:
            doc["profile"] = prof
        for key in ("weight_kg", "fuel", "fail_at"):
            if getattr(d, key) is not None:
                doc[key] = getattr(d, key)
        return doc

    sim: dict[str, Any] = {
        "seed": sc.sim.seed, "ticks": sc.sim.ticks, "tick_s": sc.sim.tick_s, "loss": sc.sim.loss,
        "admission": sc.sim.admission,
    }
    if sc.sim.silent_zsps:
        sim["silent_zsps"] = list(sc.sim.silent_zsps)
    if sc.origin is not None:
        sim["origin"] = {"lat": sc.origin[0], "lon": sc.origin[1]}
    doc = {
        "zones": sorted(sc.zones),
        "elements": [element_doc(e) for e in elements],
        "zsps": [{"id": s.zsp_id, "zone": s.zone, "owner": s.owner} for s in sc.zsps],
        "drones": [drone_doc(d) for d in sc.drones],
        "trips": [{"drone": t.drone, "dst": str(t.dst), "tick": t.tick} for t in sc.trips],
        "weather": [
            {"tick": t, "wind": list(w.wind), "temperature": w.temperature, "valid_until": w.valid_until}
            for t, w in sc.weather
        ],
        "sim": sim,
    }
    if sc.publications or sc.tasks:
        doc["services"] = {
            "publications": [
                {"msg_id": p.msg_id, "zone": p.zone, "payload": p.payload.decode(), "tick": p.tick, "ttl": p.ttl}
                for p in sc.publications
            ],
            "tasks": [
                {"task_id": t.task_id, "zone": t.zone, "pickup": str(t.pickup), "dropoff": str(t.dropoff),
                 "tick": t.tick, "ttl": t.ttl}
                for t in sc.tasks
            ],
        }
    return doc


def dump_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")


# --- built-in scenarios -------------------------------------------------------------------


def _from_zones(zones, zsps, drones, trips, sim, **extra) -> Scenario:
    return Scenario(dict(zones), list(zsps), sorted(drones, key=lambda d: d.drone_id),
                    sorted(trips, key=lambda t: (t.tick, t.drone)), [], sim, **extra)


def _one_zsp_per_zone(zones) -> list[ZspSpec]:
    return [ZspSpec(f"zsp{z}", z, f"iodsp{i + 1}") for i, z in enumerate(sorted(zones))]


def fixture_2z_scenario(seed: int = 1, ticks: int = 200) -> Scenario:
    """FIXTURE-2Z with one ZSP per zone and a single trip nA -> nB."""
    zones = fixture_2z()
    nA = ElementId(("A",), "node", "nA")
    nB = ElementId(("B",), "node", "nB")
    return _from_zones(zones, _one_zsp_per_zone(zones), [DroneSpec("d1", "op1", nA)], [TripSpec("d1", nB, 0)],
                       SimParams(seed, ticks))


def fixture_3z_scenario(seed: int = 1, ticks: int = 300) -> Scenario:
    """FIXTURE-3Z with one ZSP per zone and one trip across all three zones."""
    zones = fixture_3z()
    nA = ElementId(("A",), "node", "nA")
    nC = ElementId(("C",), "node", "nC")
    return _from_zones(zones, _one_zsp_per_zone(zones), [DroneSpec("d1", "op1", nA)], [TripSpec("d1", nC, 0)],
                       SimParams(seed, ticks))


NODES_3Z = ("A/node/nA", "B/node/nB1", "B/node/nB2", "C/node/nC")


def congestion_scenario(seed: int, n_drones: int = 50, ticks: int = 200, admission: bool = True,
                        loss: float = 0.0, spawn_window: int = 60) -> Scenario:
    """The canonical congestion workload on FIXTURE-3Z.

    Drones spawn at the four landing nodes over ``spawn_window`` ticks and
    each requests one trip to a node in another zone.  A fifth of the fleet
    cannot hover.
    """
    rng = random.Random(seed)
    zones = fixture_3z()
    nodes = [parse_address(n) for n in NODES_3Z]
    drones, trips = [], []
    for i in range(n_drones):
        spawn = rng.choice(nodes)
        dst = rng.choice([n for n in nodes if n.zone != spawn.zone])
        tick = rng.randrange(spawn_window)
        profile = PerformanceProfile(hover=rng.random() >= 0.2, max_speed=rng.choice((8.0, 10.0, 12.0, 15.0)))
        did = f"d{i:02d}"
        drones.append(DroneSpec(did, f"op{i % 3}", spawn, tick, profile))
        trips.append(TripSpec(did, dst, tick))
    return _from_zones(zones, _one_zsp_per_zone(zones), drones, trips,
                       SimParams(seed, ticks, loss=loss, admission=admission))


def fuel_scenario(seed: int = 1, n_drones: int = 6, ticks: int = 250) -> Scenario:
    """Long trips on FIXTURE-3Z with too little fuel and no compatible station.

    Each drone runs on hydrogen, which no node offers, so the refuel
    request fails and the drone must divert to its contingency node once
    fuel drops below the time needed to get there.
    """
    rng = random.Random(seed)
    zones = fixture_3z()
    nA, nC = parse_address("A/node/nA"), parse_address("C/node/nC")
    drones, trips = [], []
    for i in range(n_drones):
        fuel = 45.0 + 10.0 * i + rng.uniform(0, 5)
        profile = PerformanceProfile(hover=i % 2 == 0, max_speed=10.0, fuel_capacity=round(fuel, 1),
                                     fuel_kind="hydrogen")
        did = f"f{i}"
        spawn, dst = (nA, nC) if i % 2 == 0 else (nC, nA)
        drones.append(DroneSpec(did, "op0", spawn, 8 * i, profile))
        trips.append(TripSpec(did, dst, 8 * i))
    return _from_zones(zones, _one_zsp_per_zone(zones), drones, trips, SimParams(seed, ticks))


def service_scenario(seed: int = 1, ticks: int = 200) -> Scenario:
    """Idle drones in FIXTURE-3Z zone B plus zone publications and pickup tasks."""
    zones = fixture_3z()
    nB1, nB2 = parse_address("B/node/nB1"), parse_address("B/node/nB2")
    drones = [DroneSpec(f"w{i}", "op0", nB1 if i % 2 == 0 else nB2, i) for i in range(4)]
    pubs = [Publication("notice-1", "B", b"wind advisory", 5, 20)]
    nC = parse_address("C/node/nC")
    tasks = [TaskSpec("t1", "B", nB1, nC, 10, 40), TaskSpec("t2", "B", nB2, nC, 12, 40)]
    return _from_zones(zones, _one_zsp_per_zone(zones), drones, [], SimParams(seed, ticks),
                       publications=pubs, tasks=tasks)
