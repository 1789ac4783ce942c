import dataclasses
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from iodsim.airspace import (
    ALTITUDE_LIMIT_M,
    Box,
    Corridor,
    ElementId,
    MalformedAddress,
    Metadata,
    PerformanceFloor,
    PerformanceProfile,
    Point,
    Sphere,
    ValidationFailed,
    ZoneGraph,
    contains,
    derive_interzone,
    format_address,
    geodetic_to_local,
    meets_performance,
    parse_address,
    validate_airspace,
    validate_zone_graph,
)
from iodsim.fixtures import airway, fixture_2z, fixture_3z, intersection, node, random_zone_graph

from oracles import pathway_lengths_between_gates

A = parse_address


# --- contains ----------------------------------------------------------------------------


def test_contains_sphere_examples():
    s = Sphere(Point(0, 0, 50), 20)
    assert contains(s, Point(0, 0, 50))
    assert not contains(s, Point(0, 0, 71))


def test_contains_corridor_boundary_example():
    c = Corridor((Point(0, 0, 50), Point(100, 0, 50)), 10)
    assert contains(c, Point(50, 10, 50))
    assert not contains(c, Point(50, 10.01, 50))
    assert not contains(c, Point(111, 0, 50))


def test_contains_box_faces_inclusive():
    b = Box(Point(0, 0, 0), Point(10, 10, 10))
    assert contains(b, Point(10, 0, 5))
    assert not contains(b, Point(10.001, 0, 5))


unit = st.floats(-1, 1, allow_nan=False)
coord = st.floats(-500, 500, allow_nan=False)


@given(coord, coord, st.floats(0, 100), st.floats(0.5, 50), unit, unit, unit)
def test_sphere_boundary_point_is_inside(x, y, z, r, dx, dy, dz):
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    if norm < 1e-3:
        dx, dy, dz, norm = 1.0, 0.0, 0.0, 1.0
    center = Point(x, y, z + r)
    p = Point(x + r * dx / norm, y + r * dy / norm, z + r + r * dz / norm)
    assert contains(Sphere(center, r), p)


@given(st.floats(1, 300), st.floats(0.5, 30), st.floats(0, 1), st.floats(0, 2 * math.pi))
def test_corridor_boundary_point_is_inside(length, r, t, angle):
    c = Corridor((Point(0, 0, 50), Point(length, 0, 50)), r)
    p = Point(t * length, r * math.cos(angle), 50 + r * math.sin(angle))
    assert contains(c, p)


# --- addresses ---------------------------------------------------------------------------


def test_parse_examples():
    assert A("A/node/nA") == ElementId(("A",), "node", "nA")
    g = A("A+B/gate/g1")
    assert g.is_gate and g.zones == ("A", "B")
    with pytest.raises(MalformedAddress):
        A("A/road/x")


@pytest.mark.parametrize("text", ["A", "A/node", "A+B/node/x", "A+A/gate/g", "A/gate/g", "A/node/x y", ""])
def test_parse_rejects(text):
    with pytest.raises(MalformedAddress):
        A(text)


token = st.from_regex(r"[A-Za-z0-9_.\-]{1,8}", fullmatch=True)


@st.composite
def element_ids(draw):
    kind = draw(st.sampled_from(["airway", "intersection", "node", "gate"]))
    local = draw(token)
    if kind == "gate":
        a, b = draw(st.lists(token, min_size=2, max_size=2, unique=True))
        return ElementId(tuple(sorted((a, b))), kind, local)
    return ElementId((draw(token),), kind, local)


@given(element_ids())
def test_format_parse_roundtrip(eid):
    text = format_address(eid)
    assert A(text) == eid
    assert format_address(A(text)) == text


def test_gate_zone_order_is_canonical():
    assert A("B+A/gate/g1") == A("A+B/gate/g1")


def test_geodetic_origin_maps_to_zero():
    p = geodetic_to_local(45.0, 7.0, 30.0, 45.0, 7.0)
    assert (p.x, p.y, p.z) == (0.0, 0.0, 30.0)
    # one degree of latitude is about 111.2 km
    assert geodetic_to_local(46.0, 7.0, 0, 45.0, 7.0).y == pytest.approx(111_195, rel=1e-3)


# --- performance ---------------------------------------------------------------------------


def _with_floor(**floor):
    base = fixture_2z()["A"][A("A/airway/nA-iA")]
    return dataclasses.replace(base, meta=dataclasses.replace(base.meta, min_performance=PerformanceFloor(**floor)))


def test_meets_performance_examples():
    assert meets_performance(PerformanceProfile(vtol=True, hover=True, max_speed=20), _with_floor(vtol=True, max_speed=10))
    assert not meets_performance(PerformanceProfile(vtol=False), _with_floor(vtol=True))
    assert meets_performance(PerformanceProfile(max_speed=10), _with_floor(max_speed=10))


def test_wind_raises_speed_floor_on_airways():
    el = _with_floor(max_speed=10)
    assert not meets_performance(PerformanceProfile(max_speed=15), el, extra_speed=8)
    assert meets_performance(PerformanceProfile(max_speed=18), el, extra_speed=8)


# --- capacities ---------------------------------------------------------------------------


def test_default_capacities():
    a = fixture_2z()["A"]
    assert a[A("A/airway/nA-iA")].capacity == 2  # 100 m / 50 m
    assert a[A("A/airway/iA-g2")].capacity == 4  # 200 m
    assert a[A("A/intersection/iA")].capacity == 2
    assert a[A("A+B/gate/g1")].capacity == 2
    assert a[A("A/node/nA")].capacity == 16
    short = Corridor((Point(0, 0, 50), Point(30, 0, 50)), 10)
    el = dataclasses.replace(a[A("A/airway/nA-iA")], geometry=short)
    assert el.capacity == 1


def test_capacity_override():
    a = fixture_2z()["A"]
    el = a[A("A/intersection/iA")]
    assert dataclasses.replace(el, meta=Metadata(capacity=5)).capacity == 5


# --- validation ---------------------------------------------------------------------------


def test_fixtures_validate_cleanly():
    for zones in (fixture_2z(), fixture_3z()):
        rep = validate_airspace(zones.values())
        assert rep.errors == [] and rep.warnings == []


def test_gates_in_exactly_two_zones_others_in_one():
    for zones in (fixture_2z(), fixture_3z()):
        owners = {}
        for z in zones.values():
            for el in z.elements:
                owners.setdefault(el.id, set()).add(z.zone)
        for eid, zs in owners.items():
            assert len(zs) == (2 if eid.is_gate else 1), eid
            assert zs == set(eid.zones)


def test_border_crossing_airway_message():
    zones = fixture_2z()
    a = zones["A"]
    bad = ZoneGraph("A", a.elements + (airway("A", a[A("A/intersection/iA")], zones["B"][A("B/intersection/iB")]),))
    assert any("airway crosses zone border" in e for e in validate_zone_graph(bad).errors)


def test_altitude_warning_is_not_an_error():
    a = fixture_2z()["A"]
    tall = node("A", "nA", -100, 0, fuel_kind="electric")
    tall = dataclasses.replace(tall, geometry=Box(tall.geometry.min, Point(-70, 30, 200)))
    g = ZoneGraph("A", tuple(tall if e.id == tall.id else e for e in a.elements))
    rep = validate_zone_graph(g)
    assert rep.ok
    assert any(str(ALTITUDE_LIMIT_M) in w for w in rep.warnings)


def _mutators(g: ZoneGraph, rng: random.Random):
    """One invariant-breaking edit per entry, each applicable to any valid graph."""
    airways = sorted((e for e in g.elements if e.kind == "airway"), key=lambda e: str(e.id))
    verts = sorted((e for e in g.elements if e.id.is_vertex), key=lambda e: str(e.id))
    spheres = [v for v in verts if isinstance(v.geometry, Sphere)]
    aw, v, s = rng.choice(airways), rng.choice(verts), rng.choice(spheres)

    def swap(old, new):
        return ZoneGraph(g.zone, tuple(new if e.id == old.id else e for e in g.elements))

    def meta(el, **kw):
        return swap(el, dataclasses.replace(el, meta=dataclasses.replace(el.meta, **kw)))

    ghost = intersection(g.zone, "ghost", 5000, 5000)
    foreign = intersection("Other", "x", 0, 0)
    return [
        lambda: ZoneGraph(g.zone, tuple(e for e in g.elements if e.id != aw.meta.direction[1])),
        lambda: ZoneGraph(g.zone, g.elements + (airway(g.zone, v, ghost),)),
        lambda: ZoneGraph(g.zone, g.elements + (airway(g.zone, v, foreign),)),
        lambda: meta(aw, capacity=0),
        lambda: meta(aw, access=frozenset()),
        lambda: meta(aw, direction=(aw.meta.direction[0], aw.meta.direction[0])),
        lambda: swap(s, dataclasses.replace(s, geometry=Sphere(s.geometry.center, -1.0))),
        lambda: swap(aw, dataclasses.replace(aw, geometry=Sphere(Point(0, 0, 50), 10))),
        lambda: ZoneGraph(g.zone, g.elements + (aw,)),
    ]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 8))
def test_any_single_mutation_is_rejected(seed, which):
    rng = random.Random(seed)
    g = random_zone_graph(rng, rng.randint(4, 14))
    assert validate_zone_graph(g).ok
    mutated = _mutators(g, rng)[which]()
    assert not validate_zone_graph(mutated).ok


# --- interzone graph -----------------------------------------------------------------------


def _costs(inter):
    return {(str(t.from_gate), str(t.to_gate), t.zone): t.cost for t in inter.transits}


def test_interzone_2z_costs():
    costs = _costs(derive_interzone(fixture_2z().values()))
    assert costs == {
        ("A+B/gate/g1", "A+B/gate/g2", "A"): pytest.approx(300),
        ("A+B/gate/g2", "A+B/gate/g1", "A"): pytest.approx(300),
        ("A+B/gate/g1", "A+B/gate/g2", "B"): pytest.approx(150),
        ("A+B/gate/g2", "A+B/gate/g1", "B"): pytest.approx(150),
    }


def test_interzone_3z_parallel_transits():
    inter = derive_interzone(fixture_3z().values())
    gAB1, gAB2, gBC1, gBC2 = (A(f"{z}/gate/{n}") for z, n in
                              (("A+B", "gAB1"), ("A+B", "gAB2"), ("B+C", "gBC1"), ("B+C", "gBC2")))
    assert inter.transit(gAB1, gBC1, "B").cost == pytest.approx(300)
    assert inter.transit(gAB2, gBC2, "B").cost == pytest.approx(600)
    assert all(t.ecn_level == 0 for t in inter.transits)


def test_interzone_single_zone_without_gates_is_empty():
    a = fixture_2z()["A"]
    solo = ZoneGraph("A", tuple(e for e in a.elements if e.kind in ("node", "intersection"))
                     + tuple(e for e in a.elements if e.kind == "airway" and "g" not in e.id.local))
    inter = derive_interzone([solo])
    assert inter.gates == () and inter.transits == ()


def test_interzone_rejects_invalid_zone():
    a = fixture_2z()["A"]
    broken = ZoneGraph("A", a.elements + (airway("A", a[A("A/intersection/iA")], intersection("A", "gone", 0, 500)),))
    with pytest.raises(ValidationFailed):
        derive_interzone([broken])


@pytest.mark.parametrize("zones", [fixture_2z(), fixture_3z()], ids=["2z", "3z"])
def test_interzone_matches_oracle_on_fixtures(zones):
    inter = derive_interzone(zones.values())
    for z in zones.values():
        expected = pathway_lengths_between_gates(z)
        got = {(t.from_gate, t.to_gate): t.cost for t in inter.transits if t.zone == z.zone}
        assert got.keys() == expected.keys()
        for k, v in expected.items():
            assert got[k] == pytest.approx(v)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_interzone_matches_oracle_on_random_graphs(seed):
    rng = random.Random(seed)
    g = random_zone_graph(rng, rng.randint(4, 12), n_gates=rng.randint(2, 3))
    inter = derive_interzone([g])
    expected = pathway_lengths_between_gates(g)
    got = {(t.from_gate, t.to_gate): t.cost for t in inter.transits}
    assert got.keys() == expected.keys()
    for k, v in expected.items():
        assert got[k] == pytest.approx(v)
