"""Canonical airspace fixtures and a seeded random zone-graph generator.

FIXTURE-2Z
    zone A: node nA, intersection iA, gates g1, g2 (shared with B);
    airway pairs nA<->iA 100 m, iA<->g1 100 m, iA<->g2 200 m.
    zone B: intersection iB, node nB;
    airway pairs g1<->iB 100 m, g2<->iB 50 m, iB<->nB 100 m.

FIXTURE-3Z
    zones A, B, C in a chain, two gate pairs between each neighbouring zone.
    In B the gates are joined by two disjoint branches giving transits of
    300 m (gAB1 -> gBC1) and 600 m (gAB2 -> gBC2).

Airways run along axis-aligned polylines so their lengths are exact.  The two
directions of a pair are separated vertically by 12 m (lanes at +/-6 m).
"""

from __future__ import annotations

import random

from .airspace import (
    Box,
    Corridor,
    Element,
    ElementId,
    Metadata,
    Point,
    Sphere,
    ZoneGraph,
    gate_id,
)

ALTITUDE = 50.0
CORRIDOR_RADIUS = 10.0
SPHERE_RADIUS = 20.0
NODE_HALF_WIDTH = 30.0
NODE_HEIGHT = 60.0
LANE_OFFSET = 6.0


def node(zone: str, local: str, x: float, y: float, **components: str) -> Element:
    comps = {"landing": "true"}
    comps.update(components)
    lo = Point(x - NODE_HALF_WIDTH, y - NODE_HALF_WIDTH, 0.0)
    hi = Point(x + NODE_HALF_WIDTH, y + NODE_HALF_WIDTH, NODE_HEIGHT)
    return Element(ElementId((zone,), "node", local), Box(lo, hi), Metadata(components=comps))


def intersection(zone: str, local: str, x: float, y: float) -> Element:
    return Element(ElementId((zone,), "intersection", local), Sphere(Point(x, y, ALTITUDE), SPHERE_RADIUS))


def gate(zone_a: str, zone_b: str, local: str, x: float, y: float) -> Element:
    return Element(gate_id(zone_a, zone_b, local), Sphere(Point(x, y, ALTITUDE), SPHERE_RADIUS))


def _center(el: Element) -> Point:
    g = el.geometry
    return g.center if isinstance(g, (Sphere, Box)) else g.centerline[0]


def airway(zone: str, u: Element, v: Element, corners=(), **meta) -> Element:
    """One-directional airway from ``u`` to ``v`` through optional xy corners."""
    dz = LANE_OFFSET if str(u.id) < str(v.id) else -LANE_OFFSET
    a, b = _center(u), _center(v)
    pts = [Point(a.x, a.y, ALTITUDE + dz)]
    pts += [Point(x, y, ALTITUDE + dz) for x, y in corners]
    pts.append(Point(b.x, b.y, ALTITUDE + dz))
    local = f"{u.id.local}-{v.id.local}"
    return Element(
        ElementId((zone,), "airway", local),
        Corridor(tuple(pts), CORRIDOR_RADIUS),
        Metadata(direction=(u.id, v.id), **meta),
    )


def airway_pair(zone: str, u: Element, v: Element, corners=(), **meta) -> list[Element]:
    return [airway(zone, u, v, corners, **meta), airway(zone, v, u, tuple(reversed(corners)), **meta)]


def fixture_2z() -> dict[str, ZoneGraph]:
    nA = node("A", "nA", -100, 0, fuel_kind="electric")
    iA = intersection("A", "iA", 0, 0)
    g1 = gate("A", "B", "g1", 100, 0)
    g2 = gate("A", "B", "g2", 100, 100)
    iB = intersection("B", "iB", 125, 75)
    nB = node("B", "nB", 225, 75)
    zone_a = [nA, iA, g1, g2]
    zone_a += airway_pair("A", nA, iA)
    zone_a += airway_pair("A", iA, g1)
    zone_a += airway_pair("A", iA, g2, corners=[(0, 100)])
    zone_b = [g1, g2, iB, nB]
    zone_b += airway_pair("B", g1, iB, corners=[(125, 0)])
    zone_b += airway_pair("B", g2, iB, corners=[(125, 100)])
    zone_b += airway_pair("B", iB, nB)
    return {"A": ZoneGraph("A", tuple(zone_a)), "B": ZoneGraph("B", tuple(zone_b))}


def fixture_3z() -> dict[str, ZoneGraph]:
    nA = node("A", "nA", -100, 100, fuel_kind="electric")
    iA = intersection("A", "iA", 0, 100)
    gAB1 = gate("A", "B", "gAB1", 100, 0)
    gAB2 = gate("A", "B", "gAB2", 100, 200)
    iB1 = intersection("B", "iB1", 250, 0)
    iB2 = intersection("B", "iB2", 250, 350)
    nB1 = node("B", "nB1", 250, -100, fuel_kind="electric")
    nB2 = node("B", "nB2", 250, 450)
    gBC1 = gate("B", "C", "gBC1", 400, 0)
    gBC2 = gate("B", "C", "gBC2", 400, 200)
    iC = intersection("C", "iC", 500, 100)
    nC = node("C", "nC", 600, 100, fuel_kind="electric")

    zone_a = [nA, iA, gAB1, gAB2]
    zone_a += airway_pair("A", nA, iA)
    zone_a += airway_pair("A", iA, gAB1, corners=[(0, 0)])
    zone_a += airway_pair("A", iA, gAB2, corners=[(0, 200)])

    zone_b = [gAB1, gAB2, iB1, iB2, nB1, nB2, gBC1, gBC2]
    zone_b += airway_pair("B", gAB1, iB1)
    zone_b += airway_pair("B", iB1, gBC1)
    zone_b += airway_pair("B", iB1, nB1)
    zone_b += airway_pair("B", gAB2, iB2, corners=[(100, 350)])
    zone_b += airway_pair("B", iB2, gBC2, corners=[(400, 350)])
    zone_b += airway_pair("B", iB2, nB2)

    zone_c = [gBC1, gBC2, iC, nC]
    zone_c += airway_pair("C", gBC1, iC, corners=[(500, 0)])
    zone_c += airway_pair("C", gBC2, iC, corners=[(500, 200)])
    zone_c += airway_pair("C", iC, nC)
    return {
        "A": ZoneGraph("A", tuple(zone_a)),
        "B": ZoneGraph("B", tuple(zone_b)),
        "C": ZoneGraph("C", tuple(zone_c)),
    }


def random_zone_graph(
    rng: random.Random,
    n_vertices: int = 12,
    zone: str = "R",
    n_gates: int = 2,
    edge_factor: float = 1.6,
) -> ZoneGraph:
    """A valid zone graph with straight airways at random lengths.

    Vertices are intersections, at least one landing node and ``n_gates``
    gates shared with dummy neighbour zones.
    """
    n_vertices = max(2 + n_gates, min(20, n_vertices))
    cells = rng.sample([(i, j) for i in range(8) for j in range(8)], n_vertices)
    verts: list[Element] = []
    for k, (i, j) in enumerate(cells):
        x = i * 120.0 + rng.uniform(-30, 30)
        y = j * 120.0 + rng.uniform(-30, 30)
        if k < n_gates:
            verts.append(gate(zone, f"{zone}{k}", f"g{k}", x, y))
        elif k < n_gates + 2:
            verts.append(node(zone, f"n{k}", x, y))
        else:
            verts.append(intersection(zone, f"i{k}", x, y))
    edges: dict[tuple[int, int], Element] = {}
    n_edges = int(edge_factor * n_vertices)
    attempts = 0
    while len(edges) < n_edges and attempts < 50 * n_edges:
        attempts += 1
        a, b = rng.sample(range(n_vertices), 2)
        if (a, b) in edges:
            continue
        edges[(a, b)] = airway(zone, verts[a], verts[b])
        if rng.random() < 0.6 and (b, a) not in edges:
            edges[(b, a)] = airway(zone, verts[b], verts[a])
    return ZoneGraph(zone, tuple(verts) + tuple(edges[k] for k in sorted(edges)))
