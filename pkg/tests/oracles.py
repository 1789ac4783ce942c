"""Brute-force reference implementations used to check the fast code paths.

Everything here enumerates explicitly (all simple paths, all gate routes)
and shares no search code with the package.
"""

from __future__ import annotations

import math
import random

from iodsim.airspace import ZoneGraph, gate_id
from iodsim.fixtures import airway_pair, gate, intersection, node


def all_simple_pathways(graph: ZoneGraph, src, allowed=lambda el: True):
    """Yield (cost, sequence) for every simple pathway starting at ``src``.

    A pathway alternates vertex, airway, vertex; only intersections may
    appear in the middle.
    """
    out_edges = {}
    for a in graph.edges:
        out_edges.setdefault(a.meta.direction[0], []).append(a)
    by_id = graph.by_id
    if src not in by_id or not allowed(by_id[src]):
        return
    stack = [(0.0, (src,), frozenset([src]))]
    while stack:
        cost, seq, seen = stack.pop()
        yield cost, seq
        v = seq[-1]
        if len(seq) > 1 and by_id[v].kind != "intersection":
            continue
        for a in out_edges.get(v, ()):
            w = a.meta.direction[1]
            if w in seen or w not in by_id or not allowed(a) or not allowed(by_id[w]):
                continue
            stack.append((cost + a.length, seq + (a.id, w), seen | {w}))


def best_pathways(graph: ZoneGraph, src, allowed=lambda el: True) -> dict:
    """dst -> (cost, sequence) minimum by cost then rendered sequence."""
    best: dict = {}
    for cost, seq in all_simple_pathways(graph, src, allowed):
        key = (cost, tuple(map(str, seq)))
        cur = best.get(seq[-1])
        if cur is None or key < (cur[0], tuple(map(str, cur[1]))):
            best[seq[-1]] = (cost, seq)
    return best


def pathway_lengths_between_gates(graph: ZoneGraph) -> dict:
    out = {}
    for g in graph.gates:
        for dst, (cost, _) in best_pathways(graph, g).items():
            if dst != g and dst.is_gate:
                out[(g, dst)] = cost
    return out


def all_routes(interzone, current_zone: str, dest_zone: str, ecn=None, penalty: float = 2.0):
    """Every simple gate sequence from ``current_zone`` into ``dest_zone``."""
    ecn = ecn or {}
    if current_zone == dest_zone:
        return [(0.0, ())]
    found = []

    def other(g, z):
        return g.zones[1] if g.zones[0] == z else g.zones[0]

    def walk(cost, gates, zone):
        if zone == dest_zone:
            found.append((cost, gates))
            return
        if zone == current_zone:
            return
        for t in interzone.transits:
            if t.zone != zone or t.from_gate != gates[-1] or t.to_gate in gates:
                continue
            subject = f"{t.from_gate}>{t.to_gate}@{t.zone}"
            level = max(ecn.get(subject, 0.0), ecn.get(str(t.to_gate), 0.0))
            walk(cost + t.cost * (1 + penalty * level), gates + (t.to_gate,), other(t.to_gate, zone))

    for g in interzone.gates:
        if current_zone in g.zones:
            walk(0.0, (g,), other(g, current_zone))
    return found


def oracle_next_gate(interzone, current_zone: str, dest_zone: str, ecn=None):
    routes = all_routes(interzone, current_zone, dest_zone, ecn)
    if not routes:
        return None, math.inf
    cost, gates = min(routes, key=lambda r: (r[0], tuple(map(str, r[1]))))
    return (gates[0] if gates else None), cost


def random_airspace(rng: random.Random, n_zones: int = 3, max_vertices: int = 20) -> dict[str, ZoneGraph]:
    """Several random zones joined by shared gates (a chain plus extra links)."""
    names = [f"Z{i}" for i in range(n_zones)]
    pairs = [(names[i], names[i + 1]) for i in range(n_zones - 1)]
    pairs += [tuple(sorted(rng.sample(names, 2))) for _ in range(rng.randint(0, 2))]
    gates_of = {z: [] for z in names}
    for k, (a, b) in enumerate(pairs):
        for m in range(rng.randint(1, 2)):
            g = gate(a, b, f"g{k}{m}", rng.uniform(0, 900), rng.uniform(0, 900))
            gates_of[a].append(g)
            gates_of[b].append(g)
    zones = {}
    for zi, z in enumerate(names):
        taken = {(round(g.geometry.center.x / 60), round(g.geometry.center.y / 60)) for g in gates_of[z]}
        n_inner = rng.randint(2, max(2, max_vertices - len(gates_of[z]) - 1))
        verts = [node(z, "n0", *_free_cell(rng, taken))]
        verts += [intersection(z, f"i{k}", *_free_cell(rng, taken)) for k in range(n_inner)]
        allv = gates_of[z] + verts
        links = set()
        for _ in range(int(1.7 * len(allv))):
            a, b = rng.sample(range(len(allv)), 2)
            links.add((min(a, b), max(a, b)))
        elements = list(allv)
        for a, b in sorted(links):
            elements += airway_pair(z, allv[a], allv[b])
        zones[z] = ZoneGraph(z, tuple(elements))
    return zones


def _free_cell(rng, taken):
    while True:
        cell = (rng.randint(0, 15), rng.randint(0, 15))
        if cell not in taken:
            taken.add(cell)
            return cell[0] * 60.0, cell[1] * 60.0


__all__ = [
    "all_simple_pathways", "best_pathways", "pathway_lengths_between_gates", "all_routes",
    "oracle_next_gate", "random_airspace", "gate_id",
]
