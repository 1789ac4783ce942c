"""The ten primary acceptance criteria, one test (or test group) each.

A pass/fail line per criterion is printed in the terminal summary.
"""

from __future__ import annotations

import dataclasses
import random
import time

import pytest

from iodsim.airspace import (
    Box,
    Corridor,
    ElementId,
    Metadata,
    PerformanceProfile,
    Point,
    Sphere,
    ZoneGraph,
    derive_interzone,
    parse_address,
    validate_airspace,
    validate_zone_graph,
)
from iodsim.engine import run
from iodsim.fixtures import airway, fixture_2z, fixture_3z, intersection, random_zone_graph
from iodsim.routing import EcnTable, Unreachable, next_gate, publish_ecn, transit_subject
from iodsim.scenario import congestion_scenario, fixture_2z_scenario, fixture_3z_scenario, fuel_scenario, service_scenario
from iodsim.service import AlreadyClaimed, TaskPool, Task, UnknownTask, ZoneBroadcast, ZoneMessage
from iodsim.zsp import AIRBORNE_MODES, NoPath, ZspState

import runs
from oracles import best_pathways, oracle_next_gate, random_airspace

A = parse_address


# --- 1 ---------------------------------------------------------------------------------


def _pathway_mismatches(zones) -> int:
    bad = 0
    for g in zones.values():
        st = ZspState("oracle", "o", g)
        for src in g.vertices:
            best = best_pathways(g, src.id)
            for dst in g.vertices:
                exp = best.get(dst.id)
                try:
                    pw = st.plan_pathway(src.id, dst.id, PerformanceProfile())
                    got = (pw.length, pw.sequence)
                except NoPath:
                    got = None
                if exp is None or got is None:
                    bad += (exp is None) != (got is None)
                elif exp[1] != got[1] or abs(exp[0] - got[0]) > 1e-9:
                    bad += 1
    return bad


def _route_mismatches(zones) -> int:
    iz = derive_interzone(zones.values())
    bad = 0
    for a in zones:
        for b in zones:
            exp_gate, exp_cost = oracle_next_gate(iz, a, b)
            try:
                got = next_gate(iz, a, b)
            except Unreachable:
                bad += exp_cost != float("inf")
                continue
            bad += got != exp_gate
    return bad


@pytest.mark.criterion(1, "plan_pathway and next_gate match exhaustive oracles (< 10 s)")
def test_c1_graph_oracle_equivalence():
    t0 = time.perf_counter()
    bad = _pathway_mismatches(fixture_2z()) + _pathway_mismatches(fixture_3z())
    bad += _route_mismatches(fixture_2z()) + _route_mismatches(fixture_3z())
    for seed in range(100):
        rng = random.Random(seed)
        g = random_zone_graph(rng, rng.randint(4, 20))
        assert len(g.vertices) <= 20
        bad += _pathway_mismatches({g.zone: g})
        zones = random_airspace(rng, rng.randint(2, 5))
        assert validate_airspace(zones.values()).ok
        bad += _route_mismatches(zones)
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: mismatches={bad} elapsed={elapsed:.2f}s")
    assert bad == 0
    assert elapsed < 10.0


# --- 2, 3 --------------------------------------------------------------------------------


@pytest.mark.criterion(2, "no element over capacity with admission on (3Z, 50 drones, 200 ticks)")
@pytest.mark.parametrize("seed", runs.SEEDS)
def test_c2_capacity_invariant(seed):
    sc, result, _, report, _ = runs.congestion(seed, True)
    assert sc.sim.admission and sc.sim.loss == 0 and len(sc.drones) == 50 and sc.sim.ticks == 200
    assert report.violations.get("capacity", []) == []
    assert all(count <= cap for _, _, count, cap in result.occupancy)


@pytest.mark.criterion(3, "one serving ZSP per airborne drone and drone conservation every tick")
@pytest.mark.parametrize("seed", runs.SEEDS)
def test_c3_authority_and_conservation(seed):
    for admission in (True, False):
        sc, _, events, report, _ = runs.congestion(seed, admission)
        assert report.violations.get("authority", []) == []
        assert report.violations.get("conservation", []) == []
        # independent recount from the state events
        spawned: dict[int, int] = {}
        per_tick: dict[int, dict[str, int]] = {}
        for ev in events:
            if ev["kind"] == "spawn":
                spawned[ev["tick"]] = spawned.get(ev["tick"], 0) + 1
            elif ev["kind"] == "state":
                bucket = per_tick.setdefault(ev["tick"], {})
                m = ev["data"]["mode"]
                cls = "airborne" if m in AIRBORNE_MODES else m.lower()
                bucket[cls] = bucket.get(cls, 0) + 1
                if m in AIRBORNE_MODES:
                    assert isinstance(ev["data"]["serving"], str)
        total = 0
        for tick in range(sc.sim.ticks):
            total += spawned.get(tick, 0)
            counts = per_tick.get(tick, {})
            assert set(counts) <= {"airborne", "grounded", "landed", "failed"}
            assert sum(counts.values()) == total


# --- 4 -----------------------------------------------------------------------------------


@pytest.mark.criterion(4, "ECN level 1.0 on the 300 m transit flips next_gate; expiry restores it")
def test_c4_ecn_flips_and_restores():
    iz = derive_interzone(fixture_3z().values())
    short = iz.transit(A("A+B/gate/gAB1"), A("B+C/gate/gBC1"), "B")
    long_ = iz.transit(A("A+B/gate/gAB2"), A("B+C/gate/gBC2"), "B")
    assert (short.cost, long_.cost) == pytest.approx((300.0, 600.0))
    table = EcnTable()
    assert next_gate(iz, "A", "C", table.levels(0)) == A("A+B/gate/gAB1")
    notice = publish_ecn("zspB", transit_subject(short), 1.0, now=10)
    assert notice.level == 1.0
    table.ingest(notice, 10)
    assert next_gate(iz, "A", "C", table.levels(10)) == A("A+B/gate/gAB2")
    oracle_gate, oracle_cost = oracle_next_gate(iz, "A", "C", table.levels(10))
    assert oracle_gate == A("A+B/gate/gAB2") and oracle_cost == pytest.approx(600.0)
    assert short.cost * (1 + 2 * 1.0) == pytest.approx(900.0)
    expiry = notice.issued_at + notice.ttl
    assert next_gate(iz, "A", "C", table.levels(expiry - 1)) == A("A+B/gate/gAB2")
    table.purge(expiry)
    assert next_gate(iz, "A", "C", table.levels(expiry)) == A("A+B/gate/gAB1")


# --- 5 -----------------------------------------------------------------------------------


@pytest.mark.criterion(5, "grounding+holding with admission <= without for >= 9 of seeds 1-10")
def test_c5_admission_benefit():
    wins = 0
    for seed in runs.SEEDS:
        counts = {}
        for admission in (True, False):
            _, result, _, _, elapsed = runs.congestion(seed, admission)
            assert elapsed < 30.0
            counts[admission] = result.counters["ground"] + result.counters["hold_start"]
        wins += counts[True] <= counts[False]
        print(f"criterion 5: seed {seed} on={counts[True]} off={counts[False]}")
    assert wins >= 9


# --- 6 -----------------------------------------------------------------------------------

DETERMINISM_PAIRS = [
    ("2z", 1), ("2z", 7), ("3z", 1), ("3z", 5), ("congestion", 1),
    ("congestion", 8), ("congestion-lossy", 3), ("fuel", 1), ("fuel", 2), ("service", 4),
]


def _make(name, seed):
    return {
        "2z": lambda: fixture_2z_scenario(seed),
        "3z": lambda: fixture_3z_scenario(seed),
        "congestion": lambda: congestion_scenario(seed),
        "congestion-lossy": lambda: congestion_scenario(seed, loss=0.2),
        "fuel": lambda: fuel_scenario(seed),
        "service": lambda: service_scenario(seed),
    }[name]()


@pytest.mark.criterion(6, "identical seeds give byte-identical traces (10 pairs)")
@pytest.mark.parametrize("name,seed", DETERMINISM_PAIRS)
def test_c6_determinism(name, seed):
    first = run(_make(name, seed))
    second = run(_make(name, seed))
    assert first.lines == second.lines
    assert first.digest == second.digest


# --- 7 -----------------------------------------------------------------------------------


@pytest.mark.criterion(7, "airborne samples on airways and intersections stay inside their geometry")
def test_c7_containment():
    samples = 0
    for name, _, _, report in runs.all_acceptance_runs():
        assert report.violations.get("containment", []) == [], name
        samples += report.samples["containment"]
    print(f"criterion 7: {samples} samples checked")
    assert samples > 1000


# --- 8 -----------------------------------------------------------------------------------


@pytest.mark.criterion(8, "fuel SOS drones land at their contingency node before fuel runs out")
def test_c8_contingency_fuel():
    sc, _, events, report = runs.named("fuel")
    assert report.violations.get("fuel", []) == []
    targets, landed = {}, {}
    for ev in events:
        if ev["kind"] == "emergency":
            targets[ev["subject"]] = ev["data"]["target"]
        elif ev["kind"] == "landed" and ev["subject"] in targets:
            landed.setdefault(ev["subject"], ev["data"])
        elif ev["kind"] == "state" and ev["data"]["mode"] in AIRBORNE_MODES:
            assert ev["data"]["fuel"] > 0, ev
    sos = {ev["subject"] for ev in events if ev["kind"] == "sos" and ev["data"]["reason"] == "fuel"}
    print(f"criterion 8: {len(sos)} drones crossed the 1.0x threshold")
    assert len(sos) >= 2
    for d in sorted(sos):
        assert d in landed, f"{d} never landed"
        assert landed[d]["node"] == targets[d]
        assert landed[d]["fuel"] > 0
        assert landed[d]["via"] == "Emergency"


# --- 9 -----------------------------------------------------------------------------------


def _replace(graph: ZoneGraph, old_id: str, new) -> ZoneGraph:
    return ZoneGraph(graph.zone, tuple(new if str(e.id) == old_id else e for e in graph.elements))


def _add(graph: ZoneGraph, el) -> ZoneGraph:
    return ZoneGraph(graph.zone, graph.elements + (el,))


def _with_meta(graph, eid, **changes):
    el = graph[A(eid)]
    return _replace(graph, eid, dataclasses.replace(el, meta=dataclasses.replace(el.meta, **changes)))


def _with_geometry(graph, eid, geometry):
    return _replace(graph, eid, dataclasses.replace(graph[A(eid)], geometry=geometry))


def _mutations():
    zones = fixture_2z()
    a, b = zones["A"], zones["B"]
    iA, iB = a[A("A/intersection/iA")], b[A("B/intersection/iB")]
    ghost = intersection("A", "ghost", 0, 300)
    bad_gate = dataclasses.replace(a[A("A+B/gate/g1")], id=ElementId(("A",), "gate", "g9"))
    return {
        "border-crossing airway": _add(a, airway("A", iA, iB)),
        "dangling endpoint": _add(a, airway("A", iA, ghost)),
        "single-zone gate": _add(a, bad_gate),
        "kind/geometry mismatch": _with_geometry(a, "A/node/nA", Sphere(Point(-100, 0, 50), 20)),
        "non-positive radius": _with_geometry(a, "A/intersection/iA", Sphere(Point(0, 0, 50), 0.0)),
        "inverted box": _with_geometry(a, "A/node/nA", Box(Point(-70, 30, 0), Point(-130, -30, 60))),
        "capacity zero": _with_meta(a, "A/airway/iA-g1", capacity=0),
        "empty private allowlist": _with_meta(a, "A/airway/nA-iA", access=frozenset()),
        "airway loop": _with_meta(a, "A/airway/nA-iA", direction=(A("A/node/nA"), A("A/node/nA"))),
        "centerline outside endpoint": _with_geometry(
            a, "A/airway/nA-iA", Corridor((Point(-100, 0, 56), Point(0, 200, 56)), 10.0)),
    }


@pytest.mark.criterion(9, "validation flags 10 single-edit violations and warns above 152.4 m")
def test_c9_validation_regression():
    for g in fixture_2z().values():
        rep = validate_zone_graph(g)
        assert rep.errors == [] and rep.warnings == []
    mutations = _mutations()
    assert len(mutations) == 10
    for name, graph in mutations.items():
        assert validate_zone_graph(graph).errors, name
    a = fixture_2z()["A"]
    tall = _with_geometry(a, "A/node/nA", Box(Point(-130, -30, 0), Point(-70, 30, 200)))
    rep = validate_zone_graph(tall)
    assert rep.errors == []
    assert any("152.4" in w for w in rep.warnings)


# --- 10 ----------------------------------------------------------------------------------


def _service_trial(seed: int) -> None:
    rng = random.Random(seed)
    drones = [f"d{i}" for i in range(rng.randint(2, 6))]
    bc = ZoneBroadcast("Z")
    pool = TaskPool()
    task_ids = [f"t{i}" for i in range(rng.randint(1, 3))]
    for t in task_ids:
        pool.post(Task(t, A("Z/node/p"), A("Z/node/q")))
    ticks = 25
    present: set[str] = set()
    published: dict[str, ZoneMessage] = {}
    presence_log: list[tuple[int, frozenset]] = []
    deliveries: list[tuple[str, str]] = []
    claims: list[tuple[int, str, str]] = []
    outcomes = []
    for now in range(ticks):
        for d in drones:
            if rng.random() < 0.3:
                present ^= {d}
        presence_log.append((now, frozenset(present)))
        got, _ = bc.tick(now, present)
        deliveries += [(d, m.msg_id) for d, m in got]
        if rng.random() < 0.4:
            msg_id = f"m{rng.randint(0, 4)}"
            msg = ZoneMessage(msg_id, "Z", bytes([rng.randint(0, 255)]), now, rng.randint(1, 8))
            published.setdefault(msg_id, msg)
            deliveries += [(d, m.msg_id) for d, m in bc.publish(msg, present)]
        for d in drones:
            if rng.random() < 0.15:
                task = rng.choice(task_ids + ["ghost"])
                pool.submit(now, d, task)
                claims.append((now, d, task))
        outcomes += pool.resolve()

    assert len(deliveries) == len(set(deliveries)), "duplicate delivery"
    expected = {
        (d, msg_id)
        for msg_id, msg in published.items()
        for now, who in presence_log
        if msg.published_at <= now < msg.published_at + msg.ttl
        for d in who
    }
    assert set(deliveries) == expected

    for task in task_ids:
        mine = [(t, d) for t, d, k in claims if k == task]
        winners = [o.drone_id for o in outcomes if o.task_id == task and o.ok]
        if not mine:
            assert winners == [] and pool.tasks[task].claimed_by is None
            continue
        assert winners == [min(mine)[1]]
        assert pool.tasks[task].claimed_by == winners[0]
        losers = [o for o in outcomes if o.task_id == task and not o.ok]
        assert all(o.error == AlreadyClaimed.__name__ for o in losers)
    assert all(o.error == UnknownTask.__name__ for o in outcomes if o.task_id == "ghost")


@pytest.mark.criterion(10, "exactly-once zone delivery and single claim winner over 1000 interleavings")
def test_c10_service_layer():
    for seed in range(1000):
        _service_trial(seed)
    _, _, events, report = runs.named("service")
    assert report.violations.get("exactly_once", []) == []
    assert report.violations.get("single_winner", []) == []
    assert report.violations.get("task_order", []) == []
    assert sum(ev["kind"] == "task_complete" for ev in events) == 2
