"""Post-run trace checker for the global runtime invariants.

Every check reads the trace events plus the static scenario (geometry,
capacities, ZSP zones) and returns human-readable violation strings.  An
empty list means the run is clean.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .airspace import Point, contains, parse_address
from .drone import MODES, TRANSITIONS
from .scenario import Scenario
from .zsp import AIRBORNE_MODES

CONTAINMENT_TOL = 1e-3  # trace positions are rounded to the millimetre
CONTAINED_KINDS = ("airway", "intersection", "gate")


@dataclass
class CheckReport:
    violations: dict[str, list[str]] = field(default_factory=dict)
    samples: Counter = field(default_factory=Counter)

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def add(self, check: str, message: str) -> None:
        self.violations.setdefault(check, []).append(message)

    def summary(self) -> str:
        if self.ok:
            return "all invariants hold"
        return "; ".join(f"{k}: {len(v)} (first: {v[0]})" for k, v in sorted(self.violations.items()) if v)


def capacity_applies(scenario: Scenario) -> bool:
    """Hard capacity is only promised when admission can see every drone."""
    sim = scenario.sim
    return (sim.admission and sim.loss == 0 and not sim.silent_zsps
            and all(d.fail_at is None for d in scenario.drones))


def check_trace(events: list[dict], scenario: Scenario, capacity: bool | None = None) -> CheckReport:
    rep = CheckReport()
    if capacity is None:
        capacity = capacity_applies(scenario)
    elements = {str(e.id): e for z in scenario.zones.values() for e in z.elements}
    zsp_zone = {s.zsp_id: s.zone for s in scenario.zsps}

    last = None
    spawned: dict[str, int] = {}
    mode: dict[str, str] = {}
    states_at: dict[int, Counter] = defaultdict(Counter)
    occ: Counter = Counter()
    delivered: set[tuple[str, str]] = set()
    winners: dict[str, str] = {}
    picked: set[tuple[str, str]] = set()

    for ev in events:
        tick, kind, subj, data = ev["tick"], ev["kind"], ev["subject"], ev["data"]
        key = (tick, ev["seq"])
        if last is not None and key <= last:
            rep.add("ordering", f"{key} after {last}")
        last = key

        if kind == "spawn":
            spawned[subj] = tick
            mode[subj] = "Grounded"
        elif kind == "mode":
            if data["from"] != mode.get(subj):
                rep.add("transitions", f"t{tick} {subj}: from {data['from']} but was {mode.get(subj)}")
            if data["to"] not in TRANSITIONS.get(data["from"], ()):
                rep.add("transitions", f"t{tick} {subj}: {data['from']} -> {data['to']}")
            mode[subj] = data["to"]
        elif kind == "state":
            _check_state(rep, tick, subj, data, mode, elements, zsp_zone, occ)
            states_at[tick][subj] += 1
        elif kind == "zone_deliver":
            k = (data["drone"], data["msg_id"])
            if k in delivered:
                rep.add("exactly_once", f"t{tick} {k[1]} delivered twice to {k[0]}")
            delivered.add(k)
        elif kind == "task_claim" and data.get("ok"):
            if data["task"] in winners:
                rep.add("single_winner", f"t{tick} {data['task']} won by {winners[data['task']]} and {data['drone']}")
            winners.setdefault(data["task"], data["drone"])
        elif kind == "trip_complete" and data.get("leg") == "pickup":
            picked.add((subj, data.get("task")))
        elif kind == "task_complete":
            if (subj, data["task"]) not in picked:
                rep.add("task_order", f"t{tick} {subj} dropped {data['task']} before pickup")
            if winners.get(data["task"]) != subj:
                rep.add("single_winner", f"t{tick} {subj} completed {data['task']} without winning it")

    ticks = sorted(states_at)
    for tick in range(ticks[0], ticks[-1] + 1) if ticks else ():
        seen = states_at.get(tick, Counter())
        alive = {d for d, t in spawned.items() if t <= tick}
        if set(seen) != alive or any(n != 1 for n in seen.values()):
            rep.add("conservation", f"t{tick}: {len(alive)} spawned, states for {sorted(seen)}")

    if capacity:
        for (tick, el), n in sorted(occ.items()):
            cap = elements[el].capacity if el in elements else 0
            if n > cap:
                rep.add("capacity", f"t{tick} {el}: {n} > {cap}")
    rep.samples["occupied_element_ticks"] = len(occ)
    return rep


def _check_state(rep, tick, subj, data, mode, elements, zsp_zone, occ) -> None:
    m = data["mode"]
    rep.samples["states"] += 1
    if m not in MODES:
        rep.add("conservation", f"t{tick} {subj}: unknown mode {m}")
    if m != mode.get(subj):
        rep.add("transitions", f"t{tick} {subj}: state {m} but last transition gave {mode.get(subj)}")
    if m not in AIRBORNE_MODES:
        return
    el = data["element"]
    serving = data["serving"]
    if serving is None or serving not in zsp_zone:
        rep.add("authority", f"t{tick} {subj}: airborne without a known serving ZSP ({serving})")
    elif el is not None and not parse_address(el).in_zone(zsp_zone[serving]):
        rep.add("authority", f"t{tick} {subj}: {serving} serves {zsp_zone[serving]} but drone is on {el}")
    fuel = data.get("fuel")
    if fuel is not None and fuel <= 0:
        rep.add("fuel", f"t{tick} {subj}: airborne ({m}) with fuel {fuel}")
    if el is None:
        rep.add("containment", f"t{tick} {subj}: airborne with no element")
        return
    occ[(tick, el)] += 1
    element = elements.get(el)
    if element is None:
        rep.add("containment", f"t{tick} {subj}: unknown element {el}")
    elif element.kind in CONTAINED_KINDS:
        rep.samples["containment"] += 1
        if not contains(element.geometry, Point(*data["pos"]), CONTAINMENT_TOL):
            rep.add("containment", f"t{tick} {subj}: {data['pos']} outside {el}")
