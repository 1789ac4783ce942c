"""Zone broadcast service and the package-pickup task pool built on it.

The broadcast service treats payloads as opaque bytes: it stores and forwards
them but never decodes them.  Only the task application (``encode_task`` /
``decode_task``) knows the payload format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .airspace import ElementId, parse_address


class AlreadyClaimed(Exception):
    pass


class UnknownTask(Exception):
    pass


@dataclass(frozen=True)
class ZoneMessage:
    msg_id: str
    zone: str
    payload: bytes
    published_at: int
    ttl: int

    def __post_init__(self):
        if self.ttl < 1:
            raise ValueError("ttl must be at least one tick")
        if not isinstance(self.payload, (bytes, bytearray)):
            raise TypeError("payload must be bytes")

    def live(self, now: int) -> bool:
        return now < self.published_at + self.ttl


@dataclass
class _Slot:
    message: ZoneMessage
    delivered: set[str] = field(default_factory=set)


class ZoneBroadcast:
    """Exactly-once delivery of zone messages to drones present in the zone."""

    def __init__(self, zone: str):
        self.zone = zone
        self.active: dict[str, _Slot] = {}
        self.seen: set[str] = set()

    def publish(self, message: ZoneMessage, present: Iterable[str]) -> list[tuple[str, ZoneMessage]]:
        if message.zone != self.zone:
            raise ValueError(f"message for zone {message.zone} published in {self.zone}")
        if message.msg_id in self.seen:
            return []
        self.seen.add(message.msg_id)
        slot = _Slot(message)
        self.active[message.msg_id] = slot
        return self._deliver(slot, present)

    def _deliver(self, slot: _Slot, present: Iterable[str]) -> list[tuple[str, ZoneMessage]]:
        out = []
        for drone in sorted(set(present) - slot.delivered):
            slot.delivered.add(drone)
            out.append((drone, slot.message))
        return out

    def tick(self, now: int, present: Iterable[str]) -> tuple[list[tuple[str, ZoneMessage]], list[ZoneMessage]]:
        """Deliver live messages to newcomers; return (deliveries, expired)."""
        present = sorted(set(present))
        deliveries, expired = [], []
        for msg_id in sorted(self.active):
            slot = self.active[msg_id]
            if not slot.message.live(now):
                expired.append(slot.message)
                del self.active[msg_id]
            else:
                deliveries += self._deliver(slot, present)
        return deliveries, expired


# --- demo application ----------------------------------------------------------


@dataclass
class Task:
    task_id: str
    pickup: ElementId
    dropoff: ElementId
    posted_at: int = 0
    claimed_by: str | None = None


def encode_task(task: Task) -> bytes:
    return json.dumps(
        {"task_id": task.task_id, "pickup": str(task.pickup), "dropoff": str(task.dropoff)}, sort_keys=True
    ).encode()


def decode_task(payload: bytes, posted_at: int = 0) -> Task:
    raw = json.loads(payload.decode())
    return Task(raw["task_id"], parse_address(raw["pickup"]), parse_address(raw["dropoff"]), posted_at)


@dataclass(frozen=True)
class ClaimOutcome:
    drone_id: str
    task_id: str
    ok: bool
    error: str | None = None


class TaskPool:
    def __init__(self):
        self.tasks: dict[str, Task] = {}
        self.pending: list[tuple[int, str, str]] = []

    def post(self, task: Task) -> None:
        self.tasks.setdefault(task.task_id, task)

    def claim(self, drone_id: str, task_id: str) -> Task:
        task = self.tasks.get(task_id)
        if task is None:
            raise UnknownTask(task_id)
        if task.claimed_by is not None:
            raise AlreadyClaimed(f"{task_id} held by {task.claimed_by}")
        task.claimed_by = drone_id
        return task

    def submit(self, tick: int, drone_id: str, task_id: str) -> None:
        self.pending.append((tick, drone_id, task_id))

    def resolve(self) -> list[ClaimOutcome]:
        """Settle queued claims in (tick, drone id) order; first claim wins."""
        out = []
        for _, drone_id, task_id in sorted(self.pending):
            try:
                self.claim(drone_id, task_id)
                out.append(ClaimOutcome(drone_id, task_id, True))
            except (AlreadyClaimed, UnknownTask) as exc:
                out.append(ClaimOutcome(drone_id, task_id, False, type(exc).__name__))
        self.pending.clear()
        return out
