"""Protocol message catalog.

Messages are immutable records.  The transport wraps them in an
:class:`Envelope`; the trace records only the envelope header (type, source,
destination, zone), never message bodies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .airspace import ElementId, PerformanceProfile, Point


@dataclass(frozen=True)
class Message:
    @property
    def type(self) -> str:
        return type(self).__name__


# airspace / N2N broadcast and track


@dataclass(frozen=True)
class PositionBroadcast(Message):
    drone: str
    tick: int
    position: Point
    element: ElementId | None
    progress: float
    mode: str
    preview: tuple[Point, ...] = ()
    future_path: tuple[ElementId, ...] = ()


@dataclass(frozen=True)
class N2NBroadcast(Message):
    drone: str
    tick: int
    element: ElementId | None
    progress: float
    future_path: tuple[ElementId, ...]
    fuel_remaining: float
    mode: str
    position: Point
    owner: str = ""
    profile: PerformanceProfile | None = None
    admitted_at: int | None = None
    serving: str | None = None


# N2N requests


@dataclass(frozen=True)
class PathwayRequest(Message):
    drone: str
    src: ElementId
    dst: ElementId
    profile: PerformanceProfile
    owner: str


@dataclass(frozen=True)
class PathwayResponse(Message):
    drone: str
    pathway: Any = None  # zsp.Pathway
    route: tuple[ElementId, ...] = ()
    error: str | None = None
    reroute: bool = False


@dataclass(frozen=True)
class TrajectoryRequest(Message):
    drone: str
    elements: tuple[ElementId, ...]
    tick: int


@dataclass(frozen=True)
class TrajectoryResponse(Message):
    drone: str
    elements: tuple[ElementId, ...]
    granted: bool
    trajectories: tuple[Any, ...] = ()  # zsp.Trajectory


@dataclass(frozen=True)
class RefuelRequest(Message):
    drone: str
    element: ElementId
    profile: PerformanceProfile
    owner: str


@dataclass(frozen=True)
class RefuelResponse(Message):
    drone: str
    pathway: Any = None
    error: str | None = None


@dataclass(frozen=True)
class PreciseControl(Message):
    drone: str
    command: str  # Hold | MoveTo | Land | Resume
    target: ElementId | None = None
    point: Point | None = None
    pathway: Any = None
    reason: str = ""


@dataclass(frozen=True)
class SOS(Message):
    drone: str
    element: ElementId | None
    reason: str
    tick: int


@dataclass(frozen=True)
class CongestionQuery(Message):
    requester: str
    src: ElementId
    dst: ElementId


@dataclass(frozen=True)
class CongestionReportMsg(Message):
    report: Any


@dataclass(frozen=True)
class WeatherQuery(Message):
    requester: str


@dataclass(frozen=True)
class WeatherReportMsg(Message):
    report: Any


# admission


@dataclass(frozen=True)
class AdmissionRequest(Message):
    drone: str
    owner: str
    profile: PerformanceProfile
    src: ElementId
    dst: ElementId
    tick: int


@dataclass(frozen=True)
class AdmissionDecisionMsg(Message):
    drone: str
    admit: bool
    delay: int
    pathway: Any = None
    route: tuple[ElementId, ...] = ()
    trajectories: tuple[Any, ...] = ()
    zone_map: Any = None
    error: str | None = None


@dataclass(frozen=True)
class ShadowQuery(Message):
    drone: str
    origin_zsp: str
    entry_gate: ElementId
    dst: ElementId
    route: tuple[ElementId, ...]
    profile: PerformanceProfile
    owner: str
    eta: int
    index_offset: int
    elapsed: float
    blocking: bool


@dataclass(frozen=True)
class ShadowReply(Message):
    drone: str
    shift: int


# E2E


@dataclass(frozen=True)
class HandoffRequest(Message):
    drone: str
    from_zsp: str
    gate: ElementId
    snapshot: Any  # TrackEntry
    route: tuple[ElementId, ...]
    dst: ElementId
    profile: PerformanceProfile
    owner: str
    admitted_at: int


@dataclass(frozen=True)
class HandoffAccept(Message):
    drone: str
    from_zsp: str
    to_zsp: str
    gate: ElementId
    pathway: Any = None
    route: tuple[ElementId, ...] = ()
    zone_map: Any = None


@dataclass(frozen=True)
class HandoffComplete(Message):
    drone: str
    from_zsp: str
    to_zsp: str
    gate: ElementId


@dataclass(frozen=True)
class HandoffFailed(Message):
    drone: str
    from_zsp: str
    gate: ElementId


@dataclass(frozen=True)
class EcnNoticeMsg(Message):
    notice: Any


@dataclass(frozen=True)
class ZspAdvertisement(Message):
    zsp: str
    zone: str
    congestion: float
    tick: int


# service layer


@dataclass(frozen=True)
class ZonePublish(Message):
    msg_id: str
    zone: str
    payload: bytes
    ttl: int


@dataclass(frozen=True)
class ZoneDeliver(Message):
    msg_id: str
    zone: str
    payload: bytes


@dataclass(frozen=True)
class TaskPost(Message):
    task_id: str
    pickup: ElementId
    dropoff: ElementId
    ttl: int


@dataclass(frozen=True)
class TaskClaim(Message):
    drone: str
    task_id: str
    tick: int


@dataclass(frozen=True)
class TaskClaimResult(Message):
    drone: str
    task_id: str
    ok: bool
    error: str | None = None
    pickup: ElementId | None = None
    dropoff: ElementId | None = None


@dataclass(frozen=True)
class Timer(Message):
    name: str
    data: Any = None


@dataclass(frozen=True)
class Envelope:
    src: str
    dst: str
    zone: str
    msg: Message
    sent_at: int
    seq: int = field(default=0, compare=False)


CATALOG = tuple(
    cls.__name__
    for cls in (
        PositionBroadcast, N2NBroadcast, PathwayRequest, PathwayResponse,
        TrajectoryRequest, TrajectoryResponse, RefuelRequest, RefuelResponse,
        PreciseControl, SOS, CongestionQuery, CongestionReportMsg, WeatherQuery,
        WeatherReportMsg, AdmissionRequest, AdmissionDecisionMsg, ShadowQuery,
        ShadowReply, HandoffRequest, HandoffAccept, HandoffComplete, HandoffFailed,
        EcnNoticeMsg, ZspAdvertisement, ZonePublish, ZoneDeliver, TaskPost, TaskClaim,
        TaskClaimResult,
    )
)
