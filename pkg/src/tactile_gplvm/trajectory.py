"""Append-only record of everything that happens during one run."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

EVENT_KINDS = ("move", "tap", "edge_estimate", "line_collection", "model_update")


@dataclass(frozen=True)
class Event:
    kind: str
    x: float
    y: float
    theta: float
    payload: dict
    timestamp: int


@dataclass
class TrajectoryLog:
    """Events in the order they happened.

    Timestamps are a logical counter rather than wall-clock time so that two
    runs with the same seed serialize identically.
    """

    events: list[Event] = field(default_factory=list)
    status: str = "running"
    failure_reason: str | None = None
    steps: int = 0
    final_model: Any = None

    def append(self, kind: str, pose, payload: dict | None = None) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        ev = Event(kind, float(pose.x), float(pose.y), float(pose.theta),
                   dict(payload or {}), len(self.events))
        self.events.append(ev)
        return ev

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    @property
    def edge_estimates(self) -> list[tuple[float, float]]:
        return [(e.x, e.y) for e in self.of_kind("edge_estimate")]

    @property
    def tap_count(self) -> int:
        return sum(1 for e in self.events if e.kind == "tap")

    def fail(self, reason: str) -> None:
        self.status = "failed"
        self.failure_reason = reason

    def __len__(self) -> int:
        return len(self.events)

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "failure_reason": self.failure_reason,
            "events": len(self.events),
            "taps": self.tap_count,
            "edge_estimates": len(self.of_kind("edge_estimate")),
            "line_collections": len(self.of_kind("line_collection")),
        }
