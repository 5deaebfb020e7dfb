"""Append-only event journal for one executor.

Everything the runtime wants remembered lands here with a strictly
increasing sequence number, so late readers (the HTTP stream, scenario
verdicts, tests) can resume from any point and replay without gaps or
duplicates.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

STATE_DELTA = "state-delta"
ABILITY_STARTED = "ability-started"
ABILITY_FINISHED = "ability-finished"
OPERATION_PHASE = "operation-phase"
PLAN_ADOPTED = "plan-adopted"
REPLAN_FAILED = "replan-failed"
ADVISORY = "advisory"
MODE_CHANGE = "mode-change"
OPERATOR_COMMAND = "operator-command"
FAULT = "fault"

KINDS = (
    STATE_DELTA,
    ABILITY_STARTED,
    ABILITY_FINISHED,
    OPERATION_PHASE,
    PLAN_ADOPTED,
    REPLAN_FAILED,
    ADVISORY,
    MODE_CHANGE,
    OPERATOR_COMMAND,
    FAULT,
)


@dataclass(frozen=True)
class EventRecord:
    seq: int
    tick: int
    kind: str
    data: dict

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "tick": self.tick,
            "kind": self.kind,
            "data": dict(self.data),
        }


class EventLog:
    """Thread-safe append-only log with monotone sequence numbers."""

    def __init__(self):
        self._records: list[EventRecord] = []
        self._lock = threading.Lock()

    def append(self, tick: int, kind: str, data: dict) -> EventRecord:
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._lock:
            rec = EventRecord(seq=len(self._records), tick=tick, kind=kind, data=data)
            self._records.append(rec)
            return rec

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def since(self, seq: int) -> list[EventRecord]:
        """Records with sequence >= seq, oldest first."""
        with self._lock:
            if seq <= 0:
                return list(self._records)
            return list(self._records[seq:])

    def all(self) -> list[EventRecord]:
        return self.since(0)

    def of_kind(self, *kinds: str) -> list[EventRecord]:
        with self._lock:
            return [r for r in self._records if r.kind in kinds]
