"""Run traces: canonical export and replay through the transition core.

A run trace is the executor's event log plus enough framing to re-derive
it. Replay walks the logged records and recomputes every controller-made
state change (dispatches and closure fixpoints) from the model engine,
taking only the external inputs (inbound deltas, operator writes) on
faith. A trace that replays with no mismatches is exactly reproducible
from the model; a tampered or stale one is not.
"""

from __future__ import annotations

from pathlib import Path

import json

from .bus import canonical_json
from .model import Model, TransitionClass

FORMAT = 1

EXTERNAL_SOURCES = ("inbound", "operator")
DERIVED_SOURCES = ("closure", "dispatch-closure")


def make_run_trace(
    project: str, scenario: str | None, verdict: dict | None, events: list[dict]
) -> dict:
    return {
        "kind": "run-trace",
        "format": FORMAT,
        "project": project,
        "scenario": scenario,
        "verdict": verdict,
        "events": events,
    }


def make_plan_trace(
    project: str, goal: str, avoid: str | None, bound: int, plan
) -> dict:
    return {
        "kind": "plan-trace",
        "format": FORMAT,
        "project": project,
        "goal": goal,
        "avoid": avoid,
        "bound": bound,
        "events": list(plan.events),
        "states": [dict(s) for s in plan.states],
    }


def write_trace(path: str | Path, doc: dict) -> None:
    Path(path).write_bytes(canonical_json(doc) + b"\n")


def load_trace(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a format-{FORMAT} trace file")
    return doc


class Replay:
    """Re-derive the state sequence of a run trace from the model."""

    def __init__(self, model: Model):
        self.eng = model.engine()
        self.model = model
        enc = self.eng.closure(self.eng.encode(model.initial_state()))
        self.state = self.eng.decode(enc)
        self.problems: list[str] = []
        self.checked = 0
        self._due_finishes: list[str] = []

    def _diff(self, before, after) -> dict:
        return {k: after[k] for k in after if after[k] != before[k]}

    def _apply_external(self, rec: dict) -> None:
        try:
            self.state = self.state.updated(rec["data"]["changes"])
        except Exception as exc:
            self.problems.append(f"seq {rec['seq']}: cannot apply external delta ({exc})")

    def _recompute_closure(self, rec: dict) -> None:
        fired: list = []
        before = self.state
        enc = self.eng.closure(self.eng.encode(before), include_effects=False, fired=fired)
        after = self.eng.decode(enc)
        got = self._diff(before, after)
        want = rec["data"]["changes"]
        if got != want:
            self.problems.append(
                f"seq {rec['seq']}: closure mismatch (recorded {want}, derived {got})"
            )
        self.state = after
        self.checked += 1
        self._due_finishes.extend(
            ct.ref.event
            for ct in fired
            if ct.ref.klass is TransitionClass.FINISH and ct.ref.ability
        )

    def _fire(self, rec: dict) -> None:
        event = rec["data"]["event"]
        ct = self.eng.by_event.get(event)
        if ct is None:
            self.problems.append(f"seq {rec['seq']}: no transition for {event}")
            return
        if not ct.guard(self.eng.encode(self.state)):
            self.problems.append(f"seq {rec['seq']}: {event} fired while disabled")
            return
        self.state = self.eng.decode(self.eng.fire(ct, self.eng.encode(self.state)))
        self.checked += 1

    def _check_dispatch_delta(self, rec: dict, before) -> None:
        got = self._diff(before, self.state)
        want = rec["data"]["changes"]
        if got != want:
            self.problems.append(
                f"seq {rec['seq']}: dispatch mismatch (recorded {want}, derived {got})"
            )

    def feed(self, records: list[dict]) -> None:
        pre_fire = None
        for rec in records:
            kind = rec["kind"]
            if kind == "state-delta":
                src = rec["data"].get("source")
                if src in EXTERNAL_SOURCES:
                    self._apply_external(rec)
                elif src in DERIVED_SOURCES:
                    self._recompute_closure(rec)
                elif src == "dispatch":
                    if pre_fire is None:
                        self.problems.append(
                            f"seq {rec['seq']}: dispatch delta without a start event"
                        )
                    else:
                        self._check_dispatch_delta(rec, pre_fire)
                        pre_fire = None
                else:
                    self.problems.append(f"seq {rec['seq']}: unknown delta source {src!r}")
            elif kind == "ability-started":
                pre_fire = self.state
                self._fire(rec)
            elif kind == "ability-finished":
                event = rec["data"]["event"]
                if self._due_finishes and self._due_finishes[0] == event:
                    self._due_finishes.pop(0)
                else:
                    self.problems.append(
                        f"seq {rec['seq']}: finish {event} not produced by closure"
                    )
            # control-plane records carry no state to re-derive


def replay_trace(model: Model, trace: dict) -> dict:
    """Replay verdict: mismatch list plus the number of re-derived steps."""
    rp = Replay(model)
    try:
        rp.feed(trace["events"])
    except Exception as exc:
        # A corrupt value (say, outside a variable's domain) aborts the walk.
        rp.problems.append(f"replay aborted: {exc}")
    return {
        "checked": rp.checked,
        "problems": rp.problems,
        "final": dict(rp.state),
        "identical": not rp.problems,
    }
