"""Receding-horizon executor: one object owning the live control loop.

Each tick drains inbound pipelines into the state, settles the
uncontrollable closure (syncs and finishes; effects are predictions and
never fire here), advances operation phases, keeps a plan fresh, and
greedily dispatches as many plan heads as their refined guards allow
before pushing outbound pipelines.

The executor is deliberately single-threaded: callers (HTTP service,
scenario driver) serialize ticks and operator commands externally, so
every method here may assume it runs between ticks.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable

from . import events as ev
from .abilities import status as ability_status
from .bus import Broker
from .model import Model, StateVec, TransitionClass, VarKind, eval_predicate
from .modelfile import ModelSpec
from .pipelines import InboundRunner, OutboundRunner
from .planner import Goal, Plan, plan as make_plan, validate, with_safety

MODE_NORMAL = "normal"
MODE_RESTART = "restart"

PHASE_IDLE = "idle"
PHASE_ACTIVE = "active"
PHASE_DONE = "done"
PHASE_RESET = "reset"


class RunnerError(RuntimeError):
    pass


class ModeError(RunnerError):
    """Command issued in the wrong controller mode."""


class UnknownNameError(RunnerError):
    """No operation, ability, or task by that name."""


class CommandRejected(RunnerError):
    """Command is known and mode-legal but unsafe or inconsistent right now."""


class SyncValidationError(RunnerError):
    """Operator resynchronization writes that do not fit the model."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def declare_topics(broker: Broker, spec: ModelSpec) -> None:
    for schema in spec.topics:
        broker.declare_topic(schema)


class Executor:
    def __init__(
        self,
        spec: ModelSpec,
        model: Model,
        broker: Broker,
        *,
        log: ev.EventLog | None = None,
        stall_ticks: int = 50,
        advisory_after: int = 3,
        plan_bound: int = 30,
    ):
        self.spec = spec
        self.model = model  # normally the synthesis-refined model
        self.eng = model.engine()
        self.broker = broker
        self.log = log if log is not None else ev.EventLog()
        self.stall_ticks = stall_ticks
        self.advisory_after = advisory_after
        self.plan_bound = plan_bound

        declare_topics(broker, spec)
        self.inbound = [InboundRunner(p, model, broker) for p in spec.inbound]
        self.outbound = [OutboundRunner(p, model, broker) for p in spec.outbound]

        enc = self.eng.closure(self.eng.encode(model.initial_state()))
        self.state: StateVec = self.eng.decode(enc)
        self.tick_index = 0
        self.mode = MODE_NORMAL
        self.started: set[str] = set()
        self.phases = {op.name: PHASE_IDLE for op in spec.operations}
        self.plan: Plan | None = None
        self.remaining: deque[str] = deque()
        self.advisory: str | None = None
        self._plan_sig: tuple | None = None
        self._replan_failures = 0
        self._last_progress = 0
        self._restart_events = spec.abilities.restart_only_events()
        self._controllables = [
            t.event for t in model.transitions
            if t.klass is TransitionClass.CONTROLLABLE
        ]

    # --- tick ----------------------------------------------------------

    def run_tick(self, now_ms: int) -> None:
        self._drain_inbound()
        self._close("closure")
        self._advance_phases()
        goals = self._goals()
        self._maintain_plan(goals)
        self._dispatch()
        for r in self.outbound:
            r.push(self.state, now_ms)
        self.tick_index += 1

    def _drain_inbound(self) -> None:
        updates: dict = {}
        for r in self.inbound:
            updates.update(r.poll())
        changed = {k: v for k, v in updates.items() if self.state[k] != v}
        if changed:
            self.state = self.state.updated(changed)
            self._mark_progress()
            self._log(ev.STATE_DELTA, {"changes": changed, "source": "inbound"})

    def _close(self, source: str) -> None:
        fired: list = []
        enc = self.eng.encode(self.state)
        enc2 = self.eng.closure(enc, include_effects=False, fired=fired)
        if enc2 == enc:
            return
        before = self.state
        self.state = self.eng.decode(enc2)
        changed = {
            k: self.state[k] for k in self.state if self.state[k] != before[k]
        }
        self._mark_progress()
        self._log(ev.STATE_DELTA, {"changes": changed, "source": source})
        for ct in fired:
            t = ct.ref
            if t.klass is TransitionClass.FINISH and t.ability:
                self.started.discard(t.ability)
                self._log(
                    ev.ABILITY_FINISHED, {"ability": t.ability, "event": t.event}
                )

    def _advance_phases(self) -> None:
        if self.mode == MODE_NORMAL:
            for op in self.spec.operations:
                if self.phases[op.name] == PHASE_ACTIVE and self._holds(
                    op.goal.target
                ):
                    self._set_phase(op.name, PHASE_DONE)
            for op in self.spec.operations:
                if self.phases[op.name] == PHASE_IDLE and self._holds(
                    op.precondition
                ):
                    self._set_phase(op.name, PHASE_ACTIVE)
        else:
            for op in self.spec.operations:
                if self.phases[op.name] == PHASE_RESET and self._holds(
                    op.precondition
                ):
                    self._set_phase(op.name, PHASE_IDLE)

    def _goals(self) -> list[Goal]:
        if self.mode == MODE_NORMAL:
            base = [
                op.goal
                for op in self.spec.operations
                if self.phases[op.name] == PHASE_ACTIVE
            ]
        else:
            base = [
                Goal(name=f"reset:{op.name}", target=op.precondition)
                for op in self.spec.operations
                if self.phases[op.name] == PHASE_RESET
            ]
        return with_safety(base, self.spec.forbidden)

    def _maintain_plan(self, goals: list[Goal]) -> None:
        if not goals:
            if self.plan is not None:
                self.plan = None
                self.remaining.clear()
                self._plan_sig = None
            return
        sig = (self.mode, tuple(g.name for g in goals))
        trigger = None
        quiet = self.tick_index - self._last_progress
        if self.plan is None:
            trigger = "no-plan"
        elif sig != self._plan_sig:
            trigger = "goals-changed"
        elif quiet >= self.stall_ticks and not self._targets_met(goals):
            # revalidation is continuous, but a transiently wrong
            # prediction while the plant is visibly in flight is normal;
            # only a quiet, unmet plan is worth abandoning
            if not self.remaining:
                trigger = "stalled"
            elif not validate(
                self.model,
                list(self.remaining),
                self.state,
                goals,
                started=frozenset(self.started),
            ):
                trigger = "prediction-failed"
        if trigger is None:
            return
        p = make_plan(
            self.model,
            goals,
            self.state,
            bound=self.plan_bound,
            allowed_events=self._allowed_events(),
            started=frozenset(self.started),
        )
        if p is None or (not p.events and not self._targets_met(goals)):
            self.plan = None
            self.remaining.clear()
            self._plan_sig = None
            self._replan_failures += 1
            self._log(
                ev.REPLAN_FAILED,
                {
                    "reason": trigger,
                    "goals": [g.name for g in goals],
                    "failures": self._replan_failures,
                },
            )
            if self._replan_failures >= self.advisory_after and not self.advisory:
                self.advisory = (
                    "automatic replanning failed "
                    f"{self._replan_failures} times for "
                    + ", ".join(g.name for g in goals)
                    + "; operator attention required"
                )
                self._log(ev.ADVISORY, {"message": self.advisory})
            return
        self.plan = p
        self.remaining = deque(p.events)
        self._plan_sig = sig
        self._replan_failures = 0
        # A standing advisory is about planning being stuck; adopting a plan ends that.
        self.advisory = None
        self._log(
            ev.PLAN_ADOPTED,
            {
                "events": list(p.events),
                "reason": trigger,
                "goals": [g.name for g in goals],
            },
        )

    def _dispatch(self) -> None:
        while self.remaining:
            event = self.remaining[0]
            ct = self.eng.by_event[event]
            if not ct.guard(self.eng.encode(self.state)):
                break
            self.remaining.popleft()
            self._fire(event)

    # --- operator-facing commands -------------------------------------

    def enter_restart(self, source: str = "operator") -> None:
        if self.mode == MODE_RESTART:
            raise ModeError("already in restart mode")
        self.mode = MODE_RESTART
        self.plan = None
        self.remaining.clear()
        self._plan_sig = None
        self.advisory = None
        self._replan_failures = 0
        self._log(ev.OPERATOR_COMMAND, {"command": "enter_restart", "source": source})
        self._log(ev.MODE_CHANGE, {"mode": self.mode})

    def exit_restart(self, source: str = "operator") -> None:
        if self.mode == MODE_NORMAL:
            raise ModeError("not in restart mode")
        stuck = [n for n, ph in self.phases.items() if ph == PHASE_RESET]
        if stuck:
            raise CommandRejected(
                "operations still resetting: " + ", ".join(sorted(stuck))
            )
        bad = [
            i
            for i, pred in enumerate(self.spec.forbidden)
            if eval_predicate(pred, self.state)
        ]
        if bad:
            raise CommandRejected(
                f"current state violates forbidden specification {bad}"
            )
        self.mode = MODE_NORMAL
        self.plan = None
        self.remaining.clear()
        self._plan_sig = None
        self._log(ev.OPERATOR_COMMAND, {"command": "exit_restart", "source": source})
        self._log(ev.MODE_CHANGE, {"mode": self.mode})

    def reset_operation(self, name: str, source: str = "operator") -> None:
        if self.mode != MODE_RESTART:
            raise ModeError("reset_operation requires restart mode")
        if name not in self.phases:
            raise UnknownNameError(f"unknown operation {name!r}")
        self.phases[name] = PHASE_RESET
        # restart re-anchors prediction to reality: drop the memory of
        # what we asked the plant to do
        self.started.clear()
        self.plan = None
        self.remaining.clear()
        self._plan_sig = None
        self._log(
            ev.OPERATOR_COMMAND,
            {"command": "reset_operation", "operation": name, "source": source},
        )
        self._log(ev.OPERATION_PHASE, {"operation": name, "phase": PHASE_RESET})

    def sync_estimated(self, changes: dict, source: str = "operator") -> None:
        if self.mode != MODE_RESTART:
            raise ModeError("sync_estimated requires restart mode")
        byname = {v.name: v for v in self.model.variables}
        problems = []
        for name, value in changes.items():
            var = byname.get(name)
            if var is None:
                problems.append(f"unknown variable {name!r}")
            elif var.kind is not VarKind.ESTIMATED:
                problems.append(
                    f"variable {name!r} is {var.kind.value}, not estimated"
                )
            elif value not in var.domain.values:
                problems.append(f"value {value!r} outside domain of {name!r}")
        if problems:
            raise SyncValidationError(problems)
        applied = {
            k: v for k, v in changes.items() if self.state[k] != v
        }
        if applied:
            self.state = self.state.updated(applied)
            self._mark_progress()
        self.plan = None
        self.remaining.clear()
        self._plan_sig = None
        self._log(
            ev.OPERATOR_COMMAND,
            {"command": "sync_estimated", "changes": dict(changes), "source": source},
        )
        if applied:
            self._log(ev.STATE_DELTA, {"changes": applied, "source": "operator"})

    def start_ability(self, name: str, source: str = "operator") -> None:
        if self.mode != MODE_RESTART:
            raise ModeError("start_ability requires restart mode")
        try:
            ability = self.spec.abilities.by_name(name)
        except KeyError:
            raise UnknownNameError(f"unknown ability {name!r}") from None
        event = ability.start_event
        ct = self.eng.by_event[event]
        if not ct.guard(self.eng.encode(self.state)):
            raise CommandRejected(f"{event} is not enabled in the current state")
        self._log(
            ev.OPERATOR_COMMAND,
            {"command": "start_ability", "ability": name, "source": source},
        )
        self._fire(event)

    def note_fault(self, data: dict) -> None:
        """Scenario hook: record an injected fault in the journal."""
        self._log(ev.FAULT, data)

    # --- introspection -------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "tick": self.tick_index,
            "mode": self.mode,
            "advisory": self.advisory,
            "variables": dict(self.state.asdict()),
            "operations": dict(self.phases),
            "plan": {
                "events": list(self.plan.events) if self.plan else None,
                "remaining": list(self.remaining),
            },
            "started": sorted(self.started),
            "abilities": {
                a.name: ability_status(a, self.state)
                for a in self.spec.abilities.abilities
            },
            "events": len(self.log),
        }

    # --- internals -----------------------------------------------------

    def _fire(self, event: str) -> None:
        ct = self.eng.by_event[event]
        enc = self.eng.fire(ct, self.eng.encode(self.state))
        before = self.state
        self.state = self.eng.decode(enc)
        self._mark_progress()
        changed = {
            k: self.state[k] for k in self.state if self.state[k] != before[k]
        }
        ability = ct.ref.ability
        if ability:
            self.started.add(ability)
            self._log(ev.ABILITY_STARTED, {"ability": ability, "event": event})
        if changed:
            self._log(ev.STATE_DELTA, {"changes": changed, "source": "dispatch"})
        self._close("dispatch-closure")

    def _allowed_events(self) -> list[str]:
        if self.mode == MODE_NORMAL:
            return [
                e for e in self._controllables if e not in self._restart_events
            ]
        return list(self._controllables)

    def _holds(self, pred) -> bool:
        return eval_predicate(pred, self.state)

    def _targets_met(self, goals: Iterable[Goal]) -> bool:
        return all(self._holds(g.target) for g in goals)

    def _set_phase(self, name: str, phase: str) -> None:
        self.phases[name] = phase
        self._log(ev.OPERATION_PHASE, {"operation": name, "phase": phase})

    def _mark_progress(self) -> None:
        self._last_progress = self.tick_index

    def _log(self, kind: str, data: dict) -> None:
        self.log.append(self.tick_index, kind, data)
