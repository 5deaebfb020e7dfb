"""Scripted closed-loop runs with reproducible verdicts.

A scenario file names a model project's situation to put the loop in:
faults injected at given ticks, operator interventions triggered by what
the controller reports, and a list of expectations to grade at the end.
Everything runs on a virtual clock, so two runs of the same scenario
produce bit-identical event logs and an identical verdict digest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bus import Broker, canonical_json
from .events import EventRecord
from .expr import Predicate, parse_predicate
from .model import Model, eval_predicate
from .modelfile import ModelSpec
from .runner import Executor, RunnerError
from .simnodes import FAULT_DISPLACE, SimCell
from .synthesis import synthesize

TICK_MS = 10

VERBS = (
    "enter_restart",
    "exit_restart",
    "ack",
    "reset_operation",
    "sync_estimated",
    "start_ability",
    "fault",
    "clear_fault",
    "auto_ack",
)

CHECK_KEYS = (
    "state",
    "mode",
    "advisory",
    "world",
    "event",
    "no_event",
    "order",
    "plan",
    "bus_order",
)


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class Directive:
    """One intervention: a trigger, then operator verbs applied in order."""

    trigger: tuple
    steps: tuple[tuple, ...]
    after: int | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    max_ticks: int
    until: Predicate | None
    until_advisory: bool
    invariants: tuple[tuple[str, Predicate], ...]
    directives: tuple[Directive, ...]
    expect: tuple[dict, ...]


def _parse_steps(doc, where: str, problems: list[str]) -> tuple[tuple, ...]:
    steps = []
    if not isinstance(doc, list):
        problems.append(f"{where}: 'do' must be a list of verbs")
        return ()
    for i, step in enumerate(doc):
        w = f"{where}.do[{i}]"
        if isinstance(step, str):
            if step in ("enter_restart", "exit_restart", "ack"):
                steps.append((step,))
            else:
                problems.append(f"{w}: unknown verb {step!r}")
        elif isinstance(step, dict) and len(step) == 1:
            verb, arg = next(iter(step.items()))
            if verb in ("reset_operation", "start_ability") and isinstance(arg, str):
                steps.append((verb, arg))
            elif verb == "sync_estimated" and isinstance(arg, dict):
                steps.append((verb, dict(arg)))
            elif verb == "auto_ack" and isinstance(arg, bool):
                steps.append((verb, arg))
            elif verb in ("fault", "clear_fault") and isinstance(arg, dict):
                node, kind = arg.get("node"), arg.get("kind")
                if not isinstance(node, str) or not isinstance(kind, str):
                    problems.append(f"{w}: fault needs node and kind strings")
                elif verb == "clear_fault" and kind == FAULT_DISPLACE:
                    problems.append(f"{w}: a displacement cannot be un-happened")
                else:
                    steps.append((verb, node, kind))
            else:
                problems.append(f"{w}: unknown verb {verb!r}")
        else:
            problems.append(f"{w}: unintelligible step {step!r}")
    return tuple(steps)


def _parse_directive(doc, idx: int, model: Model, problems: list[str]) -> Directive | None:
    where = f"directives[{idx}]"
    if not isinstance(doc, dict):
        problems.append(f"{where}: must be a mapping")
        return None
    triggers = [k for k in ("at_tick", "when", "when_advisory", "when_phase") if k in doc]
    if len(triggers) != 1:
        problems.append(f"{where}: needs exactly one trigger, got {triggers or 'none'}")
        return None
    kind = triggers[0]
    trigger: tuple
    if kind == "at_tick":
        if not isinstance(doc["at_tick"], int) or doc["at_tick"] < 0:
            problems.append(f"{where}: at_tick must be a non-negative integer")
            return None
        trigger = ("at_tick", doc["at_tick"])
    elif kind == "when":
        try:
            trigger = ("when", doc["when"], parse_predicate(doc["when"], model.vocabulary()))
        except Exception as exc:
            problems.append(f"{where}: bad 'when' predicate ({exc})")
            return None
    elif kind == "when_advisory":
        trigger = ("when_advisory",)
    else:
        arg = doc["when_phase"]
        if (
            not isinstance(arg, dict)
            or not isinstance(arg.get("operation"), str)
            or not isinstance(arg.get("phase"), str)
        ):
            problems.append(f"{where}: when_phase needs operation and phase strings")
            return None
        trigger = ("when_phase", arg["operation"], arg["phase"])
    after = doc.get("after")
    if after is not None and not isinstance(after, int):
        problems.append(f"{where}: 'after' must be a directive index")
        return None
    steps = _parse_steps(doc.get("do"), where, problems)
    return Directive(trigger=trigger, steps=steps, after=after)


def _parse_expect(doc, model: Model, problems: list[str]) -> tuple[dict, ...]:
    if doc is None:
        return ()
    if not isinstance(doc, list):
        problems.append("expect: must be a list of checks")
        return ()
    out = []
    for i, check in enumerate(doc):
        where = f"expect[{i}]"
        if not isinstance(check, dict) or len(check) != 1:
            problems.append(f"{where}: each check is a single-key mapping")
            continue
        key, arg = next(iter(check.items()))
        if key not in CHECK_KEYS:
            problems.append(f"{where}: unknown check {key!r}")
            continue
        if key == "state":
            try:
                parse_predicate(arg, model.vocabulary())
            except Exception as exc:
                problems.append(f"{where}: bad state predicate ({exc})")
                continue
        if key == "order" and (not isinstance(arg, list) or len(arg) != 2):
            problems.append(f"{where}: order takes exactly two event matchers")
            continue
        out.append({key: arg})
    return tuple(out)


def parse_scenario_doc(doc: dict, model: Model) -> Scenario:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario file must hold a mapping"])
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        problems.append("scenario needs a non-empty name")
        name = "?"
    max_ticks = doc.get("max_ticks", 3000)
    if not isinstance(max_ticks, int) or max_ticks < 1:
        problems.append("max_ticks must be a positive integer")
        max_ticks = 1
    until = None
    if "until" in doc:
        try:
            until = parse_predicate(doc["until"], model.vocabulary())
        except Exception as exc:
            problems.append(f"bad 'until' predicate ({exc})")
    invariants = []
    for i, text in enumerate(doc.get("invariants", ())):
        try:
            invariants.append((text, parse_predicate(text, model.vocabulary())))
        except Exception as exc:
            problems.append(f"invariants[{i}]: {exc}")
    directives = []
    for i, ddoc in enumerate(doc.get("directives", ())):
        d = _parse_directive(ddoc, i, model, problems)
        if d is not None:
            if d.after is not None and not 0 <= d.after < i:
                problems.append(f"directives[{i}]: 'after' must point at an earlier directive")
            directives.append(d)
    expect = _parse_expect(doc.get("expect"), model, problems)
    if problems:
        raise ScenarioError(problems)
    return Scenario(
        name=name,
        description=doc.get("description", ""),
        max_ticks=max_ticks,
        until=until,
        until_advisory=bool(doc.get("until_advisory", False)),
        invariants=tuple(invariants),
        directives=tuple(directives),
        expect=expect,
    )


def load_scenario(path: str | Path, model: Model) -> Scenario:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return parse_scenario_doc(doc, model)


def _match(ev: EventRecord, m: dict) -> bool:
    if "kind" in m and ev.kind != m["kind"]:
        return False
    return all(
        ev.data.get(k) == v for k, v in m.items() if k not in ("kind", "occurrence")
    )


def _pick(events, m) -> EventRecord | None:
    """First matching event, or the last one with `occurrence: last`."""
    hits = [ev for ev in events if _match(ev, m)]
    if not hits:
        return None
    return hits[-1] if m.get("occurrence") == "last" else hits[0]


class ScenarioRun:
    """Drives one scenario against a fresh cell and executor."""

    def __init__(self, spec: ModelSpec, scenario: Scenario, model: Model | None = None):
        self.spec = spec
        self.scenario = scenario
        self.model = model if model is not None else synthesize(spec.model, spec.forbidden).model
        self.now = 0
        self.broker = Broker(now_ms=lambda: self.now)
        self.cell = SimCell(spec, self.broker)
        self.exe = Executor(spec, self.model, self.broker)
        self._taps = {}
        for check in scenario.expect:
            if "bus_order" in check:
                topic = check["bus_order"]["topic"]
                if topic not in self._taps:
                    self._taps[topic] = self.broker.subscribe(topic, capacity=8192)
        self.envelopes: list[tuple[int, str, dict]] = []
        self.violations: dict[str, int] = {}
        self.errors: list[str] = []

    def _apply(self, step: tuple) -> None:
        verb = step[0]
        try:
            if verb == "enter_restart":
                self.exe.enter_restart()
            elif verb == "exit_restart":
                self.exe.exit_restart()
            elif verb == "ack":
                self.cell.operator.ack_now()
            elif verb == "reset_operation":
                self.exe.reset_operation(step[1])
            elif verb == "sync_estimated":
                self.exe.sync_estimated(step[1])
            elif verb == "start_ability":
                self.exe.start_ability(step[1])
            elif verb == "auto_ack":
                self.cell.operator.auto_ack = step[1]
            elif verb in ("fault", "clear_fault"):
                node = self.cell.nodes.get(step[1])
                if node is None:
                    raise RunnerError(f"no sim node named {step[1]!r}")
                if verb == "clear_fault":
                    node.clear_fault(step[2])
                elif step[2] == FAULT_DISPLACE:
                    node.displace()
                else:
                    node.set_fault(step[2])
                if verb == "fault":
                    self.exe.note_fault({"node": step[1], "kind": step[2]})
        except RunnerError as exc:
            self.errors.append(f"tick {self.exe.tick_index}: {verb}: {exc}")

    def _eligible(self, d: Directive, fired: list[bool]) -> bool:
        if d.after is not None and not fired[d.after]:
            return False
        t = d.trigger
        if t[0] == "at_tick":
            return self.exe.tick_index >= t[1]
        if t[0] == "when":
            return eval_predicate(t[2], self.exe.state)
        if t[0] == "when_advisory":
            return self.exe.advisory is not None
        if t[0] == "when_phase":
            return self.exe.phases.get(t[1]) == t[2]
        return False

    def run(self) -> dict:
        sc = self.scenario
        fired = [False] * len(sc.directives)
        ticks = 0
        stopped = "max-ticks"
        for _ in range(sc.max_ticks):
            for i, d in enumerate(sc.directives):
                if not fired[i] and self._eligible(d, fired):
                    fired[i] = True
                    for step in d.steps:
                        self._apply(step)
            self.now += TICK_MS
            self.cell.step(self.now)
            self.exe.run_tick(self.now)
            ticks = self.exe.tick_index
            for topic, tap in self._taps.items():
                for env in tap.poll():
                    self.envelopes.append((ticks - 1, topic, env.payload))
            for text, pred in sc.invariants:
                if text not in self.violations and not eval_predicate(pred, self.exe.state):
                    self.violations[text] = ticks - 1
            if sc.until is not None and eval_predicate(sc.until, self.exe.state):
                stopped = "until"
                break
            if sc.until_advisory and self.exe.advisory is not None:
                stopped = "advisory"
                break
        return self._verdict(ticks, stopped, fired)

    def _grade(self, check: dict, events) -> tuple[bool, str]:
        key, arg = next(iter(check.items()))
        if key == "state":
            pred = parse_predicate(arg, self.model.vocabulary())
            ok = eval_predicate(pred, self.exe.state)
            return ok, "holds" if ok else "does not hold in the final state"
        if key == "mode":
            return self.exe.mode == arg, f"final mode {self.exe.mode}"
        if key == "advisory":
            present = self.exe.advisory is not None
            return present == arg, f"advisory={self.exe.advisory!r}"
        if key == "world":
            bad = {
                k: getattr(self.cell.world, k)
                for k, v in arg.items()
                if getattr(self.cell.world, k, None) != v
            }
            return (not bad), (f"world mismatches: {bad}" if bad else "world agrees")
        if key == "event":
            ev = _pick(events, arg)
            return ev is not None, ("seen" if ev else "no matching event")
        if key == "no_event":
            ev = _pick(events, arg)
            return ev is None, ("absent" if ev is None else f"matched at tick {ev.tick}")
        if key == "order":
            a, b = _pick(events, arg[0]), _pick(events, arg[1])
            if a is None or b is None:
                return False, f"missing event ({'first' if a is None else 'second'})"
            ok = a.seq < b.seq
            return ok, f"ticks {a.tick} vs {b.tick}"
        if key == "plan":
            want = list(arg["events"])
            for ev in events:
                if ev.kind != "plan-adopted" or list(ev.data["events"]) != want:
                    continue
                if "reason" in arg and ev.data["reason"] != arg["reason"]:
                    continue
                return True, f"adopted at tick {ev.tick}"
            return False, "no matching plan adoption"
        if key == "bus_order":
            ev = _pick(events, arg["event"])
            if ev is None:
                return False, "anchor event never happened"
            late = [
                t
                for t, topic, payload in self.envelopes
                if topic == arg["topic"]
                and payload.get(arg["field"]) == arg["value"]
                and t <= ev.tick
            ]
            n = sum(
                1
                for _, topic, payload in self.envelopes
                if topic == arg["topic"] and payload.get(arg["field"]) == arg["value"]
            )
            if n == 0:
                return False, "no matching envelopes at all"
            ok = not late
            return ok, (f"{len(late)} envelope(s) too early" if late else f"all {n} after tick {ev.tick}")
        return False, f"unknown check {key!r}"

    def _verdict(self, ticks: int, stopped: str, fired: list[bool]) -> dict:
        events = self.exe.log.all()
        checks = []
        for check in self.scenario.expect:
            ok, detail = self._grade(check, events)
            checks.append({"check": check, "passed": ok, "detail": detail})
        for text, _ in self.scenario.invariants:
            tick = self.violations.get(text)
            checks.append(
                {
                    "check": {"invariant": text},
                    "passed": tick is None,
                    "detail": "held throughout" if tick is None else f"violated at tick {tick}",
                }
            )
        for err in self.errors:
            checks.append({"check": {"directive": err}, "passed": False, "detail": "command rejected"})
        for i, (f, d) in enumerate(zip(fired, self.scenario.directives)):
            if not f and d.trigger[0] == "at_tick":
                checks.append(
                    {
                        "check": {"directive": i},
                        "passed": False,
                        "detail": f"at_tick {d.trigger[1]} never reached",
                    }
                )
        digest = hashlib.sha256(
            canonical_json(
                {
                    "events": [e.to_doc() for e in events],
                    "final": dict(self.exe.state),
                    "world": {"bolts": self.cell.world.bolts, "joints": self.cell.world.joints},
                }
            )
        ).hexdigest()[:16]
        return {
            "scenario": self.scenario.name,
            "passed": all(c["passed"] for c in checks),
            "ticks": ticks,
            "stopped": stopped,
            "checks": checks,
            "events": len(events),
            "digest": digest,
        }


def run_scenario(
    spec: ModelSpec, scenario: Scenario, *, model: Model | None = None
) -> dict:
    return ScenarioRun(spec, scenario, model).run()


def run_scenario_file(spec: ModelSpec, path: str | Path, *, model: Model | None = None) -> dict:
    return run_scenario(spec, load_scenario(path, spec.model), model=model)
