"""Bounded reachability planning over the refined model.

A plan is an ordered list of controllable events.  The planner breadth
first searches macro-states: fire one controllable, apply its starting
effects, then run the uncontrollable closure, and only the settled
states are predicted or checked.  Effects of an ability only fire in
branches that actually started that ability (raw model effects always
fire); the environment is simulated for what we asked it to do, not for
everything it could conceivably do.

Search order is deterministic, so for a given model and bound the
returned plan is the shortest one, ties broken by the fixed
(resource, ability, event) transition order.  Absence of a plan within
the bound is an ordinary result, not an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .expr import Predicate, disj, format_predicate
from .model import Model, ModelError, StateVec

DEFAULT_BOUND = 30


@dataclass(frozen=True)
class Goal:
    """Reach ``target`` along a trace that never visited ``avoid`` first.

    At each settled state the target is checked before the avoid
    predicate, so a state satisfying both still completes the goal.
    """

    name: str
    target: Predicate
    avoid: Predicate | None = None

    def describe(self) -> str:
        t = format_predicate(self.target)
        if self.avoid is None:
            return t
        return f"{t} (avoiding {format_predicate(self.avoid)})"


@dataclass(frozen=True)
class Operation:
    """A supervisor-level unit of work: precondition gates the start,
    the goal drives planning."""

    name: str
    precondition: Predicate
    goal: Goal


def with_safety(goals: Sequence[Goal], forbidden: Sequence[Predicate]) -> list[Goal]:
    """Fold the model's forbidden predicates into every goal's avoid.

    Guard refinement only covers states it could enumerate; measured
    inputs can still teleport the loop outside that set (a displaced
    arm, say).  Planning with the forbidden set as an avoid condition
    keeps plans clear of it from wherever we actually are.
    """
    if not forbidden:
        return list(goals)
    net = disj(*forbidden)
    out = []
    for g in goals:
        avoid = net if g.avoid is None else disj(g.avoid, net)
        out.append(Goal(name=g.name, target=g.target, avoid=avoid))
    return out


@dataclass(frozen=True)
class Plan:
    events: tuple[str, ...]
    # states[0] is the settled start; states[k] follows events[k-1]
    states: tuple[StateVec, ...]
    started: frozenset[str]
    bound: int

    def __len__(self) -> int:
        return len(self.events)

    def describe(self) -> str:
        if not self.events:
            return "<empty plan>"
        return " -> ".join(self.events)


def plan(
    model: Model,
    goals: Sequence[Goal],
    start: StateVec,
    *,
    bound: int = DEFAULT_BOUND,
    allowed_events: frozenset[str] | None = None,
    started: frozenset[str] = frozenset(),
) -> Plan | None:
    eng = model.engine()
    controllables = eng.controllables
    if allowed_events is not None:
        controllables = [ct for ct in controllables if ct.ref.event in allowed_events]

    target_fns = [eng.compile_predicate(g.target) for g in goals]
    avoid_fns = [
        eng.compile_predicate(g.avoid) if g.avoid is not None else None for g in goals
    ]
    all_done = (1 << len(goals)) - 1

    def advance(mask: int, s) -> int | None:
        """Fold one settled state into the done mask; None kills the branch."""
        for i in range(len(goals)):
            if mask & (1 << i):
                continue
            if target_fns[i](s):
                mask |= 1 << i
            elif avoid_fns[i] is not None and avoid_fns[i](s):
                return None
        return mask

    s0 = eng.closure(eng.encode(start), include_effects=True, attributed=started)
    mask0 = advance(0, s0)
    if mask0 is None:
        return None
    if mask0 == all_done:
        return Plan((), (eng.decode(s0),), started, bound)

    root = (s0, mask0, started)
    visited = {root}
    parents: dict = {root: None}
    queue: list = [root]
    depth = 0
    while queue and depth < bound:
        depth += 1
        next_queue: list = []
        for node in queue:
            s, mask, begun = node
            for ct in controllables:
                if not ct.guard(s):
                    continue
                begun2 = begun | {ct.ref.ability} if ct.ref.ability else begun
                try:
                    s2 = eng.fire_and_close(
                        s, ct, include_effects=True, attributed=begun2
                    )
                except ModelError:
                    # diverging or domain-breaking branch is simply not a plan
                    continue
                mask2 = advance(mask, s2)
                if mask2 is None:
                    continue
                child = (s2, mask2, begun2)
                if child in visited:
                    continue
                visited.add(child)
                parents[child] = (node, ct.ref.event)
                if mask2 == all_done:
                    return _reconstruct(eng, parents, child, started, bound)
                next_queue.append(child)
        queue = next_queue
    return None


def _reconstruct(eng, parents, node, started, bound) -> Plan:
    events: list[str] = []
    encs: list = []
    cur = node
    while cur is not None:
        encs.append(cur[0])
        link = parents[cur]
        if link is None:
            break
        cur, ev = link
        events.append(ev)
    events.reverse()
    encs.reverse()
    return Plan(tuple(events), tuple(eng.decode(e) for e in encs), node[2], bound)


def check_trace(model: Model, goals: Sequence[Goal], states: Iterable[StateVec]) -> bool:
    """All goals complete over the settled-state trace, target before avoid."""
    eng = model.engine()
    target_fns = [eng.compile_predicate(g.target) for g in goals]
    avoid_fns = [
        eng.compile_predicate(g.avoid) if g.avoid is not None else None for g in goals
    ]
    done = [False] * len(goals)
    dead = [False] * len(goals)
    for sv in states:
        s = eng.encode(sv)
        for i in range(len(goals)):
            if done[i] or dead[i]:
                continue
            if target_fns[i](s):
                done[i] = True
            elif avoid_fns[i] is not None and avoid_fns[i](s):
                dead[i] = True
    return all(done)


def validate(
    model: Model,
    events: Sequence[str],
    current: StateVec,
    goals: Sequence[Goal],
    *,
    started: frozenset[str] = frozenset(),
) -> bool:
    """Re-predict the remaining plan from the current state.

    True iff every remaining event stays fireable in order and the
    re-predicted trace still completes every pending goal.  An empty
    remainder is trivially consistent; deciding whether the world has
    stalled is the executor's job, not a property of the plan.
    """
    if not events:
        return True
    eng = model.engine()
    try:
        s = eng.closure(eng.encode(current), include_effects=True, attributed=started)
    except ModelError:
        return False
    trace = [s]
    begun = started
    for ev in events:
        ct = eng.by_event.get(ev)
        if ct is None or not ct.guard(s):
            return False
        if ct.ref.ability:
            begun = begun | {ct.ref.ability}
        try:
            s = eng.fire_and_close(s, ct, include_effects=True, attributed=begun)
        except ModelError:
            return False
        trace.append(s)
    return check_trace(model, goals, [eng.decode(e) for e in trace])
