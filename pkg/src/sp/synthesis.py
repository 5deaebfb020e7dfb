"""Supervisor synthesis by explicit-state guard refinement.

Enumerate every reachable state, grow the forbidden set backwards over
uncontrollable transitions until it is closed (a state the environment
can drive into the forbidden set on its own is itself lost), then
conjoin a membership test onto each controllable guard so the plan
layer can simply never step into the closed set.  Uncontrollable guards
are left untouched; refusing them is not an option we have.

The refinement is maximally permissive for this transition structure: a
controllable stays enabled in exactly the states where taking it cannot
be driven into the forbidden set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .expr import OpaquePredicate, Predicate, conj
from .model import DivergenceError, Model, Transition, TransitionClass

EncodedState = tuple[int, ...]

DEFAULT_CAP = 1_000_000


class SynthesisError(RuntimeError):
    pass


class StateSpaceExceeded(SynthesisError):
    pass


class SynthesisInfeasible(SynthesisError):
    """The initial state itself is inside the closed forbidden set."""


def reachable_states(model: Model, cap: int = DEFAULT_CAP) -> frozenset[EncodedState]:
    """All states reachable by any transition sequence, classes ignored.

    This over-approximates closed-loop behavior on purpose; a supervisor
    proven safe here stays safe for any execution policy.
    """
    eng = model.engine()
    seen = {eng.initial}
    frontier = [eng.initial]
    transitions = eng.transitions
    while frontier:
        s = frontier.pop()
        for ct in transitions:
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 not in seen:
                    if len(seen) >= cap:
                        raise StateSpaceExceeded(
                            f"reachable state count exceeds cap of {cap}"
                        )
                    seen.add(s2)
                    frontier.append(s2)
    return frozenset(seen)


class SafetyGuard(OpaquePredicate):
    """Conjunct refined onto one controllable: post-state avoids the bad set."""

    __slots__ = ("event", "bad", "_base")

    def __init__(self, event: str, bad: frozenset[EncodedState], base_engine):
        self.event = event
        self.bad = bad
        self._base = base_engine

    def holds(self, get) -> bool:
        base = self._base
        enc = tuple(
            base.val_index[i][get[name]] for i, name in enumerate(base.names)
        )
        return base.by_event[self.event].apply(enc) not in self.bad

    def compile_tuple(self, eng) -> Callable[[EncodedState], bool] | None:
        # encodings agree as long as the variable vector is unchanged,
        # which refinement guarantees; bail out to holds() otherwise
        if eng.names != self._base.names or eng.domains != self._base.domains:
            return None
        apply = self._base.by_event[self.event].apply
        bad = self.bad
        return lambda s: apply(s) not in bad

    def describe(self) -> str:
        return f"<{self.event} kept outside {len(self.bad)} blocked states>"


@dataclass
class SynthesisResult:
    model: Model
    base: Model
    reachable: frozenset[EncodedState]
    bad: frozenset[EncodedState]
    # controllable events whose refined conjunct actually blocks them
    # somewhere in the safe reachable region
    restricted_events: tuple[str, ...]

    @property
    def safe_count(self) -> int:
        return len(self.reachable) - len(self.bad)

    def summary(self) -> str:
        return (
            f"{len(self.reachable)} reachable states, "
            f"{len(self.bad)} forbidden after closure, "
            f"{len(self.restricted_events)} controllable events restricted"
        )


def synthesize(
    model: Model, forbidden: Sequence[Predicate], cap: int = DEFAULT_CAP
) -> SynthesisResult:
    eng = model.engine()
    reach = reachable_states(model, cap)
    forb_fns = [eng.compile_predicate(p) for p in forbidden]
    bad: set[EncodedState] = {
        s for s in reach if any(fn(s) for fn in forb_fns)
    }

    # backward closure over uncontrollables, worklist on a predecessor map
    unc = [ct for ct in eng.transitions if not ct.ref.klass.controllable]
    preds: dict[EncodedState, list[EncodedState]] = {}
    for s in reach:
        for ct in unc:
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 != s:
                    preds.setdefault(s2, []).append(s)
    work = list(bad)
    while work:
        b = work.pop()
        for p in preds.get(b, ()):
            if p not in bad:
                bad.add(p)
                work.append(p)

    if eng.initial in bad:
        raise SynthesisInfeasible(
            "initial state cannot avoid the forbidden set "
            f"({len(bad)} of {len(reach)} reachable states are lost)"
        )

    frozen_bad = frozenset(bad)
    restricted: list[str] = []
    if frozen_bad:
        safe = reach - frozen_bad
        for ct in eng.controllables:
            if any(ct.guard(s) and ct.apply(s) in frozen_bad for s in safe):
                restricted.append(ct.ref.event)

    refined: list[Transition] = []
    for t in model.transitions:
        if frozen_bad and t.klass is TransitionClass.CONTROLLABLE:
            guard = conj(t.guard, SafetyGuard(t.event, frozen_bad, eng))
            refined.append(
                Transition(
                    t.event, guard, t.actions, t.klass,
                    resource=t.resource, ability=t.ability,
                    role=t.role, pair=t.pair,
                )
            )
        else:
            refined.append(t)

    refined_model = Model(model.variables, tuple(refined), meta=dict(model.meta))
    return SynthesisResult(
        model=refined_model,
        base=model,
        reachable=reach,
        bad=frozen_bad,
        restricted_events=tuple(sorted(restricted)),
    )


# --- inspection ---------------------------------------------------------


def blocked_states_dnf(result: SynthesisResult, event: str, max_states: int = 20000) -> str:
    """Readable sum-of-cubes for where the refinement blocks an event.

    Greedy cube merging only; compact, not guaranteed minimal.  Purely
    for operator inspection, nothing executes this output.
    """
    eng = result.base.engine()
    ct = eng.by_event[event]
    if not ct.ref.klass.controllable:
        raise SynthesisError(f"{event!r} is not controllable")
    blocking = [
        s
        for s in sorted(result.reachable - result.bad)
        if ct.guard(s) and ct.apply(s) in result.bad
    ]
    if not blocking:
        return "false"
    if len(blocking) > max_states:
        raise SynthesisError(
            f"{len(blocking)} blocking states exceed the inspection limit"
        )
    cubes = _merge_cubes([list(s) for s in blocking])
    names = eng.names
    domains = eng.domains
    terms = []
    for cube in cubes:
        lits = [
            f"{names[i]} == {_fmt_val(domains[i][v])}"
            for i, v in enumerate(cube)
            if v is not None
        ]
        terms.append(" && ".join(lits) if lits else "true")
    return " || ".join(terms)


def _fmt_val(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _merge_cubes(cubes: list[list]) -> list[tuple]:
    """Repeatedly join cube pairs differing in exactly one coordinate.

    Cubes agreeing everywhere but coordinate i share the key (i, rest),
    so each pass is linear in pool size instead of comparing all pairs.
    The per-pass result is a pure function of the pool, which keeps the
    output deterministic.
    """
    pool = {tuple(c) for c in cubes}
    changed = True
    while changed:
        changed = False
        buckets: dict[tuple, list[tuple]] = {}
        for c in pool:
            for i in range(len(c)):
                buckets.setdefault((i, c[:i], c[i + 1:]), []).append(c)
        merged: set[tuple] = set()
        used: set[tuple] = set()
        for (i, head, tail), group in buckets.items():
            if len(group) > 1:
                used.update(group)
                merged.add(head + (None,) + tail)
                changed = True
        pool = (pool - used) | merged
    return sorted(pool, key=lambda c: tuple(str(x) for x in c))


def closed_loop_states(
    model: Model,
    *,
    cap: int = DEFAULT_CAP,
    include_intermediate: bool = False,
) -> frozenset[EncodedState]:
    """Settled-state exploration of the supervised loop.

    From every settled state each enabled controllable is fired, its
    starting effects applied, and the full uncontrollable closure run.
    This collapses the uncontrollable interleavings of
    reachable_states() down to the one priority order the executor and
    planner actually use, so the result is the set of states the loop
    dwells in.  With include_intermediate, every state the closures
    pass through is also returned, which is the right set to sweep for
    forbidden-state hits.
    """
    eng = model.engine()
    inter: set[EncodedState] = set()

    def capture(s: EncodedState) -> None:
        if include_intermediate:
            inter.add(s)

    def close(s: EncodedState) -> EncodedState:
        seen = {s}
        while True:
            s2 = eng._closure_step(s, True, None, None)
            if s2 is None:
                return s
            if s2 in seen:
                raise DivergenceError("uncontrollable closure does not stabilize")
            seen.add(s2)
            capture(s2)
            s = s2

    capture(eng.initial)
    start = close(eng.initial)
    settled = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for s in frontier:
            for ct in eng.controllables:
                if not ct.guard(s):
                    continue
                s1 = ct.apply(s)
                capture(s1)
                for eff in eng.starting_effects.get(ct.ref.ability, ()):
                    if eff.guard(s1):
                        s3 = eff.apply(s1)
                        if s3 != s1:
                            s1 = s3
                            capture(s1)
                s2 = close(s1)
                if s2 not in settled:
                    if len(settled) >= cap:
                        raise StateSpaceExceeded(
                            f"settled state count exceeds cap of {cap}"
                        )
                    settled.add(s2)
                    nxt.append(s2)
        frontier = nxt
    if include_intermediate:
        return frozenset(settled | inter)
    return frozenset(settled)
