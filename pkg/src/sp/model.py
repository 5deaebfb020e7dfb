"""Core state-machine model.

A model is a flat set of finite-domain variables plus guarded transitions
over them.  Control locations are not modelled separately; everything an
automaton would encode in its location lives in ordinary variables, which
keeps products, synthesis and planning uniform.

Variable kinds:

    measured   mirrors device state, written by inbound pipelines
               (and, for offline prediction only, by effect transitions)
    output     commands to devices, written by transition actions
    estimated  bookkeeping the devices cannot report, e.g. whether a part
               is believed to be in place
    ability-state  lifecycle booleans maintained by sync transitions

Transition classes:

    controllable           fired by the dispatcher (ability starts)
    uncontrollable-sync    keeps derived booleans consistent, closed to
                           fixpoint after every state change
    uncontrollable-finish  completes an ability when its conditions hold
    uncontrollable-effect  predicted device response, used offline
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .expr import (
    Action,
    Assign,
    Copy,
    ExprError,
    Predicate,
    Value,
    Vocabulary,
    eval_with,
)


class ModelError(ValueError):
    pass


class DisabledTransitionError(ModelError):
    """fire() on a transition whose guard is false is a contract violation."""


class DivergenceError(ModelError):
    """sync closure failed to reach a fixpoint (guard cycle)."""


class VarKind(enum.Enum):
    MEASURED = "measured"
    ESTIMATED = "estimated"
    OUTPUT = "output"
    ABILITY_STATE = "ability-state"


class TransitionClass(enum.Enum):
    CONTROLLABLE = "controllable"
    SYNC = "uncontrollable-sync"
    EFFECT = "uncontrollable-effect"
    FINISH = "uncontrollable-finish"

    @property
    def controllable(self) -> bool:
        return self is TransitionClass.CONTROLLABLE


class DomainKind(enum.Enum):
    BOOLEAN = "boolean"
    ENUMERATION = "enumeration"
    BOUNDED_INTEGER = "bounded-integer"


@dataclass(frozen=True, slots=True)
class VarDomain:
    kind: DomainKind
    values: tuple[Value, ...]

    @staticmethod
    def boolean() -> "VarDomain":
        return VarDomain(DomainKind.BOOLEAN, (False, True))

    @staticmethod
    def enumeration(values: Iterable[str]) -> "VarDomain":
        vals = tuple(values)
        if not vals:
            raise ModelError("enumeration domain needs at least one value")
        if len(set(vals)) != len(vals):
            raise ModelError(f"enumeration has duplicate values: {vals}")
        return VarDomain(DomainKind.ENUMERATION, vals)

    @staticmethod
    def bounded_integer(lo: int, hi: int) -> "VarDomain":
        if lo > hi:
            raise ModelError(f"bounded-integer domain with lo {lo} > hi {hi}")
        return VarDomain(DomainKind.BOUNDED_INTEGER, tuple(range(lo, hi + 1)))

    def __contains__(self, value: object) -> bool:
        if self.kind is DomainKind.BOOLEAN:
            return isinstance(value, bool)
        if self.kind is DomainKind.BOUNDED_INTEGER:
            return isinstance(value, int) and not isinstance(value, bool) and self.values[0] <= value <= self.values[-1]
        return isinstance(value, str) and value in self.values

    @property
    def lo(self) -> int:
        if self.kind is not DomainKind.BOUNDED_INTEGER:
            raise ModelError("lo/hi only apply to bounded-integer domains")
        return self.values[0]

    @property
    def hi(self) -> int:
        if self.kind is not DomainKind.BOUNDED_INTEGER:
            raise ModelError("lo/hi only apply to bounded-integer domains")
        return self.values[-1]


@dataclass(frozen=True, slots=True)
class Variable:
    name: str
    kind: VarKind
    domain: VarDomain
    initial: Value
    resource: str = ""
    # message field this variable mirrors; defaults to the variable name
    field_name: str = ""

    def __post_init__(self):
        if not self.name:
            raise ModelError("variable with empty name")
        if self.initial not in self.domain:
            raise ModelError(
                f"initial value {self.initial!r} of {self.name!r} outside its domain"
            )

    @property
    def mapped_field(self) -> str:
        return self.field_name or self.name


@dataclass(frozen=True, slots=True)
class Transition:
    event: str
    guard: Predicate
    actions: tuple[Action, ...]
    klass: TransitionClass
    resource: str = ""
    ability: str = ""
    # role labels transitions the ability compiler emits: start, finish,
    # sync, sync_dual, effect_start, effect_exec.  Raw model transitions
    # leave it empty.  pair names the lifecycle boolean a sync/dual
    # couple maintains.
    role: str = ""
    pair: str = ""

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.resource, self.ability, self.event)


class StateVec(Mapping):
    """Immutable total assignment of every model variable."""

    __slots__ = ("_names", "_index", "_vals")

    def __init__(self, names: tuple[str, ...], index: dict[str, int], vals: tuple[Value, ...]):
        self._names = names
        self._index = index
        self._vals = vals

    def __getitem__(self, name: str) -> Value:
        return self._vals[self._index[name]]

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __hash__(self) -> int:
        return hash(self._vals)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, StateVec):
            return self._names == other._names and self._vals == other._vals
        if isinstance(other, Mapping):
            return dict(self) == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        body = ", ".join(f"{n}={v!r}" for n, v in zip(self._names, self._vals))
        return f"StateVec({body})"

    @property
    def values_tuple(self) -> tuple[Value, ...]:
        return self._vals

    def updated(self, changes: Mapping[str, Value]) -> "StateVec":
        vals = list(self._vals)
        for name, value in changes.items():
            vals[self._index[name]] = value
        return StateVec(self._names, self._index, tuple(vals))

    def asdict(self) -> dict[str, Value]:
        return dict(zip(self._names, self._vals))


class _ModelVocabulary(Vocabulary):
    def __init__(self, model: "Model"):
        self._model = model
        self._names = frozenset(v.name for v in model.variables)

    def is_variable(self, name: str) -> bool:
        return name in self._names

    def is_boolean(self, name: str) -> bool:
        v = self._model.variable(name)
        return v.domain.kind is DomainKind.BOOLEAN

    def check_literal(self, var: str, value: Value) -> Value:
        v = self._model.variable(var)
        if value not in v.domain:
            raise ExprError(f"literal {value!r} outside the domain of {var!r}")
        return value

    def names(self) -> frozenset[str]:
        return self._names


@dataclass(eq=True)
class Model:
    variables: tuple[Variable, ...]
    transitions: tuple[Transition, ...]
    # carried along for serialization round-trips and the service layer;
    # the kernel itself only reads variables/transitions
    meta: dict = field(default_factory=dict, compare=False, repr=False)
    _engine: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise ModelError(f"duplicate variable names: {sorted(dup)}")
        events = [t.event for t in self.transitions]
        dup = {e for e in events if events.count(e) > 1}
        if dup:
            raise ModelError(f"duplicate transition events: {sorted(dup)}")
        by_name = {v.name: v for v in self.variables}
        for t in self.transitions:
            for name in t.guard.variables():
                if name not in by_name:
                    raise ModelError(f"transition {t.event!r} guards unknown variable {name!r}")
            targets = set()
            for a in t.actions:
                if a.target not in by_name:
                    raise ModelError(f"transition {t.event!r} assigns unknown variable {a.target!r}")
                if a.target in targets:
                    raise ModelError(f"transition {t.event!r} assigns {a.target!r} twice")
                targets.add(a.target)
                if isinstance(a, Assign):
                    if a.value not in by_name[a.target].domain:
                        raise ModelError(
                            f"transition {t.event!r} assigns {a.value!r} outside the domain of {a.target!r}"
                        )
                else:
                    if a.source not in by_name:
                        raise ModelError(f"transition {t.event!r} copies unknown variable {a.source!r}")

    # --- lookups --------------------------------------------------------

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ModelError(f"no variable named {name!r}")

    def transition(self, event: str) -> Transition:
        for t in self.transitions:
            if t.event == event:
                return t
        raise ModelError(f"no transition with event {event!r}")

    def vocabulary(self) -> Vocabulary:
        return _ModelVocabulary(self)

    @property
    def var_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    # --- states ---------------------------------------------------------

    def initial_state(self) -> StateVec:
        return self.state({v.name: v.initial for v in self.variables})

    def state(self, assignment: Mapping[str, Value]) -> StateVec:
        names = self.var_names
        index = self._name_index()
        missing = [n for n in names if n not in assignment]
        if missing:
            raise ModelError(f"state is missing variables: {missing}")
        extra = [n for n in assignment if n not in index]
        if extra:
            raise ModelError(f"state has unknown variables: {extra}")
        vals = []
        for v in self.variables:
            val = assignment[v.name]
            if val not in v.domain:
                raise ModelError(f"value {val!r} outside the domain of {v.name!r}")
            vals.append(val)
        return StateVec(names, index, tuple(vals))

    def _name_index(self) -> dict[str, int]:
        eng = self.engine()
        return eng.index

    def engine(self):
        if self._engine is None:
            from .engine import CompiledModel

            object.__setattr__(self, "_engine", CompiledModel(self))
        return self._engine

    def state_space_size(self) -> int:
        n = 1
        for v in self.variables:
            n *= len(v.domain.values)
        return n


# --- operations ---------------------------------------------------------


def eval_predicate(p: Predicate, s: StateVec) -> bool:
    return eval_with(p, s)


def apply_actions(actions: tuple[Action, ...], s: StateVec, model: Model) -> StateVec:
    """All reads see the pre-transition state; writes land left to right."""
    changes: dict[str, Value] = {}
    for a in actions:
        if isinstance(a, Assign):
            changes[a.target] = a.value
        else:
            value = s[a.source]
            if value not in model.variable(a.target).domain:
                raise ModelError(
                    f"copied value {value!r} from {a.source!r} outside the domain of {a.target!r}"
                )
            changes[a.target] = value
    return s.updated(changes)


def fire(model: Model, t: Transition, s: StateVec) -> StateVec:
    if not eval_predicate(t.guard, s):
        raise DisabledTransitionError(f"transition {t.event!r} fired while disabled")
    return apply_actions(t.actions, s, model)


def enabled_transitions(
    model: Model,
    s: StateVec,
    classes: Iterable[TransitionClass] | None = None,
) -> tuple[Transition, ...]:
    """Enabled transitions in deterministic (resource, ability, event) order."""
    wanted = set(classes) if classes is not None else None
    out = [
        t
        for t in model.transitions
        if (wanted is None or t.klass in wanted) and eval_predicate(t.guard, s)
    ]
    out.sort(key=lambda t: t.sort_key)
    return tuple(out)


def sync_fixpoint(model: Model, s: StateVec) -> StateVec:
    """Close uncontrollable-sync transitions to a fixpoint.

    Well-formed sync sets converge in a handful of rounds; a repeated
    non-fixpoint state means the guards cycle and is reported as
    divergence rather than looping forever.
    """
    eng = model.engine()
    return eng.decode(eng.sync_fixpoint(eng.encode(s)))


def uncontrollable_closure(
    model: Model,
    s: StateVec,
    *,
    include_effects: bool = False,
    attributed: frozenset[str] | None = None,
) -> StateVec:
    """Close finish, sync and (optionally) effect transitions.

    Priority is finish > sync > effect so that a finish whose guard is
    true fires before a sync dual withdraws the executing flag it relies
    on.  ``attributed`` limits ability-owned effects to the named
    abilities; raw model effects always participate.
    """
    eng = model.engine()
    return eng.decode(
        eng.closure(eng.encode(s), include_effects=include_effects, attributed=attributed)
    )
