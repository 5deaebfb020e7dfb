"""Ability declarations and their compilation into kernel transitions.

An ability wraps one resource-level action with a fixed lifecycle: three
booleans isEnabled / isExecuting / isFinished (``a_<sym>_i`` etc.), a
controllable start, an uncontrollable finish, sync transitions that keep
the lifecycle booleans equal to their guards (each declared sync gets an
auto-generated dual with the negated guard that resets the boolean), and
effect transitions describing how measured state is expected to evolve.
Effects never fire at runtime; they exist for offline planning.

Parameterized declarations are expanded at compile time: every
combination of parameter values becomes its own ability instance whose
guard/action sources have ``$param`` textually substituted before
parsing, so an instance can only ever mention its own literals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .expr import Assign, ExprError, negate, parse_actions, parse_predicate
from .model import (
    Model,
    StateVec,
    Transition,
    TransitionClass,
    VarDomain,
    VarKind,
    Variable,
    uncontrollable_closure,
)


class AbilityCompileError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True, slots=True)
class StepDecl:
    """Guard/action source text for a start or finish transition."""

    guard: str
    actions: str = ""


@dataclass(frozen=True, slots=True)
class EffectDecl:
    guard: str
    actions: str


@dataclass(frozen=True, slots=True)
class AbilityDecl:
    name: str
    symbol: str
    resource: str
    start: StepDecl
    finish: StepDecl | None = None
    enabled_when: str = ""
    executing_when: str = ""
    # guard source, or "auto" to derive the isFinished sync from the
    # finish guard; empty means no isFinished sync at all
    finished_when: str = ""
    starting_effects: tuple[EffectDecl, ...] = ()
    executing_effects: tuple[EffectDecl, ...] = ()
    restart_only: bool = False
    parameters: tuple[tuple[str, tuple[str, ...]], ...] = ()


@dataclass(frozen=True, slots=True)
class CompiledAbility:
    name: str
    decl_name: str
    symbol: str
    resource: str
    restart_only: bool
    bindings: tuple[tuple[str, str], ...]
    lifecycle: tuple[str, str, str]  # (a_i, a_e, a_f) variable names
    events: tuple[str, ...]

    @property
    def start_event(self) -> str:
        return f"{self.name}.start"

    @property
    def finish_event(self) -> str:
        return f"{self.name}.finish"

    @property
    def enabled_var(self) -> str:
        return self.lifecycle[0]

    @property
    def executing_var(self) -> str:
        return self.lifecycle[1]

    @property
    def finished_var(self) -> str:
        return self.lifecycle[2]


@dataclass
class AbilitySet:
    abilities: tuple[CompiledAbility, ...]
    variables: tuple[Variable, ...]
    transitions: tuple[Transition, ...]

    def by_name(self, name: str) -> CompiledAbility:
        for ab in self.abilities:
            if ab.name == name:
                return ab
        raise KeyError(name)

    def names(self) -> list[str]:
        return [ab.name for ab in self.abilities]

    def restart_only_events(self) -> frozenset[str]:
        return frozenset(
            ab.start_event for ab in self.abilities if ab.restart_only
        )


def _instances(decl: AbilityDecl) -> list[tuple[str, str, tuple[tuple[str, str], ...]]]:
    """(instance name, instance symbol, parameter bindings) triples."""
    if not decl.parameters:
        return [(decl.name, decl.symbol, ())]
    names = [p for p, _ in decl.parameters]
    out = []
    for combo in itertools.product(*(vals for _, vals in decl.parameters)):
        bindings = tuple(zip(names, combo))
        arglist = ", ".join(combo)
        iname = f"{decl.name}({arglist})"
        isym = "_".join((decl.symbol, *combo))
        out.append((iname, isym, bindings))
    return out


def _substitute(text: str, bindings: tuple[tuple[str, str], ...], problems: list[str], where: str) -> str:
    for pname, value in bindings:
        text = text.replace(f"${pname}", value)
    if "$" in text:
        stray = text[text.index("$") :].split()[0]
        problems.append(f"{where}: unbound parameter reference {stray!r}")
    return text


def _implies_enabled(guard, enabled_var: str, model_vars: dict[str, Variable]) -> bool:
    """Finite check that guard -> a_i over the guard's own support."""
    support = sorted(guard.variables() | {enabled_var})
    domains = []
    for name in support:
        v = model_vars.get(name)
        if v is None:
            return False
        domains.append(v.domain.values)
    total = 1
    for d in domains:
        total *= len(d)
        if total > 1 << 16:
            # fall back: require the atom a_i to appear in the guard text
            from .expr import Eq, iter_atoms

            return any(
                isinstance(a, Eq) and a.var == enabled_var and a.value is True
                for a in iter_atoms(guard)
            )
    from .expr import eval_with

    for combo in itertools.product(*domains):
        env = dict(zip(support, combo))
        if eval_with(guard, env) and env[enabled_var] is not True:
            return False
    return True


def compile_abilities(
    decls: list[AbilityDecl], base_variables: tuple[Variable, ...]
) -> AbilitySet:
    problems: list[str] = []
    seen_names: set[str] = set()
    for d in decls:
        if d.name in seen_names:
            problems.append(f"duplicate ability name {d.name!r}")
        seen_names.add(d.name)

    # lifecycle variables first so guards can reference any of them
    lifecycle_vars: list[Variable] = []
    planned: list[tuple[AbilityDecl, str, str, tuple[tuple[str, str], ...]]] = []
    for d in decls:
        for iname, isym, bindings in _instances(d):
            trio = (f"a_{isym}_i", f"a_{isym}_e", f"a_{isym}_f")
            for var_name in trio:
                lifecycle_vars.append(
                    Variable(var_name, VarKind.ABILITY_STATE, VarDomain.boolean(), False)
                )
            planned.append((d, iname, isym, bindings))

    all_vars = tuple(base_variables) + tuple(lifecycle_vars)
    names = {v.name for v in all_vars}
    if len(names) != len(all_vars):
        by_name: dict[str, int] = {}
        for v in all_vars:
            by_name[v.name] = by_name.get(v.name, 0) + 1
        clash = sorted(n for n, c in by_name.items() if c > 1)
        problems.append(f"lifecycle variables collide with declared ones: {clash}")
        raise AbilityCompileError(problems)

    probe = Model(all_vars, ())
    vocab = probe.vocabulary()
    var_map = {v.name: v for v in all_vars}

    def parse_pred(text: str, where: str):
        try:
            return parse_predicate(text, vocab)
        except ExprError as exc:
            problems.append(f"{where}: {exc}")
            return None

    def parse_acts(text: str, where: str):
        try:
            return parse_actions(text, vocab)
        except ExprError as exc:
            problems.append(f"{where}: {exc}")
            return ()

    compiled: list[CompiledAbility] = []
    transitions: list[Transition] = []
    for d, iname, isym, bindings in planned:
        a_i, a_e, a_f = f"a_{isym}_i", f"a_{isym}_e", f"a_{isym}_f"
        events: list[str] = []

        def sub(text: str, where: str) -> str:
            return _substitute(text, bindings, problems, where)

        def emit(t: Transition):
            transitions.append(t)
            events.append(t.event)

        sync_specs = [
            ("enabled", d.enabled_when, a_i),
            ("executing", d.executing_when, a_e),
        ]
        finished_when = d.finished_when
        if finished_when == "auto":
            if d.finish is None:
                problems.append(f"{iname}: finished_when auto needs a finish transition")
                finished_when = ""
            else:
                finished_when = d.finish.guard
        if finished_when:
            sync_specs.append(("finished", finished_when, a_f))

        for label, guard_src, target in sync_specs:
            if not guard_src:
                continue
            where = f"{iname}.sync_{label}"
            g = parse_pred(sub(guard_src, where), where)
            if g is None:
                continue
            emit(
                Transition(
                    f"{iname}.sync_{label}",
                    g,
                    (Assign(target, True),),
                    TransitionClass.SYNC,
                    resource=d.resource,
                    ability=iname,
                    role="sync",
                    pair=target,
                )
            )
            emit(
                Transition(
                    f"{iname}.sync_{label}_dual",
                    negate(g),
                    (Assign(target, False),),
                    TransitionClass.SYNC,
                    resource=d.resource,
                    ability=iname,
                    role="sync_dual",
                    pair=target,
                )
            )

        where = f"{iname}.start"
        start_guard = parse_pred(sub(d.start.guard, where), where)
        start_actions = parse_acts(sub(d.start.actions, where), where)
        if start_guard is not None:
            if not _implies_enabled(start_guard, a_i, var_map):
                problems.append(
                    f"{iname}: start guard does not imply {a_i} (add the isEnabled conjunct)"
                )
            emit(
                Transition(
                    f"{iname}.start",
                    start_guard,
                    start_actions,
                    TransitionClass.CONTROLLABLE,
                    resource=d.resource,
                    ability=iname,
                    role="start",
                )
            )

        if d.finish is not None:
            where = f"{iname}.finish"
            fin_guard = parse_pred(sub(d.finish.guard, where), where)
            fin_actions = parse_acts(sub(d.finish.actions, where), where)
            if fin_guard is not None:
                emit(
                    Transition(
                        f"{iname}.finish",
                        fin_guard,
                        fin_actions,
                        TransitionClass.FINISH,
                        resource=d.resource,
                        ability=iname,
                        role="finish",
                    )
                )

        for role, decls_ in (("effect_start", d.starting_effects), ("effect_exec", d.executing_effects)):
            for idx, eff in enumerate(decls_):
                suffix = "" if idx == 0 else f"_{idx + 1}"
                where = f"{iname}.{role}{suffix}"
                g = parse_pred(sub(eff.guard, where), where)
                acts = parse_acts(sub(eff.actions, where), where)
                if g is None:
                    continue
                emit(
                    Transition(
                        f"{iname}.{role}{suffix}",
                        g,
                        acts,
                        TransitionClass.EFFECT,
                        resource=d.resource,
                        ability=iname,
                        role=role,
                    )
                )

        compiled.append(
            CompiledAbility(
                name=iname,
                decl_name=d.name,
                symbol=isym,
                resource=d.resource,
                restart_only=d.restart_only,
                bindings=bindings,
                lifecycle=(a_i, a_e, a_f),
                events=tuple(events),
            )
        )

    # only effect transitions may write measured variables
    for t in transitions:
        if t.klass is TransitionClass.EFFECT:
            continue
        for a in t.actions:
            if var_map[a.target].kind is VarKind.MEASURED:
                problems.append(
                    f"{t.event}: writes measured variable {a.target!r} "
                    "(only effects model measured evolution)"
                )

    if problems:
        raise AbilityCompileError(problems)
    return AbilitySet(tuple(compiled), tuple(lifecycle_vars), tuple(transitions))


def status(ability: CompiledAbility, s: StateVec) -> str:
    """finished > executing > enabled > idle."""
    a_i, a_e, a_f = ability.lifecycle
    if s[a_f] is True:
        return "finished"
    if s[a_e] is True:
        return "executing"
    if s[a_i] is True:
        return "enabled"
    return "idle"


def simulate(model: Model, ability: CompiledAbility, s: StateVec) -> StateVec:
    """Optimistic post-state of running the ability to completion.

    Fires the start (after an initial sync/finish closure so lifecycle
    booleans are current), applies its starting effects, then closes
    finish/sync/effect transitions with only this ability's executing
    effects attributed.
    """
    eng = model.engine()
    enc = eng.closure(eng.encode(s), include_effects=False)
    start = eng.by_event[ability.start_event]
    enc = eng.fire(start, enc)
    enc = eng.apply_starting_effects(enc, ability.name)
    enc = eng.closure(enc, include_effects=True, attributed=frozenset([ability.name]))
    return eng.decode(enc)
