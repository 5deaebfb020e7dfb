"""Shared fixture builders and reference (oracle) implementations.

The reference functions here deliberately use the slow structural
evaluator on StateVec mappings, never the compiled engine, so tests can
cross-check both routes against each other.
"""

import itertools

from hypothesis import strategies as st

from sp.abilities import AbilityDecl, EffectDecl, StepDecl, compile_abilities
from sp.expr import parse_actions, parse_predicate
from sp.model import (
    Model,
    StateVec,
    Transition,
    TransitionClass,
    VarDomain,
    VarKind,
    Variable,
    apply_actions,
    eval_predicate,
)


def make_model(variables, transition_specs):
    """(event, guard_text, actions_text, klass, extras...) tuples to a Model."""
    probe = Model(tuple(variables), ())
    vocab = probe.vocabulary()
    ts = []
    for spec in transition_specs:
        event, guard, actions, klass = spec[:4]
        kw = spec[4] if len(spec) > 4 else {}
        ts.append(
            Transition(
                event,
                parse_predicate(guard, vocab),
                parse_actions(actions, vocab),
                klass,
                **kw,
            )
        )
    return Model(tuple(variables), tuple(ts))


def tool_variables():
    return (
        Variable("ti?", VarKind.MEASURED, VarDomain.boolean(), True,
                 resource="nutrunner", field_name="tool_is_idle"),
        Variable("tr?", VarKind.MEASURED, VarDomain.boolean(), False,
                 resource="nutrunner", field_name="tool_is_running_forward"),
        Variable("ttr?", VarKind.MEASURED, VarDomain.boolean(), False,
                 resource="nutrunner", field_name="programmed_torque_reached"),
        Variable("ti!", VarKind.OUTPUT, VarDomain.boolean(), True,
                 resource="nutrunner", field_name="set_tool_idle"),
        Variable("tr!", VarKind.OUTPUT, VarDomain.boolean(), False,
                 resource="nutrunner", field_name="run_tool_forward"),
        Variable("b̂", VarKind.ESTIMATED,
                 VarDomain.enumeration(["empty", "placed", "tightened"]), "empty"),
    )


def run_nut_decl():
    return AbilityDecl(
        name="runNut",
        symbol="rn",
        resource="nutrunner",
        enabled_when="!tr? && ti?",
        executing_when="tr? && !ti? && !ttr?",
        start=StepDecl("a_rn_i", "tr! := true, ti! := false"),
        finish=StepDecl("a_rn_e && ttr?", "ti! := true, tr! := false, b̂ := tightened"),
        starting_effects=(EffectDecl("tr! && !ti!", "tr? := true, ti? := false"),),
        executing_effects=(EffectDecl("tr? && !ti?", "ttr? := true"),),
    )


def tool_model():
    """Nut-running ability over the tool variables plus the controller
    response effect that returns the tool to idle."""
    base = tool_variables()
    aset = compile_abilities([run_nut_decl()], base)
    probe = Model(base, ())
    vocab = probe.vocabulary()
    idle_response = Transition(
        "nutrunner.idle_response",
        parse_predicate("ti! && !tr! && (!ti? || tr?)", vocab),
        parse_actions("ti? := true, tr? := false", vocab),
        TransitionClass.EFFECT,
        resource="nutrunner",
    )
    model = Model(base + aset.variables, (idle_response,) + aset.transitions)
    return aset, model


# --- reference semantics (oracle route) ---------------------------------


def ref_closure(model: Model, s: StateVec, attributed=frozenset()) -> StateVec:
    """Priority fixpoint finish > sync > executing effect, first
    state-changing transition in (resource, ability, event) order."""
    order = sorted(model.transitions, key=lambda t: t.sort_key)
    finishes = [t for t in order if t.klass is TransitionClass.FINISH]
    syncs = [t for t in order if t.klass is TransitionClass.SYNC]
    effects = [
        t for t in order
        if t.klass is TransitionClass.EFFECT and t.role != "effect_start"
    ]
    seen = {s}
    while True:
        nxt = None
        for group in (finishes, syncs, effects):
            for t in group:
                if (
                    group is effects
                    and t.ability
                    and attributed is not None
                    and t.ability not in attributed
                ):
                    continue
                if eval_predicate(t.guard, s):
                    s2 = apply_actions(t.actions, s, model)
                    if s2 != s:
                        nxt = s2
                        break
            if nxt is not None:
                break
        if nxt is None:
            return s
        assert nxt not in seen, "reference closure diverged"
        seen.add(nxt)
        s = nxt


def ref_step(model: Model, event: str, s: StateVec, started: set) -> StateVec | None:
    """Fire one controllable the way planning predicts it; None if disabled."""
    t = model.transition(event)
    if not eval_predicate(t.guard, s):
        return None
    if t.ability:
        started.add(t.ability)
    s = apply_actions(t.actions, s, model)
    if t.ability:
        for eff in sorted(model.transitions, key=lambda x: x.sort_key):
            if eff.role == "effect_start" and eff.ability == t.ability:
                if eval_predicate(eff.guard, s):
                    s2 = apply_actions(eff.actions, s, model)
                    if s2 != s:
                        s = s2
    return ref_closure(model, s, frozenset(started))


def goal_holds_on_trace(target, avoid, states) -> bool:
    """Quantifier form: some index satisfies the target and every
    earlier index was either avoid-free or already a target state."""
    n = len(states)
    return any(
        eval_predicate(target, states[i])
        and all(
            avoid is None
            or not eval_predicate(avoid, states[j])
            or eval_predicate(target, states[j])
            for j in range(i)
        )
        for i in range(n)
    )


def brute_force_plans(model, goals, s0, max_len, allowed=None):
    """Exhaustive minimal plans: (length, set of event tuples), or None."""
    order = sorted(model.transitions, key=lambda t: t.sort_key)
    events = [
        t.event
        for t in order
        if t.klass is TransitionClass.CONTROLLABLE
        and (allowed is None or t.event in allowed)
    ]
    for length in range(max_len + 1):
        achieved = set()
        for seq in itertools.product(events, repeat=length):
            s = ref_closure(model, s0, frozenset())
            trace = [s]
            started: set = set()
            ok = True
            for ev in seq:
                s = ref_step(model, ev, s, started)
                if s is None:
                    ok = False
                    break
                trace.append(s)
            if ok and all(goal_holds_on_trace(g.target, g.avoid, trace) for g in goals):
                achieved.add(seq)
        if achieved:
            return length, achieved
    return None


def lex_first(model, sequences):
    order = sorted(model.transitions, key=lambda t: t.sort_key)
    rank = {t.event: i for i, t in enumerate(order)}
    return min(sequences, key=lambda seq: tuple(rank[e] for e in seq))


def pred_strategy(names):
    """Random predicate source text over boolean variable names."""
    leaf = st.sampled_from([f"{n}" for n in names] + [f"!{n}" for n in names])

    def join(children):
        op = " && " if len(children) % 2 else " || "
        return "(" + op.join(children) + ")"

    return st.recursive(
        leaf, lambda s: st.lists(s, min_size=2, max_size=3).map(join), max_leaves=4
    )


def ref_reachable(model: Model) -> set[StateVec]:
    """Single-step reachability over every transition, reference route."""
    s0 = model.initial_state()
    seen = {s0}
    frontier = [s0]
    while frontier:
        s = frontier.pop()
        for t in model.transitions:
            if eval_predicate(t.guard, s):
                s2 = apply_actions(t.actions, s, model)
                if s2 not in seen:
                    seen.add(s2)
                    frontier.append(s2)
    return seen


def ref_bad_set(model: Model, forbidden, states) -> set[StateVec]:
    """Naive least fixpoint of the uncontrollable-backward closure."""
    bad = {s for s in states if any(eval_predicate(f, s) for f in forbidden)}
    changed = True
    while changed:
        changed = False
        for s in states:
            if s in bad:
                continue
            for t in model.transitions:
                if t.klass.controllable:
                    continue
                if eval_predicate(t.guard, s):
                    if apply_actions(t.actions, s, model) in bad:
                        bad.add(s)
                        changed = True
                        break
    return bad
