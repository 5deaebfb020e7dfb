"""Kernel semantics: predicates, firing, deterministic enablement, sync closure."""

from __future__ import annotations

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from sp.expr import (
    Assign,
    Copy,
    Eq,
    EqVar,
    Ne,
    Not,
    TOP,
    And,
    Or,
    format_predicate,
    parse_actions,
    parse_predicate,
)
from sp.model import (
    DisabledTransitionError,
    DivergenceError,
    Model,
    ModelError,
    Transition,
    TransitionClass,
    VarDomain,
    VarKind,
    Variable,
    enabled_transitions,
    eval_predicate,
    fire,
    sync_fixpoint,
)


def boolvar(name: str, initial: bool = False, kind: VarKind = VarKind.MEASURED) -> Variable:
    return Variable(name, kind, VarDomain.boolean(), initial)


def make_tool_model() -> Model:
    """Nutrunner-style fragment: two measured flags, two outputs, one
    enabled-lifecycle boolean kept by a sync pair."""
    variables = (
        boolvar("tr?", False),
        boolvar("ti?", True),
        boolvar("tr!", False, VarKind.OUTPUT),
        boolvar("ti!", True, VarKind.OUTPUT),
        boolvar("a_rn_i", False, VarKind.ABILITY_STATE),
    )
    vocab_bools = {v.name for v in variables}

    def pred(text: str):
        from sp.expr import loose_vocabulary

        return parse_predicate(text, loose_vocabulary(vocab_bools))

    def acts(text: str):
        from sp.expr import loose_vocabulary

        return parse_actions(text, loose_vocabulary(vocab_bools))

    transitions = (
        Transition(
            "runNut.sync_enabled",
            pred("!tr? && ti?"),
            acts("a_rn_i := true"),
            TransitionClass.SYNC,
            resource="nutrunner",
            ability="runNut",
            role="sync",
            pair="a_rn_i",
        ),
        Transition(
            "runNut.sync_enabled_dual",
            pred("!(!tr? && ti?)"),
            acts("a_rn_i := false"),
            TransitionClass.SYNC,
            resource="nutrunner",
            ability="runNut",
            role="sync_dual",
            pair="a_rn_i",
        ),
        Transition(
            "runNut.start",
            pred("a_rn_i"),
            acts("tr! := true, ti! := false"),
            TransitionClass.CONTROLLABLE,
            resource="nutrunner",
            ability="runNut",
            role="start",
        ),
    )
    return Model(variables, transitions)


def test_eval_predicate_tool_idle():
    m = make_tool_model()
    s = m.initial_state()
    guard = m.transition("runNut.sync_enabled").guard
    assert eval_predicate(guard, s) is True
    s2 = s.updated({"tr?": True})
    assert eval_predicate(guard, s2) is False


def test_fire_start_actions():
    m = make_tool_model()
    s = m.initial_state().updated({"a_rn_i": True})
    out = fire(m, m.transition("runNut.start"), s)
    assert out["tr!"] is True
    assert out["ti!"] is False
    # untouched variables keep their values
    assert out["tr?"] is False and out["ti?"] is True


def test_fire_disabled_is_contract_violation():
    m = make_tool_model()
    s = m.initial_state()  # a_rn_i false
    with pytest.raises(DisabledTransitionError):
        fire(m, m.transition("runNut.start"), s)


def test_sync_fixpoint_sets_enabled_flag():
    m = make_tool_model()
    s = sync_fixpoint(m, m.initial_state())
    assert s["a_rn_i"] is True


def test_sync_fixpoint_dual_withdraws_flag():
    m = make_tool_model()
    s = m.initial_state().updated({"tr?": True, "a_rn_i": True})
    out = sync_fixpoint(m, s)
    assert out["a_rn_i"] is False


def test_sync_fixpoint_postcondition_pairs_match_guards():
    m = make_tool_model()
    for tr in (False, True):
        for ti in (False, True):
            for a in (False, True):
                s = m.initial_state().updated({"tr?": tr, "ti?": ti, "a_rn_i": a})
                out = sync_fixpoint(m, s)
                want = (not tr) and ti
                assert out["a_rn_i"] is want


def test_sync_divergence_detected():
    x = boolvar("x")
    from sp.expr import loose_vocabulary

    v = loose_vocabulary({"x"})
    m = Model(
        (x,),
        (
            Transition("flip_up", parse_predicate("!x", v), parse_actions("x := true", v), TransitionClass.SYNC),
            Transition("flip_dn", parse_predicate("x", v), parse_actions("x := false", v), TransitionClass.SYNC),
        ),
    )
    with pytest.raises(DivergenceError):
        sync_fixpoint(m, m.initial_state())


def test_actions_read_pre_transition_values():
    from sp.expr import loose_vocabulary

    v = loose_vocabulary({"x", "y"})
    m = Model(
        (boolvar("x", True), boolvar("y", False)),
        (
            Transition(
                "swap",
                TOP,
                (Copy("x", "y"), Copy("y", "x")),
                TransitionClass.CONTROLLABLE,
            ),
        ),
    )
    out = fire(m, m.transition("swap"), m.initial_state())
    assert out["x"] is False and out["y"] is True


def test_enabled_transitions_deterministic_order():
    """Order is (resource, ability, event) regardless of declaration order."""
    from sp.expr import loose_vocabulary

    v = loose_vocabulary({"x"})
    ts = [
        Transition("zeta", TOP, (), TransitionClass.CONTROLLABLE, resource="b", ability="m"),
        Transition("alpha", TOP, (), TransitionClass.CONTROLLABLE, resource="b", ability="m"),
        Transition("mid", TOP, (), TransitionClass.CONTROLLABLE, resource="a", ability="z"),
        Transition("off", parse_predicate("x", v), (), TransitionClass.CONTROLLABLE, resource="a", ability="a"),
    ]
    m = Model((boolvar("x"),), tuple(ts))
    got = [t.event for t in enabled_transitions(m, m.initial_state())]
    assert got == ["mid", "alpha", "zeta"]


def test_enabled_transitions_class_filter():
    m = make_tool_model()
    s = m.initial_state().updated({"a_rn_i": True, "tr?": True})
    only_ctrl = enabled_transitions(m, s, classes=[TransitionClass.CONTROLLABLE])
    assert [t.event for t in only_ctrl] == ["runNut.start"]


def test_enabled_transitions_truth_table_oracle():
    """Exhaustive 3-boolean check against a brute-force dict evaluator."""
    from sp.expr import eval_with, loose_vocabulary

    v = loose_vocabulary({"p", "q", "r"})
    guards = {
        "t1": parse_predicate("p && !q", v),
        "t2": parse_predicate("q || r", v),
        "t3": parse_predicate("!(p || (q && !r))", v),
    }
    m = Model(
        (boolvar("p"), boolvar("q"), boolvar("r")),
        tuple(
            Transition(name, g, (), TransitionClass.CONTROLLABLE)
            for name, g in guards.items()
        ),
    )
    for bits in range(8):
        assign = {
            "p": bool(bits & 1),
            "q": bool(bits & 2),
            "r": bool(bits & 4),
        }
        s = m.state(assign)
        want = sorted(name for name, g in guards.items() if eval_with(g, assign))
        got = [t.event for t in enabled_transitions(m, s)]
        assert got == want


def test_domain_validation():
    with pytest.raises(ModelError):
        VarDomain.enumeration([])
    with pytest.raises(ModelError):
        VarDomain.bounded_integer(3, 1)
    with pytest.raises(ModelError):
        Variable("x", VarKind.MEASURED, VarDomain.enumeration(["a", "b"]), "c")
    d = VarDomain.bounded_integer(-1, 2)
    assert 0 in d and -1 in d and 2 in d and 3 not in d and True not in d


def test_model_rejects_duplicate_events_and_unknown_vars():
    from sp.expr import loose_vocabulary

    v = loose_vocabulary({"x"})
    x = boolvar("x")
    t = Transition("e", TOP, (), TransitionClass.CONTROLLABLE)
    with pytest.raises(ModelError):
        Model((x,), (t, t))
    with pytest.raises(ModelError):
        Model((x,), (Transition("e", parse_predicate("x", v), (Assign("y", True),), TransitionClass.CONTROLLABLE),))


def test_statevec_mapping_behavior():
    m = make_tool_model()
    s = m.initial_state()
    assert s == {"tr?": False, "ti?": True, "tr!": False, "ti!": True, "a_rn_i": False}
    assert len(s) == 5
    assert set(s) == {"tr?", "ti?", "tr!", "ti!", "a_rn_i"}
    s2 = s.updated({"tr?": True})
    assert s != s2 and hash(s) != hash(s2) or s2["tr?"] is True
    with pytest.raises(ModelError):
        m.state({"tr?": False})  # missing variables


# --- random predicate property: engine agrees with an independent route ---

_VARS = [f"v{i}" for i in range(12)]


def _pred_strategy():
    atoms = st.sampled_from(_VARS).map(lambda n: Eq(n, True)) | st.sampled_from(_VARS).map(
        lambda n: Eq(n, False)
    )
    return st.recursive(
        atoms,
        lambda children: st.one_of(
            st.tuples(children).map(lambda c: Not(c[0])),
            st.lists(children, min_size=2, max_size=3).map(lambda cs: And(tuple(cs))),
            st.lists(children, min_size=2, max_size=3).map(lambda cs: Or(tuple(cs))),
        ),
        max_leaves=12,
    )


def _python_expr(p) -> str:
    """Independent oracle: render to a Python boolean expression."""
    if isinstance(p, Eq):
        return f"({p.var} == {p.value})"
    if isinstance(p, Not):
        return f"(not {_python_expr(p.child)})"
    if isinstance(p, And):
        return "(" + " and ".join(_python_expr(c) for c in p.children) + ")"
    if isinstance(p, Or):
        return "(" + " or ".join(_python_expr(c) for c in p.children) + ")"
    raise AssertionError(p)


@settings(max_examples=200, deadline=None)
@given(p=_pred_strategy(), bits=st.integers(min_value=0, max_value=2**12 - 1))
def test_predicate_eval_matches_python_oracle(p, bits):
    assign = {name: bool(bits >> i & 1) for i, name in enumerate(_VARS)}
    m = Model(
        tuple(boolvar(n, assign[n]) for n in _VARS),
        (Transition("probe", p, (), TransitionClass.CONTROLLABLE),),
    )
    s = m.initial_state()
    safe = {name.replace("v", "v_"): val for name, val in assign.items()}
    oracle = eval(_python_expr(p).replace("v", "v_"), {}, safe)
    assert eval_predicate(p, s) == oracle
    # the compiled engine agrees with the tree walker
    eng = m.engine()
    assert eng.by_event["probe"].guard(eng.encode(s)) == oracle


def test_predicate_roundtrip_through_text():
    from sp.expr import loose_vocabulary

    v = loose_vocabulary({"a", "b", "up!"}, {"pose"})
    cases = [
        "a && !b",
        "a || b && !a",
        "!(a || b)",
        "up! == BP",
        "pose != HOME",
        "pose == pose",
        "a == false",
        "true",
        "false",
    ]
    for text in cases:
        p = parse_predicate(text, v)
        rendered = format_predicate(p, v.names())
        again = parse_predicate(rendered, v)
        assert again == p, (text, rendered)


def test_suffix_identifier_tokenizing():
    from sp.expr import loose_vocabulary

    v = loose_vocabulary(set(), {"up!", "b̂"})
    p = parse_predicate("up!=BP && b̂ == placed", v)
    assert p == And((Eq("up!", "BP"), Eq("b̂", "placed")))


def test_action_parse_and_format():
    from sp.expr import format_actions, loose_vocabulary

    v = loose_vocabulary({"x", "y"}, {"pose", "prev"})
    acts = parse_actions("x := true, pose := prev, y := false", v)
    assert acts == (Assign("x", True), Copy("pose", "prev"), Assign("y", False))
    assert format_actions(acts, v.names()) == "x := true, pose := prev, y := false"
    from sp.expr import ExprError

    with pytest.raises(ExprError):
        parse_actions("x := true, x := false", v)
