"""Scenario engine: file loading, directive triggers, verdict grading."""

import json
from pathlib import Path

import pytest

from sp.modelfile import load_model_file
from sp.scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    parse_scenario_doc,
    run_scenario,
)
from sp.synthesis import synthesize

MODEL = "projects/bolt_cover/model.yaml"
SCENARIOS = Path("projects/bolt_cover/scenarios")


@pytest.fixture(scope="module")
def spec():
    return load_model_file(MODEL)


@pytest.fixture(scope="module")
def refined(spec):
    return synthesize(spec.model, spec.forbidden).model


EXPECTED_STOP = {
    "nominal": "until",
    "robot_displaced": "until",
    "operator_desync": "until",
    "withhold_torque": "advisory",
}


@pytest.mark.parametrize("name", sorted(EXPECTED_STOP))
def test_shipped_scenarios_pass(spec, refined, name):
    sc = load_scenario(SCENARIOS / f"{name}.yaml", spec.model)
    verdict = run_scenario(spec, sc, model=refined)
    failing = [c for c in verdict["checks"] if not c["passed"]]
    assert verdict["passed"], failing
    assert verdict["stopped"] == EXPECTED_STOP[name]
    assert verdict["ticks"] < sc.max_ticks


def test_verdicts_are_bit_reproducible(spec, refined):
    sc = load_scenario(SCENARIOS / "robot_displaced.yaml", spec.model)
    a = run_scenario(spec, sc, model=refined)
    b = run_scenario(spec, sc, model=refined)
    assert a == b
    assert a["digest"] == b["digest"]
    # the digest covers the whole event log, not just the summary
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_different_scenarios_digest_differently(spec, refined):
    a = run_scenario(
        spec, load_scenario(SCENARIOS / "nominal.yaml", spec.model), model=refined
    )
    b = run_scenario(
        spec,
        load_scenario(SCENARIOS / "withhold_torque.yaml", spec.model),
        model=refined,
    )
    assert a["digest"] != b["digest"]


def minimal(**extra):
    doc = {"name": "t", "max_ticks": 5}
    doc.update(extra)
    return doc


def test_parse_rejects_unknown_verbs(spec):
    with pytest.raises(ScenarioError, match="unknown verb"):
        parse_scenario_doc(
            minimal(directives=[{"at_tick": 0, "do": ["levitate"]}]), spec.model
        )


def test_parse_rejects_double_triggers(spec):
    with pytest.raises(ScenarioError, match="exactly one trigger"):
        parse_scenario_doc(
            minimal(directives=[{"at_tick": 0, "when_advisory": True, "do": []}]),
            spec.model,
        )


def test_parse_rejects_forward_after_reference(spec):
    with pytest.raises(ScenarioError, match="earlier directive"):
        parse_scenario_doc(
            minimal(
                directives=[{"at_tick": 0, "after": 0, "do": ["enter_restart"]}]
            ),
            spec.model,
        )


def test_parse_rejects_bad_predicates(spec):
    with pytest.raises(ScenarioError, match="until"):
        parse_scenario_doc(minimal(until="no_such_var == 3"), spec.model)
    with pytest.raises(ScenarioError, match="invariants"):
        parse_scenario_doc(minimal(invariants=["?? nonsense"]), spec.model)


def test_parse_rejects_unclearable_displacement(spec):
    with pytest.raises(ScenarioError, match="un-happened"):
        parse_scenario_doc(
            minimal(
                directives=[
                    {
                        "at_tick": 0,
                        "do": [{"clear_fault": {"node": "ur10", "kind": "displace-robot"}}],
                    }
                ]
            ),
            spec.model,
        )


def test_parse_aggregates_problems(spec):
    doc = minimal(
        until="garbage ==",
        directives=[{"do": []}, {"at_tick": -3, "do": ["fly"]}],
        expect=[{"mystery": 1}],
    )
    with pytest.raises(ScenarioError) as exc:
        parse_scenario_doc(doc, spec.model)
    assert len(exc.value.problems) >= 4


def test_failed_expectation_grades_not_raises(spec, refined):
    sc = parse_scenario_doc(
        minimal(expect=[{"mode": "restart"}, {"state": "b̂ == tightened"}]),
        spec.model,
    )
    verdict = run_scenario(spec, sc, model=refined)
    assert not verdict["passed"]
    assert all(not c["passed"] for c in verdict["checks"])


def test_unreached_at_tick_directive_fails_verdict(spec, refined):
    sc = parse_scenario_doc(
        minimal(directives=[{"at_tick": 50, "do": ["enter_restart"]}]),
        spec.model,
    )
    verdict = run_scenario(spec, sc, model=refined)
    assert not verdict["passed"]
    assert any("never reached" in c["detail"] for c in verdict["checks"])


def test_rejected_operator_command_fails_verdict(spec, refined):
    # exit_restart in normal mode is an operator mistake; the verdict says so
    sc = parse_scenario_doc(
        minimal(directives=[{"at_tick": 0, "do": ["exit_restart"]}]),
        spec.model,
    )
    verdict = run_scenario(spec, sc, model=refined)
    assert not verdict["passed"]
    assert any(c["detail"] == "command rejected" for c in verdict["checks"])


def test_when_trigger_fires_on_state(spec, refined):
    sc = parse_scenario_doc(
        minimal(
            max_ticks=120,
            until='b̂ == placed',
            directives=[
                {"when": "opl!", "do": [{"fault": {"node": "ur10", "kind": "freeze"}}]}
            ],
            expect=[{"event": {"kind": "fault", "node": "ur10"}}],
        ),
        spec.model,
    )
    verdict = run_scenario(spec, sc, model=refined)
    assert verdict["passed"], verdict["checks"]
    assert verdict["stopped"] == "until"


def test_scenario_dataclass_shape(spec):
    sc = load_scenario(SCENARIOS / "robot_displaced.yaml", spec.model)
    assert isinstance(sc, Scenario)
    assert sc.name == "robot_displaced"
    assert sc.directives[0].trigger == ("at_tick", 45)
    assert sc.directives[2].after == 1
    assert len(sc.invariants) == 1
