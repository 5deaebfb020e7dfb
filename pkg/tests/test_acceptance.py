"""End-to-end acceptance for the whole stack.

Each test pins one externally visible property: safety of the refined
loop, permissiveness of the refinement, minimality of plans, the three
canonical cell runs, pipeline fidelity, and kernel invariants.  Oracles
here are deliberately independent routes (structural evaluation,
forward-successor sweeps, exhaustive sequence enumeration), never the
code path under test.  Runtime budgets are asserted alongside the
functional claims so a performance regression fails loudly.
"""

import json
import random
import time

import pytest

from helpers import (
    brute_force_plans,
    ref_bad_set,
    ref_reachable,
)
from sp.bus import Broker, canonical_json
from sp.expr import parse_actions, parse_predicate
from sp.model import (
    Model,
    Transition,
    TransitionClass,
    VarDomain,
    VarKind,
    Variable,
    apply_actions,
    eval_predicate,
)
from sp.modelfile import load_model_file
from sp.pipelines import InboundRunner, OutboundRunner
from sp.planner import Goal, plan
from sp.runner import MODE_NORMAL, Executor
from sp.simnodes import FAULT_DISPLACE, FAULT_WITHHOLD, SimCell
from sp.synthesis import (
    SynthesisInfeasible,
    closed_loop_states,
    synthesize,
)
from sp.trace import make_plan_trace, make_run_trace, replay_trace

MODEL = "projects/bolt_cover/model.yaml"

# run logs stashed by the scenario tests so the invariant test can
# replay every trace this suite produced
RUN_LOGS: dict[str, list[dict]] = {}


@pytest.fixture(scope="module")
def spec():
    return load_model_file(MODEL)


@pytest.fixture(scope="module")
def result(spec):
    return synthesize(spec.model, spec.forbidden)


@pytest.fixture(scope="module")
def refined(result):
    return result.model


class Rig:
    def __init__(self, spec, model):
        self.now = 0
        self.broker = Broker(now_ms=lambda: self.now)
        self.cell = SimCell(spec, self.broker)
        self.exe = Executor(spec, model, self.broker)

    def tick(self, n=1):
        for _ in range(n):
            self.now += 10
            self.cell.step(self.now)
            self.exe.run_tick(self.now)

    def run_until(self, cond, limit=2000):
        for _ in range(limit):
            if cond(self.exe):
                return True
            self.tick()
        return cond(self.exe)

    def docs(self):
        return [e.to_doc() for e in self.exe.log.all()]


def finished(exe):
    v = exe.state
    return v["b̂"] == "tightened" and v["ti?"] and not v["tr?"]


def assert_no_restart_plans_in_normal_mode(spec, docs):
    restart_events = set(spec.abilities.restart_only_events())
    changes = sorted(
        (d["tick"], d["data"]["mode"]) for d in docs if d["kind"] == "mode-change"
    )

    def mode_at(t):
        m = MODE_NORMAL
        for ct, cm in changes:
            if ct <= t:
                m = cm
        return m

    for d in docs:
        if d["kind"] == "plan-adopted" and mode_at(d["tick"]) == MODE_NORMAL:
            assert not restart_events & set(d["data"]["events"]), d


# --- 1: the refined loop cannot reach a forbidden state -----------------


def test_01_refined_loop_never_reaches_forbidden(spec):
    t0 = time.perf_counter()
    result = synthesize(spec.model, spec.forbidden)
    assert len(result.reachable) <= 100_000

    base_eng = spec.model.engine()
    forb = [base_eng.compile_predicate(p) for p in spec.forbidden]

    unsafe = closed_loop_states(spec.model, include_intermediate=True)
    base_hits = sum(1 for s in unsafe if any(f(s) for f in forb))
    assert base_hits >= 1

    ref_eng = result.model.engine()
    forb_ref = [ref_eng.compile_predicate(p) for p in spec.forbidden]
    safe = closed_loop_states(result.model, include_intermediate=True)
    refined_hits = sum(1 for s in safe if any(f(s) for f in forb_ref))
    assert refined_hits == 0

    dt = time.perf_counter() - t0
    assert dt < 10.0, f"exploration took {dt:.1f}s"
    print(f"safety: 0/{len(safe)} refined vs {base_hits}/{len(unsafe)} bare ({dt:.1f}s)")


# --- 2: refinement is maximally permissive ------------------------------


def _random_bool_model(rng, *, monotone_unc):
    n_vars = rng.randint(3, 8)
    names = [f"v{i}" for i in range(n_vars)]
    variables = tuple(
        Variable(n, VarKind.ESTIMATED, VarDomain.boolean(), rng.random() < 0.5)
        for n in names
    )
    vocab = Model(variables, ()).vocabulary()

    def rand_pred():
        k = rng.randint(1, 3)
        lits = [
            ("!" if rng.random() < 0.5 else "") + rng.choice(names) for _ in range(k)
        ]
        return (" && " if rng.random() < 0.6 else " || ").join(lits)

    def rand_actions(monotone):
        targets = rng.sample(names, rng.randint(1, 2))
        if monotone:
            return ", ".join(f"{t} := true" for t in targets)
        return ", ".join(
            f"{t} := {'true' if rng.random() < 0.5 else 'false'}" for t in targets
        )

    n_trans = rng.randint(4, 12)
    ts = []
    for i in range(n_trans):
        ctrl = i == 0 or rng.random() < 0.5
        ts.append(
            Transition(
                f"e{i}",
                parse_predicate(rand_pred(), vocab),
                parse_actions(rand_actions(monotone_unc and not ctrl), vocab),
                TransitionClass.CONTROLLABLE if ctrl else TransitionClass.EFFECT,
            )
        )
    return Model(variables, tuple(ts)), vocab, rand_pred


def _forward_fixpoint_bad(eng, reach, forb_fns):
    """Oracle bad set: sweep a forward-successor map to fixpoint.

    Distinct route from synthesis, which walks a predecessor map with a
    worklist; this recomputes from successor edges until stable.
    """
    unc_succ = {}
    unc = [ct for ct in eng.transitions if not ct.ref.klass.controllable]
    for s in reach:
        nxt = []
        for ct in unc:
            if ct.guard(s):
                s2 = ct.apply(s)
                if s2 != s:
                    nxt.append(s2)
        unc_succ[s] = tuple(nxt)
    bad = {s for s in reach if any(f(s) for f in forb_fns)}
    while True:
        grown = {
            s
            for s in reach
            if s not in bad and any(s2 in bad for s2 in unc_succ[s])
        }
        if not grown:
            return bad
        bad |= grown


def test_02_refinement_is_maximally_permissive(spec, result):
    t0 = time.perf_counter()

    # full project: oracle bad set and per-state enablement equality
    eng = spec.model.engine()
    forb = [eng.compile_predicate(p) for p in spec.forbidden]
    oracle_bad = _forward_fixpoint_bad(eng, result.reachable, forb)
    assert oracle_bad == set(result.bad)

    ref_eng = result.model.engine()
    for ct in eng.controllables:
        rct = ref_eng.by_event[ct.ref.event]
        for s in result.reachable:
            want = ct.guard(s) and ct.apply(s) not in oracle_bad
            assert rct.guard(s) == want, (ct.ref.event, s)

    # randomized models, structural-evaluator oracle
    infeasible = 0
    for i in range(100):
        rng = random.Random(5200 + i)
        model, vocab, rand_pred = _random_bool_model(rng, monotone_unc=False)
        # bias forbidden predicates away from the initial state so most
        # models are feasible and actually exercise the refinement
        s0 = model.initial_state()
        forbidden = []
        for _ in range(rng.randint(1, 2)):
            text = rand_pred()
            for _ in range(4):
                if not eval_predicate(parse_predicate(text, vocab), s0):
                    break
                text = rand_pred()
            forbidden.append(parse_predicate(text, vocab))
        reach_ref = ref_reachable(model)
        bad_ref = ref_bad_set(model, forbidden, reach_ref)
        try:
            res = synthesize(model, forbidden)
        except SynthesisInfeasible:
            assert model.initial_state() in bad_ref
            infeasible += 1
            continue
        meng = model.engine()
        assert {meng.decode(s) for s in res.reachable} == reach_ref
        assert {meng.decode(s) for s in res.bad} == bad_ref
        reng = res.model.engine()
        ctrl = [t for t in model.transitions if t.klass.controllable]
        for sv in reach_ref:
            enc = reng.encode(sv)
            for t in ctrl:
                want = (
                    eval_predicate(t.guard, sv)
                    and apply_actions(t.actions, sv, model) not in bad_ref
                )
                assert reng.by_event[t.event].guard(enc) == want, (t.event, dict(sv))

    dt = time.perf_counter() - t0
    assert dt < 60.0, f"took {dt:.1f}s"
    print(f"permissiveness: project + 100 random models ({infeasible} infeasible) ({dt:.1f}s)")


# --- 3: plans are minimal, no-plan answers agree ------------------------


def test_03_planner_minimality_matches_exhaustive_oracle():
    t0 = time.perf_counter()
    bound = 4
    planned = no_plan = 0
    for i in range(100):
        rng = random.Random(7300 + i)
        model, vocab, rand_pred = _random_bool_model(rng, monotone_unc=True)
        assert len(ref_reachable(model)) <= 10_000
        target = parse_predicate(rand_pred(), vocab)
        avoid = parse_predicate(rand_pred(), vocab) if rng.random() < 0.3 else None
        goals = [Goal("g", target, avoid)]
        mine = plan(model, goals, model.initial_state(), bound=bound)
        oracle = brute_force_plans(model, goals, model.initial_state(), bound)
        if oracle is None:
            assert mine is None, [e for e in mine.events]
            no_plan += 1
        else:
            length, sequences = oracle
            assert mine is not None, f"oracle found length {length}"
            assert len(mine.events) == length
            assert tuple(mine.events) in sequences
            planned += 1
    dt = time.perf_counter() - t0
    assert dt < 120.0, f"took {dt:.1f}s"
    assert planned and no_plan  # both outcomes exercised
    print(f"minimality: {planned} planned, {no_plan} agreed-unreachable ({dt:.1f}s)")


# --- 4: nominal run on the simulated cell -------------------------------


def test_04_nominal_run_completes_with_synthesized_ordering(spec, refined):
    t0 = time.perf_counter()
    rig = Rig(spec, refined)
    tap = rig.broker.subscribe("/ur10/cmd", capacity=4096)
    bp_ticks = []
    for _ in range(300):
        rig.tick()
        bp_ticks += [
            rig.exe.tick_index
            for e in tap.poll()
            if e.payload.get("target_pose") == "BP"
        ]
        if finished(rig.exe):
            break
    assert finished(rig.exe)
    assert rig.exe.state["ti?"] is True
    assert rig.cell.world.bolts == "tight"
    assert all(p == "done" for p in rig.exe.phases.values())

    run_tick = next(
        e.tick
        for e in rig.exe.log.of_kind("ability-started")
        if e.data["ability"] == "runNut"
    )
    assert bp_ticks and run_tick < min(bp_ticks)

    # bit-level determinism of a second run
    rig2 = Rig(spec, refined)
    rig2.run_until(finished, limit=300)
    assert json.dumps(rig2.docs(), sort_keys=True) == json.dumps(
        rig.docs(), sort_keys=True
    )
    assert dict(rig2.exe.state) == dict(rig.exe.state)

    assert_no_restart_plans_in_normal_mode(spec, rig.docs())
    RUN_LOGS["nominal"] = rig.docs()
    dt = time.perf_counter() - t0
    assert dt < 5.0, f"took {dt:.1f}s"
    print(f"nominal: tool tick {run_tick} < first arm-in command tick {min(bp_ticks)} ({dt:.1f}s)")


# --- 5: displaced-arm restart flow --------------------------------------


def test_05_displaced_arm_recovery_begins_with_return_move(spec, refined):
    t0 = time.perf_counter()
    rig = Rig(spec, refined)
    rig.run_until(
        lambda e: any(
            r.data["ability"] == "moveToPosition(BP)"
            for r in e.log.of_kind("ability-started")
        ),
        limit=200,
    )
    rig.tick(15)
    rig.cell.ur10.displace()
    rig.exe.note_fault({"node": "ur10", "kind": FAULT_DISPLACE})
    assert rig.run_until(lambda e: e.advisory is not None, limit=600)
    advisory_tick = rig.exe.tick_index

    rig.exe.enter_restart()
    rig.exe.reset_operation("TightenBoltPair")
    assert rig.run_until(lambda e: e.phases["TightenBoltPair"] == "idle", limit=600)
    rig.exe.exit_restart()
    assert rig.run_until(finished, limit=600)

    reset_plan = next(
        e.data["events"]
        for e in rig.exe.log.of_kind("plan-adopted")
        if e.tick >= advisory_tick
    )
    assert reset_plan[0] == "moveToPrevious.start"
    assert rig.cell.world.bolts == "tight"

    assert_no_restart_plans_in_normal_mode(spec, rig.docs())
    RUN_LOGS["displaced"] = rig.docs()
    dt = time.perf_counter() - t0
    assert dt < 5.0, f"took {dt:.1f}s"
    print(f"displaced: reset plan {list(reset_plan)}, recovered ({dt:.1f}s)")


# --- 6: belief desync restart flow --------------------------------------


def test_06_belief_desync_recovery_replaces_before_tightening(spec, refined):
    t0 = time.perf_counter()
    rig = Rig(spec, refined)
    rig.cell.operator.set_fault(FAULT_WITHHOLD)
    assert rig.run_until(lambda e: e.advisory is not None, limit=600)
    assert rig.exe.state["b̂"] == "placed" and rig.cell.world.bolts == "absent"

    rig.exe.enter_restart()
    rig.exe.sync_estimated({"b̂": "empty"})
    rig.exe.reset_operation("TightenBoltPair")
    rig.cell.operator.clear_fault(FAULT_WITHHOLD)
    assert rig.run_until(lambda e: e.phases["TightenBoltPair"] == "idle", limit=600)
    rig.exe.exit_restart()
    assert rig.run_until(finished, limit=600)

    replan = next(
        tuple(e.data["events"])
        for e in rig.exe.log.of_kind("plan-adopted")
        if "placeBolt.start" in e.data["events"] and len(e.data["events"]) > 1
    )
    assert "placeBolt.start" in replan
    replace_tick = max(
        e.tick
        for e in rig.exe.log.of_kind("ability-started")
        if e.data["ability"] == "placeBolt"
    )
    tighten_ticks = [
        e.tick
        for e in rig.exe.log.of_kind("ability-finished")
        if e.data["ability"] == "runNut"
    ]
    assert tighten_ticks and replace_tick < min(tighten_ticks)
    assert rig.cell.world.bolts == "tight"

    assert_no_restart_plans_in_normal_mode(spec, rig.docs())
    RUN_LOGS["desync"] = rig.docs()
    dt = time.perf_counter() - t0
    assert dt < 5.0, f"took {dt:.1f}s"
    print(f"desync: replan {list(replan)}, replaced then tightened ({dt:.1f}s)")


# --- 7: pipeline fidelity ------------------------------------------------

# frozen pairing the inbound auto-map must reproduce, field -> variable
DECLARED_PAIRING = {
    "/nutrunner/state": {
        "tool_is_idle": "ti?",
        "tool_is_running_forward": "tr?",
        "programmed_torque_reached": "ttr?",
    },
    "/rsp/state": {"robot_connected_to_smart_tool": "rc?"},
    "/operator/state": {"available": "oa?", "place_ack": "opl?"},
}


def test_07_pipelines_map_tick_and_discretize_faithfully(spec):
    t0 = time.perf_counter()
    rng = random.Random(41)

    # inbound auto-map, bit-exact against the frozen pairing
    now = 0
    broker = Broker(now_ms=lambda: now)
    for schema in spec.topics:
        broker.declare_topic(schema)
    by_name = {p.name: p for p in spec.inbound}
    for pipe_name, topic in (
        ("nut_state", "/nutrunner/state"),
        ("rsp_state", "/rsp/state"),
        ("operator_state", "/operator/state"),
    ):
        runner = InboundRunner(by_name[pipe_name], spec.model, broker)
        pairing = DECLARED_PAIRING[topic]
        for _ in range(100):
            payload = {f: rng.random() < 0.5 for f in pairing}
            broker.publish(topic, payload, "sim")
            updates = runner.poll()
            assert updates == {var: payload[f] for f, var in pairing.items()}

    # outbound ticker: 100 ms cadence over 10 virtual seconds
    out = next(p for p in spec.outbound if p.name == "nut_cmd")
    sender = OutboundRunner(out, spec.model, broker)
    state = spec.model.initial_state()
    for now in range(0, 10_000, 10):
        sender.push(state, now)
    assert 99 <= sender.published <= 101

    # discretizer against a brute-force pose oracle
    ur10 = by_name["ur10_state"]
    stage = next(s for s in ur10.stages if s.kind == "discretize")

    def oracle(vec):
        within = [
            name
            for name, pose in stage.poses
            if all(abs(a - b) <= stage.epsilon for a, b in zip(vec, pose))
        ]
        assert len(within) <= 1  # poses are declared unambiguous
        return within[0] if within else stage.fallback

    poses = dict(stage.poses)
    for _ in range(1000):
        kind = rng.random()
        if kind < 0.5:
            base = poses[rng.choice(list(poses))]
            scale = rng.choice([0.0, 0.3, 0.9, 1.1, 4.0]) * stage.epsilon
            vec = tuple(c + rng.uniform(-scale, scale) for c in base)
        else:
            vec = tuple(rng.uniform(-2.0, 2.0) for _ in stage.fields)
        assert stage.classify(vec) == oracle(vec)

    dt = time.perf_counter() - t0
    assert dt < 10.0, f"took {dt:.1f}s"
    print(f"pipelines: pairing, ticker {sender.published}/100, discretizer ({dt:.1f}s)")


# --- 8: kernel invariants and trace replay ------------------------------


def test_08_lifecycle_syncs_hold_and_traces_replay_bit_identically(spec, refined):
    t0 = time.perf_counter()

    # dual-sync equality on every settled closed-loop state
    syncs = [t for t in spec.model.transitions if t.role == "sync"]
    assert syncs
    eng = refined.engine()
    for enc in closed_loop_states(refined):
        sv = eng.decode(enc)
        for t in syncs:
            assert sv[t.pair] == eval_predicate(t.guard, sv), (t.event, dict(sv))

    # and on every post-closure state of a live run
    rig = Rig(spec, refined)
    for _ in range(300):
        rig.tick()
        for t in syncs:
            assert rig.exe.state[t.pair] == eval_predicate(t.guard, rig.exe.state)
        if finished(rig.exe):
            break
    assert finished(rig.exe)

    # every run trace this suite produced replays bit-identically
    logs = dict(RUN_LOGS) or {"nominal": rig.docs()}
    for name, docs in logs.items():
        trace = make_run_trace("bolt_cover", name, None, docs)
        verdict = replay_trace(refined, trace)
        assert verdict["identical"], (name, verdict["problems"])
        assert canonical_json(make_run_trace("bolt_cover", name, None, docs)) == (
            canonical_json(trace)
        )

    # a fresh plan trace re-derives to the same bytes through the engine
    goal = parse_predicate("b̂ == tightened && ti? && !tr?", refined.vocabulary())
    restart = set(spec.abilities.restart_only_events())
    allowed = frozenset(
        t.event
        for t in refined.transitions
        if t.klass.controllable and t.event not in restart
    )
    found = plan(
        refined,
        [Goal("acc", goal)],
        refined.initial_state(),
        allowed_events=allowed,
    )
    assert found is not None
    trace = make_plan_trace("bolt_cover", "goal", None, found.bound, found)
    s = eng.closure(eng.encode(refined.initial_state()), include_effects=True)
    rederived = [dict(eng.decode(s))]
    begun = frozenset()
    for ev in trace["events"]:
        ct = eng.by_event[ev]
        assert ct.guard(s)
        if ct.ref.ability:
            begun = begun | {ct.ref.ability}
        s = eng.fire_and_close(s, ct, include_effects=True, attributed=begun)
        rederived.append(dict(eng.decode(s)))
    assert canonical_json(rederived) == canonical_json(trace["states"])

    dt = time.perf_counter() - t0
    assert dt < 10.0, f"took {dt:.1f}s"
    print(f"invariants: syncs hold, {len(logs)} run traces + plan trace replay ({dt:.1f}s)")
