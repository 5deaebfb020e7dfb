"""The ``sp`` command: validate, synthesize, plan, serve, and replay.

Every verb that needs a project takes it as an optional positional
argument; when omitted the SP_PROJECT environment variable names it.
Exit status is 0 for a clean outcome, 1 for any reported problem, 2 for
usage errors (argparse's convention).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .expr import ExprError, format_predicate, parse_predicate
from .modelfile import LoadError
from .planner import DEFAULT_BOUND, Goal, plan
from .project import ProjectError, load_project
from .scenario import ScenarioError, ScenarioRun
from .synthesis import (
    DEFAULT_CAP,
    SynthesisError,
    blocked_states_dnf,
    synthesize,
)
from . import trace as trace_mod

USER_ERRORS = (ProjectError, LoadError, ScenarioError, SynthesisError, ExprError)


def _say(*parts) -> None:
    print(*parts)


def _fail(msg: str) -> int:
    print(msg, file=sys.stderr)
    return 1


def _restart_events(proj) -> frozenset[str]:
    return frozenset(proj.spec.abilities.restart_only_events())


def _normal_events(proj, model) -> frozenset[str]:
    restart = _restart_events(proj)
    return frozenset(
        t.event
        for t in model.transitions
        if t.klass.controllable and t.event not in restart
    )


# --- verbs --------------------------------------------------------------


def cmd_load(args) -> int:
    problems: list[str] = []
    try:
        proj = load_project(args.project)
    except (ProjectError, LoadError) as exc:
        for p in getattr(exc, "problems", [str(exc)]):
            _say(f"problem: {p}")
        _say(f"FAIL ({len(getattr(exc, 'problems', [1]))} problems)")
        return 1
    spec = proj.spec
    _say(f"project {proj.name} ({proj.root})")
    _say(
        f"model: {len(spec.model.variables)} variables, "
        f"{len(spec.model.transitions)} transitions, "
        f"{len(spec.abilities.abilities)} abilities, "
        f"{len(spec.operations)} operations, {len(spec.topics)} topics"
    )
    try:
        t0 = time.perf_counter()
        result = synthesize(spec.model, spec.forbidden, cap=args.cap)
        dt = time.perf_counter() - t0
        _say(f"synthesis: {result.summary()} ({dt:.1f}s)")
        if result.restricted_events:
            _say("  restricted: " + ", ".join(result.restricted_events))
    except SynthesisError as exc:
        problems.append(f"synthesis: {exc}")
    names = proj.scenario_names()
    parsed = []
    for name in names:
        try:
            proj.scenario(name)
            parsed.append(name)
        except ScenarioError as exc:
            problems.extend(f"scenario {name}: {p}" for p in exc.problems)
    if parsed:
        _say(f"scenarios: {len(parsed)} parsed ({', '.join(parsed)})")
    if problems:
        for p in problems:
            _say(f"problem: {p}")
        _say(f"FAIL ({len(problems)} problems)")
        return 1
    _say("ok")
    return 0


def cmd_synth(args) -> int:
    proj = load_project(args.project)
    spec = proj.spec
    t0 = time.perf_counter()
    result = synthesize(spec.model, spec.forbidden, cap=args.cap)
    dt = time.perf_counter() - t0
    _say(f"{proj.name}: {result.summary()} ({dt:.1f}s)")
    for ev in result.restricted_events:
        _say(f"  restricted: {ev}")
    if args.export_guards:
        lines = [
            f"# dispatch guards for {proj.name} after safety refinement",
            "# each guard is the declared condition minus the blocked region",
        ]
        restricted = set(result.restricted_events)
        by_event = {t.event: t for t in result.base.transitions}
        for t in result.base.transitions:
            if not t.klass.controllable:
                continue
            lines.append("")
            lines.append(f"event {t.event}")
            lines.append(f"  declared: {format_predicate(t.guard)}")
            enabled = by_event.get(f"{t.ability}.sync_enabled") if t.ability else None
            if enabled is not None:
                lines.append(f"  enabled when: {format_predicate(enabled.guard)}")
            if t.event not in restricted:
                lines.append("  blocked: false")
                continue
            try:
                dnf = blocked_states_dnf(result, t.event, max_states=args.dnf_limit)
                lines.append(f"  blocked: {dnf}")
            except SynthesisError as exc:
                # cube merging on huge regions takes minutes; keep the
                # export quick and let --dnf-limit opt into the wait
                lines.append(f"  blocked: # {exc}")
        Path(args.export_guards).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _say(f"guards written to {args.export_guards}")
    return 0


def cmd_plan(args) -> int:
    proj = load_project(args.project)
    spec = proj.spec
    result = synthesize(spec.model, spec.forbidden)
    model = result.model
    vocab = model.vocabulary()
    goal = parse_predicate(args.goal, vocab)
    avoid = parse_predicate(args.avoid, vocab) if args.avoid else None
    eng = model.engine()
    start = eng.decode(eng.closure(eng.encode(model.initial_state())))
    allowed = None if args.restart_ok else _normal_events(proj, model)
    t0 = time.perf_counter()
    found = plan(
        model,
        [Goal("cli", goal, avoid)],
        start,
        bound=args.bound,
        allowed_events=allowed,
    )
    dt = time.perf_counter() - t0
    if found is None:
        _say(f"no plan within bound {args.bound} ({dt:.2f}s)")
        return 1
    _say(f"plan with {len(found.events)} events ({dt:.2f}s):")
    for i, ev in enumerate(found.events, 1):
        _say(f"  {i}. {ev}")
    if args.trace:
        doc = trace_mod.make_plan_trace(
            proj.name, args.goal, args.avoid, args.bound, found
        )
        trace_mod.write_trace(args.trace, doc)
        _say(f"trace written to {args.trace}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    proj = load_project(args.project)
    app = build_app(
        proj,
        tick_ms=args.tick_ms,
        auto_ack=not args.no_auto_ack,
    )
    _say(f"serving {proj.name} on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _looks_like_project(arg: str) -> bool:
    p = Path(arg)
    return (p.is_dir() and (p / "model.yaml").is_file()) or p.name == "model.yaml"


def cmd_scenario(args) -> int:
    names = list(args.names)
    project = None
    if names and _looks_like_project(names[0]):
        project = names.pop(0)
    proj = load_project(project)
    result = synthesize(proj.spec.model, proj.spec.forbidden)
    if not names:
        names = proj.scenario_names()
        if not names:
            return _fail(f"{proj.name}: no scenarios")
    if args.trace and len(names) != 1:
        return _fail("--trace wants exactly one scenario")
    failures = 0
    for name in names:
        run = ScenarioRun(proj.spec, proj.scenario(name), result.model)
        verdict = run.run()
        status = "pass" if verdict["passed"] else "FAIL"
        _say(
            f"{status} {name}: {verdict['ticks']} ticks, "
            f"stopped {verdict['stopped']}, digest {verdict['digest']}"
        )
        if not verdict["passed"]:
            failures += 1
            for chk in verdict["checks"]:
                if not chk["passed"]:
                    _say(f"  check failed: {chk['label']}")
        if args.trace:
            docs = [r.to_doc() for r in run.exe.log.since(0)]
            doc = trace_mod.make_run_trace(proj.name, name, verdict, docs)
            trace_mod.write_trace(args.trace, doc)
            _say(f"trace written to {args.trace}")
    return 1 if failures else 0


def cmd_trace_show(args) -> int:
    doc = trace_mod.load_trace(args.file)
    kind = doc.get("kind")
    if kind == "run-trace":
        _say(f"run-trace of {doc.get('scenario')} on {doc.get('project')}")
        verdict = doc.get("verdict") or {}
        if verdict:
            _say(
                f"verdict: passed={verdict.get('passed')} ticks={verdict.get('ticks')} "
                f"digest={verdict.get('digest')}"
            )
        events = doc["events"]
        _say(f"{len(events)} events")
        for rec in events:
            data = json.dumps(rec["data"], sort_keys=True)
            _say(f"  {rec['seq']:>4} t{rec['tick']:<5} {rec['kind']:<18} {data}")
    elif kind == "plan-trace":
        _say(f"plan-trace on {doc.get('project')}")
        _say(f"goal: {doc.get('goal')}")
        if doc.get("avoid"):
            _say(f"avoid: {doc.get('avoid')}")
        _say(f"bound: {doc.get('bound')}, {len(doc['events'])} events")
        for i, ev in enumerate(doc["events"], 1):
            _say(f"  {i}. {ev}")
    else:
        return _fail(f"unknown trace kind {kind!r}")
    return 0


def _replay_run_trace(doc: dict, project_arg: str | None) -> int:
    proj = load_project(project_arg)
    result = synthesize(proj.spec.model, proj.spec.forbidden)
    verdict = trace_mod.replay_trace(result.model, doc)
    _say(f"core replay: {verdict['checked']} derived steps re-checked")
    for p in verdict["problems"]:
        _say(f"  mismatch: {p}")
    rc = 0 if verdict["identical"] else 1

    name = doc.get("scenario")
    if name:
        run = ScenarioRun(proj.spec, proj.scenario(name), result.model)
        run.run()
        fresh = [r.to_doc() for r in run.exe.log.since(0)]
        if fresh == doc["events"]:
            _say(f"re-run of {name}: events identical ({len(fresh)})")
        else:
            _say(f"re-run of {name}: events differ")
            old, new = doc["events"], fresh
            for i in range(max(len(old), len(new))):
                a = old[i] if i < len(old) else None
                b = new[i] if i < len(new) else None
                if a != b:
                    _say(f"  first divergence at index {i}:")
                    _say(f"    recorded: {json.dumps(a, sort_keys=True)}")
                    _say(f"    fresh:    {json.dumps(b, sort_keys=True)}")
                    break
            rc = 1
    _say("replay clean" if rc == 0 else "replay FAILED")
    return rc


def _replay_plan_trace(doc: dict, project_arg: str | None) -> int:
    proj = load_project(project_arg)
    result = synthesize(proj.spec.model, proj.spec.forbidden)
    model = result.model
    eng = model.engine()
    s = eng.closure(eng.encode(model.initial_state()), include_effects=True)
    derived = [dict(eng.decode(s))]
    begun: frozenset[str] = frozenset()
    problems: list[str] = []
    for i, ev in enumerate(doc["events"]):
        ct = eng.by_event.get(ev)
        if ct is None:
            problems.append(f"step {i}: no transition {ev}")
            break
        if not ct.guard(s):
            problems.append(f"step {i}: {ev} not enabled")
            break
        if ct.ref.ability:
            begun = begun | {ct.ref.ability}
        s = eng.fire_and_close(s, ct, include_effects=True, attributed=begun)
        derived.append(dict(eng.decode(s)))
    if not problems and derived != doc["states"]:
        problems.append("derived state sequence differs from the recorded one")
    for p in problems:
        _say(f"  mismatch: {p}")
    _say("replay clean" if not problems else "replay FAILED")
    return 1 if problems else 0


def cmd_trace(args) -> int:
    if args.trace_cmd == "show":
        return cmd_trace_show(args)
    doc = trace_mod.load_trace(args.file)
    if doc["kind"] == "run-trace":
        return _replay_run_trace(doc, args.project)
    return _replay_plan_trace(doc, args.project)


# --- wiring -------------------------------------------------------------


def _add_project_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "project",
        nargs="?",
        default=None,
        help="project directory (default: $SP_PROJECT)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sp", description="supervised execution over state-machine plant models"
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("load", help="parse and validate a project end to end")
    _add_project_arg(p)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.set_defaults(fn=cmd_load)

    p = sub.add_parser("synth", help="run safety synthesis, optionally export guards")
    _add_project_arg(p)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--export-guards", metavar="FILE")
    p.add_argument("--dnf-limit", type=int, default=4000,
                   help="largest blocked region to print as sum of products")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("plan", help="search for an event sequence reaching a goal")
    _add_project_arg(p)
    p.add_argument("--goal", required=True, help="target predicate")
    p.add_argument("--avoid", default=None, help="predicate no visited state may satisfy")
    p.add_argument("--bound", type=int, default=DEFAULT_BOUND)
    p.add_argument("--restart-ok", action="store_true",
                   help="also use abilities reserved for restart mode")
    p.add_argument("--trace", metavar="FILE", help="write a plan-trace file")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("serve", help="run the HTTP service on a simulated cell")
    _add_project_arg(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--tick-ms", type=int, default=10)
    p.add_argument("--no-auto-ack", action="store_true",
                   help="operator tasks wait for explicit acknowledgement")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("scenario", help="run scripted scenarios against the simulator")
    p.add_argument(
        "names",
        nargs="*",
        help="project directory and/or scenario names (default: all of $SP_PROJECT)",
    )
    p.add_argument("--trace", metavar="FILE",
                   help="write a run-trace file (single scenario only)")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("trace", help="inspect or replay a trace file")
    tsub = p.add_subparsers(dest="trace_cmd", required=True)
    ps = tsub.add_parser("show", help="print a trace file")
    ps.add_argument("file")
    ps.set_defaults(fn=cmd_trace)
    pr = tsub.add_parser("replay", help="re-derive a trace and compare")
    pr.add_argument("file")
    _add_project_arg(pr)
    pr.set_defaults(fn=cmd_trace)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as exc:
        return _fail(f"sp: {exc}")
    except FileNotFoundError as exc:
        return _fail(f"sp: {exc}")


if __name__ == "__main__":
    sys.exit(main())
