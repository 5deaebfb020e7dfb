"""YAML model files.

One file declares everything a control project needs: variables, raw
transitions, ability declarations, the forbidden-state specification,
operations, topic schemas and pipelines.  Loading compiles abilities
into kernel transitions and parses every guard; errors across the whole
file are aggregated so a modeler sees them all at once.

Serialization regenerates the document from the loaded structures, so
load -> dump -> load is stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .abilities import (
    AbilityCompileError,
    AbilityDecl,
    AbilitySet,
    EffectDecl,
    StepDecl,
    compile_abilities,
)
from .bus import BusError, FieldSpec, TopicSchema
from .expr import (
    ExprError,
    Predicate,
    format_actions,
    format_predicate,
    parse_actions,
    parse_predicate,
)
from .model import (
    Model,
    ModelError,
    Transition,
    TransitionClass,
    VarDomain,
    VarKind,
    Variable,
)
from .pipelines import (
    InboundPipeline,
    OutboundPipeline,
    PipelineError,
    stage_from_doc,
    stage_to_doc,
)
from .planner import Goal, Operation


class LoadError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


_CLASS_NAMES = {
    "controllable": TransitionClass.CONTROLLABLE,
    "sync": TransitionClass.SYNC,
    "effect": TransitionClass.EFFECT,
    "finish": TransitionClass.FINISH,
}
_CLASS_DOCS = {v: k for k, v in _CLASS_NAMES.items()}

_KIND_NAMES = {
    "measured": VarKind.MEASURED,
    "estimated": VarKind.ESTIMATED,
    "output": VarKind.OUTPUT,
}


@dataclass
class ModelSpec:
    """Everything the model file declares, compiled and parsed."""

    name: str
    model: Model
    abilities: AbilitySet
    ability_decls: tuple[AbilityDecl, ...]
    forbidden: tuple[Predicate, ...]
    operations: tuple[Operation, ...]
    topics: tuple[TopicSchema, ...]
    inbound: tuple[InboundPipeline, ...]
    outbound: tuple[OutboundPipeline, ...]

    def topic(self, name: str) -> TopicSchema:
        for t in self.topics:
            if t.name == name:
                return t
        raise KeyError(name)

    def operation(self, name: str) -> Operation:
        for op in self.operations:
            if op.name == name:
                return op
        raise KeyError(name)


# --- parsing ------------------------------------------------------------


def _parse_domain(doc, where: str, problems: list[str]) -> VarDomain | None:
    if doc == "boolean":
        return VarDomain.boolean()
    if isinstance(doc, list):
        try:
            return VarDomain.enumeration([str(x) for x in doc])
        except ModelError as exc:
            problems.append(f"{where}: {exc}")
            return None
    if isinstance(doc, Mapping) and set(doc) == {"lo", "hi"}:
        try:
            return VarDomain.bounded_integer(int(doc["lo"]), int(doc["hi"]))
        except ModelError as exc:
            problems.append(f"{where}: {exc}")
            return None
    problems.append(f"{where}: unintelligible domain {doc!r}")
    return None


def _domain_doc(v: Variable):
    from .model import DomainKind

    if v.domain.kind is DomainKind.BOOLEAN:
        return "boolean"
    if v.domain.kind is DomainKind.ENUMERATION:
        return list(v.domain.values)
    return {"lo": v.domain.lo, "hi": v.domain.hi}


def parse_model_doc(doc: Mapping) -> ModelSpec:
    if not isinstance(doc, Mapping):
        raise LoadError(["model file is not a mapping"])
    problems: list[str] = []
    name = str(doc.get("name", "unnamed"))

    variables: list[Variable] = []
    for i, vdoc in enumerate(doc.get("variables", []) or []):
        where = f"variables[{i}]"
        try:
            vname = vdoc["name"]
            kind = _KIND_NAMES.get(vdoc.get("kind"))
            if kind is None:
                problems.append(f"{where}: unknown kind {vdoc.get('kind')!r}")
                continue
            domain = _parse_domain(vdoc.get("domain"), where, problems)
            if domain is None:
                continue
            variables.append(
                Variable(
                    vname,
                    kind,
                    domain,
                    vdoc["initial"],
                    resource=vdoc.get("resource", ""),
                    field_name=vdoc.get("field", ""),
                )
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed variable entry ({exc})")
        except ModelError as exc:
            problems.append(f"{where}: {exc}")

    decls: list[AbilityDecl] = []
    for i, adoc in enumerate(doc.get("abilities", []) or []):
        where = f"abilities[{i}]"
        try:
            effects = adoc.get("effects", {}) or {}
            params = adoc.get("parameters", {}) or {}
            start_doc = adoc["start"]
            finish_doc = adoc.get("finish")
            decls.append(
                AbilityDecl(
                    name=adoc["name"],
                    symbol=adoc["symbol"],
                    resource=adoc.get("resource", ""),
                    start=StepDecl(start_doc["guard"], start_doc.get("actions", "")),
                    finish=(
                        StepDecl(finish_doc["guard"], finish_doc.get("actions", ""))
                        if finish_doc
                        else None
                    ),
                    enabled_when=adoc.get("enabled_when", ""),
                    executing_when=adoc.get("executing_when", ""),
                    finished_when=adoc.get("finished_when", ""),
                    starting_effects=tuple(
                        EffectDecl(e["guard"], e.get("actions", ""))
                        for e in effects.get("starting", []) or []
                    ),
                    executing_effects=tuple(
                        EffectDecl(e["guard"], e.get("actions", ""))
                        for e in effects.get("executing", []) or []
                    ),
                    restart_only=bool(adoc.get("restart_only", False)),
                    parameters=tuple(
                        (p, tuple(str(v) for v in vals)) for p, vals in params.items()
                    ),
                )
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed ability entry ({exc})")

    try:
        aset = compile_abilities(decls, tuple(variables))
    except AbilityCompileError as exc:
        problems.extend(f"abilities: {p}" for p in exc.problems)
        aset = AbilitySet((), (), ())

    all_vars = tuple(variables) + aset.variables
    try:
        probe = Model(all_vars, ())
        vocab = probe.vocabulary()
    except ModelError as exc:
        problems.append(str(exc))
        raise LoadError(problems)

    raw_transitions: list[Transition] = []
    for i, tdoc in enumerate(doc.get("transitions", []) or []):
        where = f"transitions[{i}]"
        try:
            event = tdoc["event"]
            klass = _CLASS_NAMES.get(tdoc.get("class"))
            if klass is None:
                problems.append(f"{where}: unknown class {tdoc.get('class')!r}")
                continue
            guard = parse_predicate(tdoc.get("guard", "true"), vocab)
            actions = parse_actions(tdoc.get("actions", ""), vocab)
            raw_transitions.append(
                Transition(
                    event, guard, actions, klass,
                    resource=tdoc.get("resource", ""),
                )
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed transition entry ({exc})")
        except ExprError as exc:
            problems.append(f"{where} ({tdoc.get('event', '?')}): {exc}")

    model: Model | None = None
    try:
        model = Model(
            all_vars,
            tuple(raw_transitions) + aset.transitions,
            meta={"name": name},
        )
    except ModelError as exc:
        problems.append(str(exc))

    forbidden: list[Predicate] = []
    spec_doc = doc.get("specification", {}) or {}
    for i, text in enumerate(spec_doc.get("forbidden", []) or []):
        try:
            forbidden.append(parse_predicate(text, vocab))
        except ExprError as exc:
            problems.append(f"specification.forbidden[{i}]: {exc}")

    operations: list[Operation] = []
    for i, odoc in enumerate(doc.get("operations", []) or []):
        where = f"operations[{i}]"
        try:
            oname = odoc["name"]
            pre = parse_predicate(odoc.get("precondition", "true"), vocab)
            target = parse_predicate(odoc["goal"], vocab)
            avoid_text = odoc.get("avoid")
            avoid = parse_predicate(avoid_text, vocab) if avoid_text else None
            operations.append(Operation(oname, pre, Goal(oname, target, avoid)))
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed operation entry ({exc})")
        except ExprError as exc:
            problems.append(f"{where} ({odoc.get('name', '?')}): {exc}")
    op_names = [op.name for op in operations]
    for dup in sorted({n for n in op_names if op_names.count(n) > 1}):
        problems.append(f"operations: duplicate name {dup!r}")

    topics: list[TopicSchema] = []
    for i, tdoc in enumerate(doc.get("topics", []) or []):
        where = f"topics[{i}]"
        try:
            topics.append(
                TopicSchema(
                    tdoc["name"],
                    tuple(
                        FieldSpec(
                            f["name"], f["type"], tuple(f.get("values", ()) or ())
                        )
                        for f in tdoc.get("fields", [])
                    ),
                )
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed topic entry ({exc})")
        except BusError as exc:
            problems.append(f"{where}: {exc}")
    topic_names = {t.name for t in topics}

    inbound: list[InboundPipeline] = []
    outbound: list[OutboundPipeline] = []
    pipe_doc = doc.get("pipelines", {}) or {}
    for i, pdoc in enumerate(pipe_doc.get("inbound", []) or []):
        where = f"pipelines.inbound[{i}]"
        try:
            pname = pdoc["name"]
            ptopics = tuple(pdoc["topics"])
            for t in ptopics:
                if t not in topic_names:
                    problems.append(f"{where}: undeclared topic {t!r}")
            stages = tuple(stage_from_doc(s) for s in pdoc.get("stages", [{"auto_map": {}}]))
            inbound.append(
                InboundPipeline(pname, ptopics, pdoc.get("resource", ""), stages)
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed pipeline entry ({exc})")
        except PipelineError as exc:
            problems.append(f"{where}: {exc}")
    for i, pdoc in enumerate(pipe_doc.get("outbound", []) or []):
        where = f"pipelines.outbound[{i}]"
        try:
            pname = pdoc["name"]
            ptopic = pdoc["topic"]
            if ptopic not in topic_names:
                problems.append(f"{where}: undeclared topic {ptopic!r}")
            stages = tuple(stage_from_doc(s) for s in pdoc.get("stages", [{"auto_map": {}}]))
            outbound.append(
                OutboundPipeline(pname, ptopic, pdoc.get("resource", ""), stages)
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"{where}: malformed pipeline entry ({exc})")
        except PipelineError as exc:
            problems.append(f"{where}: {exc}")

    if problems or model is None:
        raise LoadError(problems or ["model failed to build"])
    return ModelSpec(
        name=name,
        model=model,
        abilities=aset,
        ability_decls=tuple(decls),
        forbidden=tuple(forbidden),
        operations=tuple(operations),
        topics=tuple(topics),
        inbound=tuple(inbound),
        outbound=tuple(outbound),
    )


def load_model_file(path: str | Path) -> ModelSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise LoadError([f"{path}: {exc}"]) from None
    try:
        return parse_model_doc(doc)
    except LoadError as exc:
        raise LoadError([f"{path}: {p}" for p in exc.problems]) from None


# --- serialization ------------------------------------------------------


def model_doc(spec: ModelSpec) -> dict:
    doc: dict = {"name": spec.name}

    doc["variables"] = []
    for v in spec.model.variables:
        if v.kind is VarKind.ABILITY_STATE:
            continue  # regenerated by ability compilation
        vdoc: dict = {
            "name": v.name,
            "kind": v.kind.value,
            "domain": _domain_doc(v),
            "initial": v.initial,
        }
        if v.resource:
            vdoc["resource"] = v.resource
        if v.field_name:
            vdoc["field"] = v.field_name
        doc["variables"].append(vdoc)

    raw = [t for t in spec.model.transitions if not t.ability]
    if raw:
        doc["transitions"] = []
        for t in raw:
            tdoc = {
                "event": t.event,
                "class": _CLASS_DOCS[t.klass],
                "guard": format_predicate(t.guard),
            }
            if t.actions:
                tdoc["actions"] = format_actions(t.actions)
            if t.resource:
                tdoc["resource"] = t.resource
            doc["transitions"].append(tdoc)

    if spec.ability_decls:
        doc["abilities"] = [_ability_doc(d) for d in spec.ability_decls]

    if spec.forbidden:
        doc["specification"] = {
            "forbidden": [format_predicate(p) for p in spec.forbidden]
        }

    if spec.operations:
        doc["operations"] = []
        for op in spec.operations:
            odoc = {
                "name": op.name,
                "precondition": format_predicate(op.precondition),
                "goal": format_predicate(op.goal.target),
            }
            if op.goal.avoid is not None:
                odoc["avoid"] = format_predicate(op.goal.avoid)
            doc["operations"].append(odoc)

    if spec.topics:
        doc["topics"] = []
        for t in spec.topics:
            fields = []
            for f in t.fields:
                fdoc: dict = {"name": f.name, "type": f.type}
                if f.enum_values:
                    fdoc["values"] = list(f.enum_values)
                fields.append(fdoc)
            doc["topics"].append({"name": t.name, "fields": fields})

    if spec.inbound or spec.outbound:
        pipes: dict = {}
        if spec.inbound:
            pipes["inbound"] = [
                {
                    "name": p.name,
                    "topics": list(p.topics),
                    "resource": p.resource,
                    "stages": [stage_to_doc(s) for s in p.stages],
                }
                for p in spec.inbound
            ]
        if spec.outbound:
            pipes["outbound"] = [
                {
                    "name": p.name,
                    "topic": p.topic,
                    "resource": p.resource,
                    "stages": [stage_to_doc(s) for s in p.stages],
                }
                for p in spec.outbound
            ]
        doc["pipelines"] = pipes
    return doc


def _ability_doc(d: AbilityDecl) -> dict:
    adoc: dict = {"name": d.name, "symbol": d.symbol}
    if d.resource:
        adoc["resource"] = d.resource
    if d.enabled_when:
        adoc["enabled_when"] = d.enabled_when
    if d.executing_when:
        adoc["executing_when"] = d.executing_when
    if d.finished_when:
        adoc["finished_when"] = d.finished_when
    adoc["start"] = _step_doc(d.start)
    if d.finish is not None:
        adoc["finish"] = _step_doc(d.finish)
    if d.starting_effects or d.executing_effects:
        effects: dict = {}
        if d.starting_effects:
            effects["starting"] = [
                {"guard": e.guard, "actions": e.actions} for e in d.starting_effects
            ]
        if d.executing_effects:
            effects["executing"] = [
                {"guard": e.guard, "actions": e.actions} for e in d.executing_effects
            ]
        adoc["effects"] = effects
    if d.restart_only:
        adoc["restart_only"] = True
    if d.parameters:
        adoc["parameters"] = {p: list(vals) for p, vals in d.parameters}
    return adoc


def _step_doc(s: StepDecl) -> dict:
    out = {"guard": s.guard}
    if s.actions:
        out["actions"] = s.actions
    return out


def dump_model_text(spec: ModelSpec) -> str:
    return yaml.safe_dump(
        model_doc(spec), sort_keys=False, allow_unicode=True, width=100
    )


def dump_model_file(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(dump_model_text(spec), encoding="utf-8")
