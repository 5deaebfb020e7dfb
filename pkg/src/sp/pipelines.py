"""Message pipelines between bus topics and model variables.

Inbound pipelines turn the latest payload per subscribed topic into
variable updates; outbound pipelines render output variables into a
payload and decide when to publish it.  Both directions are stage
lists.  Mapping stages are pure; tick and rate-limit stages carry the
little timing state that emission control needs.

Field matching is by (resource, field name): a variable mirrors the
message field named by its ``field_name`` (falling back to the variable
name) on topics of its resource.  Continuous joint vectors enter the
finite model only through an explicit discretization stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .bus import Broker, Subscription, TopicSchema
from .model import Model, StateVec, Value, VarKind

DEFAULT_EPSILON = 0.02


class PipelineError(ValueError):
    pass


# registry for pure-function stages; tests and sim nodes add entries
TRANSFORMS: dict[str, Callable[[dict], dict]] = {}


def register_transform(name: str, fn: Callable[[dict], dict]) -> None:
    TRANSFORMS[name] = fn


# --- stage configs ------------------------------------------------------


@dataclass(frozen=True)
class AutoMapStage:
    """Match schema fields to same-resource variables by field name."""

    kind = "auto_map"


@dataclass(frozen=True)
class FieldMapStage:
    """Explicit variable<->field pairs plus constant output fields."""

    kind = "field_map"
    entries: tuple[tuple[str, str], ...] = ()  # (variable, field)
    const: tuple[tuple[str, Value], ...] = ()  # (field, value), outbound only
    topic: str = ""  # inbound: restrict to one source topic


@dataclass(frozen=True)
class RenameStage:
    kind = "rename"
    entries: tuple[tuple[str, str], ...] = ()  # (old field, new field)


@dataclass(frozen=True)
class TransformStage:
    kind = "transform"
    name: str = ""

    def fn(self) -> Callable[[dict], dict]:
        try:
            return TRANSFORMS[self.name]
        except KeyError:
            raise PipelineError(f"no registered transform named {self.name!r}") from None


@dataclass(frozen=True)
class DiscretizeStage:
    """Map a float vector to the nearest named pose under the max norm.

    A vector within epsilon of a pose reads as that pose; anything else
    reads as the fallback value.  Poses must be pairwise farther apart
    than twice epsilon so the match is unambiguous.
    """

    kind = "discretize"
    variable: str = ""
    fields: tuple[str, ...] = ()
    poses: tuple[tuple[str, tuple[float, ...]], ...] = ()
    epsilon: float = DEFAULT_EPSILON
    fallback: str = "UNKNOWN"
    topic: str = ""

    def __post_init__(self):
        names = [n for n, _ in self.poses]
        if len(set(names)) != len(names):
            raise PipelineError("duplicate pose names in discretize stage")
        for n, vec in self.poses:
            if len(vec) != len(self.fields):
                raise PipelineError(
                    f"pose {n!r} has {len(vec)} coordinates for {len(self.fields)} fields"
                )
        for i, (n1, v1) in enumerate(self.poses):
            for n2, v2 in self.poses[i + 1 :]:
                gap = max(abs(a - b) for a, b in zip(v1, v2))
                if gap <= 2 * self.epsilon:
                    raise PipelineError(
                        f"poses {n1!r} and {n2!r} are {gap:.4f} apart; "
                        f"ambiguous below {2 * self.epsilon:.4f}"
                    )

    def classify(self, vector: tuple[float, ...]) -> str:
        for name, pose in self.poses:
            if max(abs(a - b) for a, b in zip(vector, pose)) <= self.epsilon:
                return name
        return self.fallback


@dataclass(frozen=True)
class MergeOverrideStage:
    """Operator overrides for individual output fields, latest wins.

    Override messages carry (topic, field, value as JSON text); a JSON
    null clears the override for that field.
    """

    kind = "merge_override"
    topic: str = "/sp/overrides"


@dataclass(frozen=True)
class TickStage:
    """Publish when the interval elapses or the payload changed."""

    kind = "tick"
    interval_ms: int = 100


@dataclass(frozen=True)
class RateLimitStage:
    kind = "rate_limit"
    min_interval_ms: int = 0


STAGE_KINDS = {
    "auto_map": AutoMapStage,
    "field_map": FieldMapStage,
    "rename": RenameStage,
    "transform": TransformStage,
    "discretize": DiscretizeStage,
    "merge_override": MergeOverrideStage,
    "tick": TickStage,
    "rate_limit": RateLimitStage,
}


def stage_from_doc(doc: Mapping) -> object:
    if not isinstance(doc, Mapping) or len(doc) != 1:
        raise PipelineError(f"stage must be a single-key mapping, got {doc!r}")
    (kind, cfg), = doc.items()
    if cfg is None:
        cfg = {}
    if kind == "auto_map":
        if cfg:
            raise PipelineError("auto_map takes no options")
        return AutoMapStage()
    if kind == "field_map":
        return FieldMapStage(
            entries=tuple((v, f) for v, f in dict(cfg.get("map", {})).items()),
            const=tuple(dict(cfg.get("const", {})).items()),
            topic=cfg.get("topic", ""),
        )
    if kind == "rename":
        return RenameStage(entries=tuple(dict(cfg).items()))
    if kind == "transform":
        return TransformStage(name=cfg["name"] if isinstance(cfg, Mapping) else str(cfg))
    if kind == "discretize":
        return DiscretizeStage(
            variable=cfg["variable"],
            fields=tuple(cfg["fields"]),
            poses=tuple((n, tuple(float(x) for x in vec)) for n, vec in dict(cfg["poses"]).items()),
            epsilon=float(cfg.get("epsilon", DEFAULT_EPSILON)),
            fallback=cfg.get("fallback", "UNKNOWN"),
            topic=cfg.get("topic", ""),
        )
    if kind == "merge_override":
        return MergeOverrideStage(topic=cfg.get("topic", "/sp/overrides"))
    if kind == "tick":
        return TickStage(interval_ms=int(cfg.get("interval_ms", 100)))
    if kind == "rate_limit":
        return RateLimitStage(min_interval_ms=int(cfg.get("min_interval_ms", 0)))
    raise PipelineError(f"unknown stage kind {kind!r}")


def stage_to_doc(stage) -> dict:
    if isinstance(stage, AutoMapStage):
        return {"auto_map": {}}
    if isinstance(stage, FieldMapStage):
        doc: dict = {}
        if stage.entries:
            doc["map"] = {v: f for v, f in stage.entries}
        if stage.const:
            doc["const"] = dict(stage.const)
        if stage.topic:
            doc["topic"] = stage.topic
        return {"field_map": doc}
    if isinstance(stage, RenameStage):
        return {"rename": dict(stage.entries)}
    if isinstance(stage, TransformStage):
        return {"transform": {"name": stage.name}}
    if isinstance(stage, DiscretizeStage):
        doc = {
            "variable": stage.variable,
            "fields": list(stage.fields),
            "poses": {n: list(vec) for n, vec in stage.poses},
            "epsilon": stage.epsilon,
            "fallback": stage.fallback,
        }
        if stage.topic:
            doc["topic"] = stage.topic
        return {"discretize": doc}
    if isinstance(stage, MergeOverrideStage):
        return {"merge_override": {"topic": stage.topic}}
    if isinstance(stage, TickStage):
        return {"tick": {"interval_ms": stage.interval_ms}}
    if isinstance(stage, RateLimitStage):
        return {"rate_limit": {"min_interval_ms": stage.min_interval_ms}}
    raise PipelineError(f"cannot serialize stage {stage!r}")


@dataclass(frozen=True)
class InboundPipeline:
    name: str
    topics: tuple[str, ...]
    resource: str
    stages: tuple = (AutoMapStage(),)


@dataclass(frozen=True)
class OutboundPipeline:
    name: str
    topic: str
    resource: str
    stages: tuple = (AutoMapStage(),)


# --- runtime ------------------------------------------------------------


def _measured_by_field(model: Model, resource: str) -> dict[str, str]:
    out = {}
    for v in model.variables:
        if v.kind is VarKind.MEASURED and v.resource == resource:
            out[v.mapped_field] = v.name
    return out


def _check_domain(model: Model, var: str, value: Value) -> Value:
    v = model.variable(var)
    if isinstance(value, float) and value.is_integer() and not isinstance(value, bool):
        # bus float64 fields may carry integer-valued variables
        if int(value) in v.domain:
            value = int(value)
    if value not in v.domain:
        raise PipelineError(
            f"value {value!r} for {var!r} outside its domain"
        )
    return value


class InboundRunner:
    """Owns the subscriptions of one inbound pipeline."""

    def __init__(self, pipeline: InboundPipeline, model: Model, broker: Broker):
        self.pipeline = pipeline
        self.model = model
        self._subs: list[tuple[str, Subscription]] = [
            (t, broker.subscribe(t)) for t in pipeline.topics
        ]
        self._schemas: dict[str, TopicSchema] = {
            t: broker.schema(t) for t in pipeline.topics
        }

    def poll(self) -> dict[str, Value]:
        """Latest payload per topic folded through the stages."""
        messages: dict[str, dict] = {}
        for topic, sub in self._subs:
            envs = sub.poll()
            if envs:
                messages[topic] = dict(envs[-1].payload)
        if not messages:
            return {}
        updates: dict[str, Value] = {}
        for stage in self.pipeline.stages:
            self._apply(stage, messages, updates)
        return updates

    def _apply(self, stage, messages: dict[str, dict], updates: dict[str, Value]):
        if isinstance(stage, RenameStage):
            table = dict(stage.entries)
            for payload in messages.values():
                for old, new in table.items():
                    if old in payload:
                        payload[new] = payload.pop(old)
        elif isinstance(stage, TransformStage):
            fn = stage.fn()
            for topic in list(messages):
                messages[topic] = fn(messages[topic])
        elif isinstance(stage, DiscretizeStage):
            for topic, payload in messages.items():
                if stage.topic and topic != stage.topic:
                    continue
                if not all(f in payload for f in stage.fields):
                    continue
                vec = tuple(float(payload[f]) for f in stage.fields)
                updates[stage.variable] = _check_domain(
                    self.model, stage.variable, stage.classify(vec)
                )
        elif isinstance(stage, FieldMapStage):
            for topic, payload in messages.items():
                if stage.topic and topic != stage.topic:
                    continue
                for var, fld in stage.entries:
                    if fld in payload:
                        updates[var] = _check_domain(self.model, var, payload[fld])
        elif isinstance(stage, AutoMapStage):
            table = _measured_by_field(self.model, self.pipeline.resource)
            for topic in self.pipeline.topics:
                payload = messages.get(topic)
                if payload is None:
                    continue
                for fld, value in payload.items():
                    var = table.get(fld)
                    if var is not None:
                        updates[var] = _check_domain(self.model, var, value)
        elif isinstance(stage, (TickStage, RateLimitStage, MergeOverrideStage)):
            raise PipelineError(
                f"{stage.kind} stage is outbound-only (pipeline {self.pipeline.name})"
            )
        else:
            raise PipelineError(f"unhandled inbound stage {stage!r}")


class OutboundRunner:
    """Renders output variables of one pipeline and publishes on demand."""

    def __init__(
        self,
        pipeline: OutboundPipeline,
        model: Model,
        broker: Broker,
        publisher: str = "supervisor",
    ):
        self.pipeline = pipeline
        self.model = model
        self.broker = broker
        self.publisher = publisher
        self.schema = broker.schema(pipeline.topic)
        self._last_payload: dict | None = None
        self._last_emit_ms: int | None = None
        self._overrides: dict[str, Value] = {}
        self._override_subs: list[Subscription] = [
            broker.subscribe(stage.topic)
            for stage in pipeline.stages
            if isinstance(stage, MergeOverrideStage)
        ]
        self.published = 0

    def push(self, state: StateVec, now_ms: int):
        payload: dict = {}
        ticked = False
        has_tick = False
        for stage in self.pipeline.stages:
            if isinstance(stage, AutoMapStage):
                declared = {f.name for f in self.schema.fields}
                for v in self.model.variables:
                    if (
                        v.kind is VarKind.OUTPUT
                        and v.resource == self.pipeline.resource
                        and v.mapped_field in declared
                    ):
                        payload[v.mapped_field] = _field_value(state[v.name])
            elif isinstance(stage, FieldMapStage):
                for var, fld in stage.entries:
                    payload[fld] = _field_value(state[var])
                for fld, value in stage.const:
                    payload[fld] = value
            elif isinstance(stage, RenameStage):
                for old, new in stage.entries:
                    if old in payload:
                        payload[new] = payload.pop(old)
            elif isinstance(stage, TransformStage):
                payload = stage.fn()(payload)
            elif isinstance(stage, MergeOverrideStage):
                self._drain_overrides(stage)
                payload.update(self._overrides)
            elif isinstance(stage, TickStage):
                has_tick = True
                due = (
                    self._last_emit_ms is None
                    or now_ms - self._last_emit_ms >= stage.interval_ms
                )
                if due or payload != self._last_payload:
                    ticked = True
            elif isinstance(stage, RateLimitStage):
                if (
                    self._last_emit_ms is not None
                    and now_ms - self._last_emit_ms < stage.min_interval_ms
                ):
                    # suppressed, but the pending change stays pending
                    return None
            elif isinstance(stage, DiscretizeStage):
                raise PipelineError(
                    f"discretize stage is inbound-only (pipeline {self.pipeline.name})"
                )
            else:
                raise PipelineError(f"unhandled outbound stage {stage!r}")
        if has_tick and not ticked:
            return None
        if not has_tick and payload == self._last_payload:
            return None
        self._last_payload = payload
        self._last_emit_ms = now_ms
        self.published += 1
        return self.broker.publish(self.pipeline.topic, payload, self.publisher)

    def _drain_overrides(self, stage: MergeOverrideStage):
        for sub in self._override_subs:
            for env in sub.poll():
                doc = env.payload
                if doc.get("topic") != self.pipeline.topic:
                    continue
                fld = doc.get("field")
                try:
                    value = json.loads(doc.get("value", "null"))
                except json.JSONDecodeError:
                    continue
                if value is None:
                    self._overrides.pop(fld, None)
                else:
                    self._overrides[fld] = value


def _field_value(v: Value):
    # enum-valued variables come out as their string label; booleans and
    # ints pass through (float64 fields accept ints on the bus)
    return v
