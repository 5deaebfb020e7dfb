"""Simulated pub/sub bus.

A single in-process broker owns all topics.  Publishes from one
publisher are totally ordered per topic; there is no replay, no
persistence, and subscriptions drop their oldest entry when full.
A small TCP transport (length-prefixed canonical JSON frames, default
port 7447) exposes the same broker to external processes and is
observationally equivalent to the loopback client.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

DEFAULT_PORT = 7447

FIELD_TYPES = ("boolean", "float64", "string", "enum")


class BusError(ValueError):
    pass


class TopicConflictError(BusError):
    pass


class ValidationError(BusError):
    def __init__(self, topic: str, problems: list[str]):
        super().__init__(f"payload rejected for {topic}: " + "; ".join(problems))
        self.problems = problems


@dataclass(frozen=True, slots=True)
class FieldSpec:
    name: str
    type: str
    enum_values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.type not in FIELD_TYPES:
            raise BusError(f"unknown field type {self.type!r} for {self.name!r}")
        if self.type == "enum" and not self.enum_values:
            raise BusError(f"enum field {self.name!r} needs values")

    def check(self, value: object) -> str | None:
        if self.type == "boolean" and not isinstance(value, bool):
            return f"field {self.name!r} expects boolean, got {type(value).__name__}"
        if self.type == "float64" and (isinstance(value, bool) or not isinstance(value, (int, float))):
            return f"field {self.name!r} expects float64, got {type(value).__name__}"
        if self.type == "string" and not isinstance(value, str):
            return f"field {self.name!r} expects string, got {type(value).__name__}"
        if self.type == "enum":
            if not isinstance(value, str) or value not in self.enum_values:
                return f"field {self.name!r} expects one of {list(self.enum_values)}, got {value!r}"
        return None


@dataclass(frozen=True, slots=True)
class TopicSchema:
    name: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise BusError(f"topic {self.name} declares duplicate fields")

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise BusError(f"topic {self.name} has no field {name!r}")

    def validate(self, payload: dict) -> list[str]:
        problems = []
        declared = {f.name for f in self.fields}
        for f in self.fields:
            if f.name not in payload:
                problems.append(f"missing field {f.name!r}")
                continue
            err = f.check(payload[f.name])
            if err:
                problems.append(err)
        for k in payload:
            if k not in declared:
                problems.append(f"unknown field {k!r}")
        return problems

    def normalize(self, payload: dict) -> dict:
        out = {}
        for f in self.fields:
            v = payload[f.name]
            if f.type == "float64":
                v = float(v)
            out[f.name] = v
        return out


@dataclass(frozen=True, slots=True)
class Envelope:
    topic: str
    publisher: str
    seq: int
    stamp_ms: int
    payload: dict

    def canonical(self) -> bytes:
        doc = {
            "payload": self.payload,
            "publisher": self.publisher,
            "seq": self.seq,
            "stamp_ms": self.stamp_ms,
            "topic": self.topic,
        }
        return canonical_json(doc)

    @staticmethod
    def from_doc(doc: dict) -> "Envelope":
        return Envelope(
            topic=doc["topic"],
            publisher=doc["publisher"],
            seq=doc["seq"],
            stamp_ms=doc["stamp_ms"],
            payload=doc["payload"],
        )

    def as_doc(self) -> dict:
        return {
            "payload": self.payload,
            "publisher": self.publisher,
            "seq": self.seq,
            "stamp_ms": self.stamp_ms,
            "topic": self.topic,
        }


def canonical_json(doc: object) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


class Subscription:
    """Bounded delivery queue; the oldest envelope is dropped on overflow."""

    def __init__(self, topic: str, capacity: int):
        if capacity < 1:
            raise BusError("subscription capacity must be at least 1")
        self.topic = topic
        self.capacity = capacity
        self._queue: deque[Envelope] = deque(maxlen=capacity)
        self.dropped = 0

    def _offer(self, env: Envelope) -> None:
        if len(self._queue) == self._queue.maxlen:
            self.dropped += 1
        self._queue.append(env)

    def poll(self) -> list[Envelope]:
        out = list(self._queue)
        self._queue.clear()
        return out

    def latest(self) -> Envelope | None:
        return self._queue[-1] if self._queue else None


class Broker:
    def __init__(self, now_ms: Callable[[], int] | None = None):
        self._now_ms = now_ms or (lambda: int(time.time() * 1000))
        self._topics: dict[str, TopicSchema] = {}
        self._subs: dict[str, list[Subscription]] = {}
        self._seq: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def declare_topic(self, schema: TopicSchema) -> TopicSchema:
        with self._lock:
            existing = self._topics.get(schema.name)
            if existing is None:
                self._topics[schema.name] = schema
                self._subs.setdefault(schema.name, [])
                return schema
            if existing != schema:
                raise TopicConflictError(
                    f"topic {schema.name} already declared with a different schema"
                )
            return existing

    def schema(self, topic: str) -> TopicSchema:
        try:
            return self._topics[topic]
        except KeyError:
            raise BusError(f"topic {topic!r} is not declared") from None

    def topics(self) -> list[TopicSchema]:
        with self._lock:
            return list(self._topics.values())

    def publish(self, topic: str, payload: dict, publisher: str = "anon") -> Envelope:
        with self._lock:
            schema = self._topics.get(topic)
            if schema is None:
                raise BusError(f"topic {topic!r} is not declared")
            problems = schema.validate(payload)
            if problems:
                raise ValidationError(topic, problems)
            key = (publisher, topic)
            seq = self._seq.get(key, 0)
            self._seq[key] = seq + 1
            env = Envelope(topic, publisher, seq, self._now_ms(), schema.normalize(payload))
            for sub in self._subs[topic]:
                sub._offer(env)
            return env

    def subscribe(self, topic: str, capacity: int = 64) -> Subscription:
        with self._lock:
            if topic not in self._topics:
                raise BusError(f"topic {topic!r} is not declared")
            sub = Subscription(topic, capacity)
            self._subs[topic].append(sub)
            return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)


class BusClient:
    """Loopback client; the TCP client exposes the same surface."""

    def __init__(self, broker: Broker, name: str):
        self._broker = broker
        self.name = name

    def declare_topic(self, schema: TopicSchema) -> TopicSchema:
        return self._broker.declare_topic(schema)

    def publish(self, topic: str, payload: dict) -> Envelope:
        return self._broker.publish(topic, payload, publisher=self.name)

    def subscribe(self, topic: str, capacity: int = 64) -> Subscription:
        return self._broker.subscribe(topic, capacity)

    def poll(self, sub: Subscription) -> list[Envelope]:
        return sub.poll()

    def close(self) -> None:
        pass


# --- TCP transport ------------------------------------------------------


def _read_frame(sock: socket.socket) -> dict | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    length = int.from_bytes(header, "big")
    body = _read_exact(sock, length)
    if body is None:
        return None
    return json.loads(body.decode())


def _write_frame(sock: socket.socket, doc: object) -> None:
    body = canonical_json(doc)
    sock.sendall(len(body).to_bytes(4, "big") + body)


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _schema_to_doc(schema: TopicSchema) -> dict:
    return {
        "name": schema.name,
        "fields": [
            {"name": f.name, "type": f.type, "enum_values": list(f.enum_values)}
            for f in schema.fields
        ],
    }


def _schema_from_doc(doc: dict) -> TopicSchema:
    return TopicSchema(
        doc["name"],
        tuple(
            FieldSpec(f["name"], f["type"], tuple(f.get("enum_values", ())))
            for f in doc["fields"]
        ),
    )


class _BusRequestHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: BusServer = self.server  # type: ignore[assignment]
        subs: dict[int, Subscription] = {}
        next_sub = 0
        peer = f"tcp:{self.client_address[0]}:{self.client_address[1]}"
        while True:
            try:
                req = _read_frame(self.request)
            except (ConnectionError, OSError):
                break
            if req is None:
                break
            try:
                op = req.get("op")
                if op == "declare":
                    server.broker.declare_topic(_schema_from_doc(req["schema"]))
                    resp = {"ok": True}
                elif op == "publish":
                    env = server.broker.publish(
                        req["topic"], req["payload"], publisher=req.get("publisher", peer)
                    )
                    resp = {"ok": True, "envelope": env.as_doc()}
                elif op == "subscribe":
                    sub = server.broker.subscribe(req["topic"], req.get("capacity", 64))
                    subs[next_sub] = sub
                    resp = {"ok": True, "sub": next_sub}
                    next_sub += 1
                elif op == "poll":
                    sub = subs[req["sub"]]
                    resp = {"ok": True, "envelopes": [e.as_doc() for e in sub.poll()]}
                else:
                    resp = {"ok": False, "error": f"unknown op {op!r}"}
            except BusError as exc:
                resp = {"ok": False, "error": str(exc)}
            except KeyError as exc:
                resp = {"ok": False, "error": f"bad request field {exc}"}
            try:
                _write_frame(self.request, resp)
            except (ConnectionError, OSError):
                break
        for sub in subs.values():
            server.broker.unsubscribe(sub)


class BusServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        super().__init__((host, port), _BusRequestHandler)
        self.broker = broker
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "BusServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class TcpBusClient:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, name: str = "tcp-client"):
        self.name = name
        self._sock = socket.create_connection((host, port))
        self._lock = threading.Lock()

    def _call(self, doc: dict) -> dict:
        with self._lock:
            _write_frame(self._sock, doc)
            resp = _read_frame(self._sock)
        if resp is None:
            raise BusError("bus connection closed")
        if not resp.get("ok"):
            raise BusError(resp.get("error", "bus request failed"))
        return resp

    def declare_topic(self, schema: TopicSchema) -> TopicSchema:
        self._call({"op": "declare", "schema": _schema_to_doc(schema)})
        return schema

    def publish(self, topic: str, payload: dict) -> Envelope:
        resp = self._call(
            {"op": "publish", "topic": topic, "payload": payload, "publisher": self.name}
        )
        return Envelope.from_doc(resp["envelope"])

    def subscribe(self, topic: str, capacity: int = 64) -> "RemoteSubscription":
        resp = self._call({"op": "subscribe", "topic": topic, "capacity": capacity})
        return RemoteSubscription(self, resp["sub"], topic)

    def poll(self, sub: "RemoteSubscription") -> list[Envelope]:
        resp = self._call({"op": "poll", "sub": sub.handle})
        return [Envelope.from_doc(d) for d in resp["envelopes"]]

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


@dataclass
class RemoteSubscription:
    client: TcpBusClient
    handle: int
    topic: str

    def poll(self) -> list[Envelope]:
        return self.client.poll(self)
