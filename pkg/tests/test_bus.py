"""Broker semantics: ordering, bounded queues, validation, TCP parity."""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sp.bus import (
    Broker,
    BusClient,
    BusError,
    BusServer,
    Envelope,
    FieldSpec,
    TcpBusClient,
    TopicConflictError,
    TopicSchema,
    ValidationError,
    canonical_json,
)


def fake_clock(start=1000, step=10):
    counter = itertools.count(start, step)
    return lambda: next(counter)


def tool_schema(name="/nutrunner/state"):
    return TopicSchema(
        name,
        (
            FieldSpec("tool_is_idle", "boolean"),
            FieldSpec("torque", "float64"),
        ),
    )


def test_declare_is_idempotent_for_identical_schema():
    b = Broker()
    s = tool_schema()
    assert b.declare_topic(s) == s
    assert b.declare_topic(tool_schema()) == s
    assert [t.name for t in b.topics()] == ["/nutrunner/state"]


def test_declare_conflict_rejected():
    b = Broker()
    b.declare_topic(tool_schema())
    other = TopicSchema("/nutrunner/state", (FieldSpec("torque", "float64"),))
    with pytest.raises(TopicConflictError):
        b.declare_topic(other)


def test_publish_to_undeclared_topic_fails():
    b = Broker()
    with pytest.raises(BusError):
        b.publish("/nowhere", {})


def test_validation_lists_every_problem():
    b = Broker()
    b.declare_topic(tool_schema())
    with pytest.raises(ValidationError) as exc:
        b.publish("/nutrunner/state", {"torque": "high", "bogus": 1})
    problems = exc.value.problems
    assert "missing field 'tool_is_idle'" in problems
    assert any(p.startswith("field 'torque' expects float64") for p in problems)
    assert "unknown field 'bogus'" in problems
    assert len(problems) == 3


def test_boolean_field_rejects_int():
    b = Broker()
    b.declare_topic(tool_schema())
    with pytest.raises(ValidationError):
        b.publish("/nutrunner/state", {"tool_is_idle": 1, "torque": 0.0})


def test_enum_field_checks_membership():
    b = Broker()
    b.declare_topic(
        TopicSchema("/mode", (FieldSpec("mode", "enum", ("normal", "restart")),))
    )
    env = b.publish("/mode", {"mode": "restart"})
    assert env.payload == {"mode": "restart"}
    with pytest.raises(ValidationError):
        b.publish("/mode", {"mode": "off"})


def test_float64_accepts_int_and_normalizes():
    b = Broker()
    b.declare_topic(tool_schema())
    sub = b.subscribe("/nutrunner/state")
    b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": 2})
    (env,) = sub.poll()
    assert env.payload["torque"] == 2.0
    assert isinstance(env.payload["torque"], float)


def test_per_publisher_fifo_and_seq():
    b = Broker(now_ms=fake_clock())
    b.declare_topic(tool_schema())
    sub = b.subscribe("/nutrunner/state")
    for i in range(5):
        b.publish("/nutrunner/state", {"tool_is_idle": False, "torque": float(i)}, "nut")
    got = sub.poll()
    assert [e.seq for e in got] == [0, 1, 2, 3, 4]
    assert [e.payload["torque"] for e in got] == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert sub.poll() == []


def test_seq_is_per_publisher_and_per_topic():
    b = Broker()
    b.declare_topic(tool_schema("/a"))
    b.declare_topic(tool_schema("/b"))
    msg = {"tool_is_idle": True, "torque": 0.0}
    assert b.publish("/a", msg, "p1").seq == 0
    assert b.publish("/a", msg, "p2").seq == 0
    assert b.publish("/a", msg, "p1").seq == 1
    assert b.publish("/b", msg, "p1").seq == 0


def test_no_replay_for_late_subscriber():
    b = Broker()
    b.declare_topic(tool_schema())
    b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": 1.0})
    sub = b.subscribe("/nutrunner/state")
    assert sub.poll() == []
    b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": 2.0})
    assert [e.payload["torque"] for e in sub.poll()] == [2.0]


def test_capacity_drops_oldest():
    b = Broker()
    b.declare_topic(tool_schema())
    sub = b.subscribe("/nutrunner/state", capacity=3)
    for i in range(5):
        b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": float(i)}, "nut")
    got = sub.poll()
    assert [e.seq for e in got] == [2, 3, 4]
    assert sub.dropped == 2


def test_latest_without_draining():
    b = Broker()
    b.declare_topic(tool_schema())
    sub = b.subscribe("/nutrunner/state")
    assert sub.latest() is None
    b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": 7.0})
    assert sub.latest().payload["torque"] == 7.0
    assert len(sub.poll()) == 1


def test_canonical_envelope_bytes():
    env = Envelope("/a", "p", 3, 12, {"x": 1.5, "b": True})
    assert env.canonical() == (
        b'{"payload":{"b":true,"x":1.5},"publisher":"p","seq":3,"stamp_ms":12,"topic":"/a"}'
    )
    # non-ascii passes through unescaped
    assert canonical_json({"v": "b̂"}) == '{"v":"b̂"}'.encode()


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["p1", "p2"]), st.floats(0, 10, allow_nan=False)),
        max_size=30,
    )
)
def test_subscriber_sees_exact_publish_order(script):
    """Single subscriber sees the global publish order with per-publisher seqs."""
    b = Broker()
    b.declare_topic(tool_schema())
    sub = b.subscribe("/nutrunner/state", capacity=64)
    expected = []
    counters = {"p1": 0, "p2": 0}
    for who, torque in script:
        b.publish("/nutrunner/state", {"tool_is_idle": True, "torque": torque}, who)
        expected.append((who, counters[who], float(torque)))
        counters[who] += 1
    got = [(e.publisher, e.seq, e.payload["torque"]) for e in sub.poll()]
    assert got == expected


def run_script(client, make_sub):
    """Fixed interaction script; returns every observable fact."""
    schema = TopicSchema(
        "/ur10/status",
        (FieldSpec("robot_moving", "boolean"), FieldSpec("mode", "enum", ("auto", "manual"))),
    )
    client.declare_topic(schema)
    client.declare_topic(schema)  # idempotent re-declare
    sub = make_sub("/ur10/status", 2)
    obs = []
    for i in range(4):
        env = client.publish("/ur10/status", {"robot_moving": i % 2 == 0, "mode": "auto"})
        obs.append(("pub", env.seq, env.payload["robot_moving"]))
    for env in sub.poll():
        obs.append(("got", env.seq, env.publisher, env.payload["robot_moving"]))
    try:
        client.publish("/ur10/status", {"robot_moving": "nope", "mode": "auto"})
        obs.append(("bad-pub", "accepted"))
    except BusError:
        obs.append(("bad-pub", "rejected"))
    return obs


def test_tcp_transport_matches_loopback():
    loop_broker = Broker(now_ms=fake_clock())
    loop = BusClient(loop_broker, "node")
    local = run_script(loop, lambda t, c: loop.subscribe(t, c))

    tcp_broker = Broker(now_ms=fake_clock())
    server = BusServer(tcp_broker, port=0).start()
    try:
        tcp = TcpBusClient(port=server.port, name="node")
        try:
            remote = run_script(tcp, lambda t, c: tcp.subscribe(t, c))
        finally:
            tcp.close()
    finally:
        server.stop()

    assert remote == local
    assert local == [
        ("pub", 0, True),
        ("pub", 1, False),
        ("pub", 2, True),
        ("pub", 3, False),
        ("got", 2, "node", True),
        ("got", 3, "node", False),
        ("bad-pub", "rejected"),
    ]


def test_tcp_subscription_poll_roundtrip():
    broker = Broker(now_ms=fake_clock())
    server = BusServer(broker, port=0).start()
    try:
        a = TcpBusClient(port=server.port, name="a")
        bclient = TcpBusClient(port=server.port, name="b")
        try:
            a.declare_topic(tool_schema())
            sub = bclient.subscribe("/nutrunner/state", capacity=8)
            a.publish("/nutrunner/state", {"tool_is_idle": False, "torque": 3.5})
            got = sub.poll()
            assert [(e.publisher, e.seq, e.payload["torque"]) for e in got] == [("a", 0, 3.5)]
            assert sub.poll() == []
        finally:
            a.close()
            bclient.close()
    finally:
        server.stop()
