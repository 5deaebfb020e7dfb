"""Deterministic simulated plant for the assembly cell.

Each node mimics one device on the bus: it reads its command topic,
advances a little physics against the shared world, and publishes its
state topic on a fixed cadence.  Nothing here uses wall-clock time or
randomness; stepping the nodes with the same virtual clock always
produces the same message sequence, which is what makes scenario
verdicts reproducible.

Faults are deliberately crude switches:

- ``freeze``            the node stops publishing
- ``drop``              the node stops reading its command topic
- ``withhold-effect``   the node performs the protocol but not the
                        physical effect (tool reports no torque, the
                        operator acks without placing bolts)
- ``displace-robot``    one-shot: the arm is knocked to an off-grid
                        pose and ignores its stale command
"""

from __future__ import annotations

from .bus import Broker
from .modelfile import ModelSpec
from .pipelines import DiscretizeStage
from .runner import declare_topics

FAULT_FREEZE = "freeze"
FAULT_DROP = "drop"
FAULT_WITHHOLD = "withhold-effect"
FAULT_DISPLACE = "displace-robot"

# far from every table pose in max norm
DISPLACED_JOINTS = (0.7, -0.7, 0.7, -0.7, 0.7, -0.7)


class SimWorld:
    """Physical ground truth the nodes agree on."""

    def __init__(self, poses: dict[str, tuple[float, ...]], start: str = "HOME"):
        self.poses = {k: tuple(v) for k, v in poses.items()}
        self.joints = list(self.poses[start])
        self.bolts = "absent"  # absent | loose | tight

    def at_pose(self, name: str, eps: float = 0.02) -> bool:
        goal = self.poses[name]
        return all(abs(a - b) < eps for a, b in zip(self.joints, goal))


class SimNode:
    name = "node"

    def __init__(self, broker: Broker, world: SimWorld, cadence_ms: int = 50):
        self.broker = broker
        self.world = world
        self.cadence_ms = cadence_ms
        self.faults: set[str] = set()
        self._next_pub = 0

    def set_fault(self, kind: str) -> None:
        self.faults.add(kind)

    def clear_fault(self, kind: str) -> None:
        self.faults.discard(kind)

    def step(self, now_ms: int) -> None:
        if FAULT_DROP not in self.faults:
            self._read(now_ms)
        self._advance(now_ms)
        if FAULT_FREEZE not in self.faults and now_ms >= self._next_pub:
            self._publish(now_ms)
            self._next_pub = now_ms + self.cadence_ms

    def _read(self, now_ms: int) -> None:
        pass

    def _advance(self, now_ms: int) -> None:
        pass

    def _publish(self, now_ms: int) -> None:
        raise NotImplementedError


class NutrunnerNode(SimNode):
    """Smart tool: spins on command, reports torque once the bolts give."""

    name = "nutrunner"

    def __init__(
        self,
        broker,
        world,
        *,
        start_latency_ms: int = 30,
        torque_ms: int = 150,
        cadence_ms: int = 50,
    ):
        super().__init__(broker, world, cadence_ms)
        self.start_latency_ms = start_latency_ms
        self.torque_ms = torque_ms
        self.spinning = False
        self.torque = False
        self._spin_at: int | None = None
        self._torque_since: int | None = None
        self._sub = broker.subscribe("/nutrunner/cmd")

    def _read(self, now_ms: int) -> None:
        envs = self._sub.poll()
        if not envs:
            return
        cmd = envs[-1].payload
        run = bool(cmd.get("run_tool_forward")) and not bool(
            cmd.get("set_tool_idle")
        )
        if run and not self.spinning and self._spin_at is None:
            self._spin_at = now_ms + self.start_latency_ms
            self.torque = False
        if not run:
            self.spinning = False
            self.torque = False
            self._spin_at = None
            self._torque_since = None

    def _advance(self, now_ms: int) -> None:
        if self._spin_at is not None and now_ms >= self._spin_at:
            self.spinning = True
            self._spin_at = None
        biting = (
            self.spinning
            and self.world.at_pose("BP")
            and self.world.bolts == "loose"
            and FAULT_WITHHOLD not in self.faults
        )
        if biting:
            if self._torque_since is None:
                self._torque_since = now_ms
            elif now_ms - self._torque_since >= self.torque_ms:
                self.torque = True
                self.world.bolts = "tight"
        else:
            self._torque_since = None

    def _publish(self, now_ms: int) -> None:
        self.broker.publish(
            "/nutrunner/state",
            {
                "tool_is_idle": not self.spinning,
                "tool_is_running_forward": self.spinning,
                "programmed_torque_reached": self.torque,
            },
            publisher=self.name,
        )


class UR10Node(SimNode):
    """Arm: tracks the commanded pose with a fixed joint speed."""

    name = "ur10"

    def __init__(
        self,
        broker,
        world,
        *,
        joint_speed: float = 0.004,  # rad per ms at speed_scale 1.0
        cadence_ms: int = 50,
    ):
        super().__init__(broker, world, cadence_ms)
        self.joint_speed = joint_speed
        self.target: str | None = None
        self.speed_scale = 1.0
        self.halted = False
        self._stale_target: str | None = None
        self._last_step = 0
        self.moving = False
        self._sub = broker.subscribe("/ur10/cmd")

    def _read(self, now_ms: int) -> None:
        envs = self._sub.poll()
        if not envs:
            return
        cmd = envs[-1].payload
        target = cmd.get("target_pose")
        self.speed_scale = float(cmd.get("speed_scale", 1.0))
        if self.halted:
            # a knocked-over arm ignores the command it was executing;
            # only a fresh target wakes it up
            if target != self._stale_target:
                self.halted = False
                self.target = target
        else:
            self.target = target

    def displace(self) -> None:
        self.world.joints = list(DISPLACED_JOINTS)
        self.halted = True
        self._stale_target = self.target
        self.moving = False

    def _advance(self, now_ms: int) -> None:
        dt = now_ms - self._last_step
        self._last_step = now_ms
        if self.halted or self.target is None:
            self.moving = False
            return
        goal = self.world.poses[self.target]
        limit = self.joint_speed * self.speed_scale * dt
        moved = False
        for i, (j, g) in enumerate(zip(self.world.joints, goal)):
            d = g - j
            if abs(d) <= limit:
                self.world.joints[i] = g
            else:
                self.world.joints[i] = j + (limit if d > 0 else -limit)
                moved = True
        self.moving = moved

    def _publish(self, now_ms: int) -> None:
        names = ("j0", "j1", "j2", "j3", "j4", "j5")
        self.broker.publish(
            "/ur10/joint_states",
            {n: float(v) for n, v in zip(names, self.world.joints)},
            publisher=self.name,
        )
        self.broker.publish(
            "/ur10/status", {"robot_moving": self.moving}, publisher=self.name
        )


class RspNode(SimNode):
    """Tool changer: the smart tool stays latched for the whole run."""

    name = "rsp"

    def _publish(self, now_ms: int) -> None:
        self.broker.publish(
            "/rsp/state",
            {"robot_connected_to_smart_tool": True},
            publisher=self.name,
        )


class OperatorNode(SimNode):
    """Human stand-in: answers place requests after a think delay."""

    name = "operator"

    def __init__(
        self,
        broker,
        world,
        *,
        ack_latency_ms: int = 200,
        auto_ack: bool = True,
        cadence_ms: int = 50,
    ):
        super().__init__(broker, world, cadence_ms)
        self.ack_latency_ms = ack_latency_ms
        self.auto_ack = auto_ack
        self.available = True
        self.ack = False
        self.request = False
        self._requested_at: int | None = None
        self._sub = broker.subscribe("/operator/cmd")

    def _read(self, now_ms: int) -> None:
        envs = self._sub.poll()
        if not envs:
            return
        req = bool(envs[-1].payload.get("request_place"))
        if req and not self.request:
            self._requested_at = now_ms
        if not req:
            self.ack = False
            self._requested_at = None
        self.request = req

    def ack_now(self) -> None:
        """Console path: the human presses the done button."""
        if not self.request:
            return
        self._place()

    def _place(self) -> None:
        if FAULT_WITHHOLD not in self.faults and self.world.bolts == "absent":
            self.world.bolts = "loose"
        self.ack = True
        self._requested_at = None

    def _advance(self, now_ms: int) -> None:
        if (
            self.auto_ack
            and self._requested_at is not None
            and now_ms - self._requested_at >= self.ack_latency_ms
        ):
            self._place()

    def _publish(self, now_ms: int) -> None:
        self.broker.publish(
            "/operator/state",
            {"available": self.available, "place_ack": self.ack},
            publisher=self.name,
        )


def pose_table(spec: ModelSpec) -> dict[str, tuple[float, ...]]:
    """The discretizer's pose table is the single source of geometry."""
    for pipe in spec.inbound:
        for stage in pipe.stages:
            if isinstance(stage, DiscretizeStage):
                return {name: tuple(vec) for name, vec in stage.poses}
    raise ValueError("model declares no discretize stage to take poses from")


class SimCell:
    """All four nodes wired onto one broker around a shared world."""

    def __init__(self, spec: ModelSpec, broker: Broker | None = None):
        self.broker = broker if broker is not None else Broker()
        declare_topics(self.broker, spec)
        self.world = SimWorld(pose_table(spec))
        self.nutrunner = NutrunnerNode(self.broker, self.world)
        self.ur10 = UR10Node(self.broker, self.world)
        self.rsp = RspNode(self.broker, self.world)
        self.operator = OperatorNode(self.broker, self.world)
        self.nodes: dict[str, SimNode] = {
            n.name: n
            for n in (self.nutrunner, self.ur10, self.rsp, self.operator)
        }

    def step(self, now_ms: int) -> None:
        for node in self.nodes.values():
            node.step(now_ms)
