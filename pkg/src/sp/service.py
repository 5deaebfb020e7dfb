"""HTTP face of the closed loop.

One background thread owns the executor and the simulated cell and ticks
them on a wall-clock cadence. Every mutating request is queued as a
command and executed between ticks, so the single-writer contract of the
tick loop survives concurrent HTTP traffic. Reads serve the snapshot the
loop published at the end of its latest tick: one tick's state, never a
torn mixture.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .bus import Broker
from .expr import format_predicate
from .model import Model
from .modelfile import ModelSpec
from .project import Project
from .runner import (
    CommandRejected,
    Executor,
    ModeError,
    RunnerError,
    SyncValidationError,
    UnknownNameError,
)
from .simnodes import SimCell
from .synthesis import synthesize

CONSOLE_DIST = Path(__file__).resolve().parents[2] / "frontend" / "dist"


class ServiceLoop:
    """Tick thread plus a between-ticks command queue."""

    def __init__(
        self,
        spec: ModelSpec,
        model: Model,
        *,
        tick_ms: int = 10,
        wall_ms: float | None = None,
        auto_ack: bool = True,
    ):
        self.spec = spec
        self.tick_ms = tick_ms
        # wall cadence may be compressed relative to the virtual clock
        self.wall_s = (tick_ms if wall_ms is None else wall_ms) / 1000.0
        self.now = 0
        self.broker = Broker(now_ms=lambda: self.now)
        self.cell = SimCell(spec, self.broker)
        self.cell.operator.auto_ack = auto_ack
        self.exe = Executor(spec, model, self.broker)
        self._commands: queue.Queue = queue.Queue()
        self._snapshot = self.exe.snapshot()
        self._running = False
        self._thread: threading.Thread | None = None

    # -- lifecycle ------------------------------------------------------

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def _run(self) -> None:
        while self._running:
            started = time.monotonic()
            self._drain_commands()
            self.now += self.tick_ms
            self.cell.step(self.now)
            self.exe.run_tick(self.now)
            self._snapshot = self.exe.snapshot()
            rest = self.wall_s - (time.monotonic() - started)
            if rest > 0:
                time.sleep(rest)

    # -- commands -------------------------------------------------------

    def _drain_commands(self) -> None:
        while True:
            try:
                fn, box, done = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                box["result"] = fn()
            except Exception as exc:  # carried back to the caller
                box["error"] = exc
            done.set()

    def submit(self, fn):
        """Run fn between ticks; block until it has run."""
        box: dict = {}
        done = threading.Event()
        self._commands.put((fn, box, done))
        if not self._running:
            self._drain_commands()
        if not done.wait(timeout=10):
            raise RunnerError("tick loop did not pick up the command")
        if "error" in box:
            raise box["error"]
        return box.get("result")

    # -- reads ----------------------------------------------------------

    def snapshot(self) -> dict:
        return self._snapshot

    def events_since(self, seq: int):
        return self.exe.log.since(seq)


def _model_doc(spec: ModelSpec) -> dict:
    booleans = frozenset(
        v.name for v in spec.model.variables if v.domain.values == (False, True)
    )

    def text(p) -> str:
        return format_predicate(p, booleans)

    return {
        "name": spec.name,
        "variables": [
            {
                "name": v.name,
                "kind": v.kind.value,
                "domain": list(v.domain.values),
            }
            for v in spec.model.variables
        ],
        "abilities": [
            {
                "name": a.name,
                "resource": a.resource,
                "restart_only": a.restart_only,
                "events": sorted(
                    t.event for t in spec.model.transitions if t.ability == a.name
                ),
            }
            for a in spec.abilities.abilities
        ],
        "operations": [
            {
                "name": op.name,
                "precondition": text(op.precondition),
                "goal": text(op.goal.target),
            }
            for op in spec.operations
        ],
        "forbidden": [text(p) for p in spec.forbidden],
        "topics": sorted(t.name for t in spec.topics),
    }


def _http_error(exc: RunnerError) -> JSONResponse:
    if isinstance(exc, UnknownNameError):
        return JSONResponse({"detail": str(exc)}, status_code=404)
    if isinstance(exc, SyncValidationError):
        return JSONResponse(
            {"detail": str(exc), "problems": exc.problems}, status_code=422
        )
    if isinstance(exc, (ModeError, CommandRejected)):
        return JSONResponse({"detail": str(exc)}, status_code=409)
    return JSONResponse({"detail": str(exc)}, status_code=500)


def build_app(
    project: Project,
    *,
    model: Model | None = None,
    tick_ms: int = 10,
    wall_ms: float | None = None,
    auto_ack: bool = True,
    autostart: bool = True,
) -> FastAPI:
    spec = project.spec
    refined = model if model is not None else synthesize(spec.model, spec.forbidden).model
    loop = ServiceLoop(
        spec, refined, tick_ms=tick_ms, wall_ms=wall_ms, auto_ack=auto_ack
    )
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if autostart:
            loop.start()
        yield
        loop.stop()

    app = FastAPI(title=f"supervisor: {project.name}", lifespan=lifespan)
    app.state.loop = loop
    model_doc = _model_doc(spec)

    @app.exception_handler(RunnerError)
    async def _runner_error(request: Request, exc: RunnerError):
        return _http_error(exc)

    # -- reads ----------------------------------------------------------

    @app.get("/state")
    def get_state() -> dict:
        return loop.snapshot()

    @app.get("/model")
    def get_model() -> dict:
        return model_doc

    @app.get("/plan")
    def get_plan() -> dict:
        snap = loop.snapshot()
        return {"mode": snap["mode"], **snap["plan"], "started": snap["started"]}

    @app.get("/operations")
    def get_operations() -> dict:
        return loop.snapshot()["operations"]

    @app.get("/events")
    def get_events(frm: int = Query(0, alias="from"), follow: bool = True):
        # follow=false serves the current backlog and closes; the live
        # stream is for browsers that hold the connection open
        def stream():
            next_seq = frm
            idle = 0.0
            while True:
                batch = loop.events_since(next_seq)
                if batch:
                    idle = 0.0
                    for rec in batch:
                        next_seq = rec.seq + 1
                        payload = json.dumps(rec.to_doc(), ensure_ascii=False)
                        yield f"id: {rec.seq}\nevent: record\ndata: {payload}\n\n"
                    continue
                if not follow:
                    return
                time.sleep(loop.wall_s)
                idle += loop.wall_s
                if idle >= 1.0:
                    idle = 0.0
                    yield ": keepalive\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    # -- mutations (queued into the tick loop) ---------------------------

    @app.post("/mode/{mode}")
    def post_mode(mode: str) -> dict:
        if mode == "restart":
            loop.submit(lambda: loop.exe.enter_restart(source="api"))
        elif mode == "normal":
            loop.submit(lambda: loop.exe.exit_restart(source="api"))
        else:
            raise UnknownNameError(f"unknown mode {mode!r}")
        return {"mode": loop.exe.mode}

    @app.post("/operations/{name}/reset")
    def post_reset(name: str) -> dict:
        loop.submit(lambda: loop.exe.reset_operation(name, source="api"))
        return {"operation": name, "phase": loop.exe.phases[name]}

    @app.post("/estimated")
    def post_estimated(changes: dict) -> dict:
        loop.submit(lambda: loop.exe.sync_estimated(changes, source="api"))
        return {"applied": changes}

    @app.post("/abilities/{name}/start")
    def post_start(name: str) -> dict:
        loop.submit(lambda: loop.exe.start_ability(name, source="api"))
        return {"ability": name}

    @app.post("/operator/ack/{task}")
    def post_ack(task: str) -> dict:
        if task != "place":
            raise UnknownNameError(f"unknown manual task {task!r}")
        pending = loop.cell.operator.request
        loop.submit(loop.cell.operator.ack_now)
        return {"task": task, "acknowledged": pending}

    if CONSOLE_DIST.is_dir():
        app.mount(
            "/console", StaticFiles(directory=CONSOLE_DIST, html=True), name="console"
        )

    return app
