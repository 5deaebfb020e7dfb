import { describe, expect, it } from "vitest";

import {
  activeTask,
  apply,
  applySnapshot,
  initialView,
} from "../src/reducer.js";
import type { EventRecord, Snapshot, ViewState } from "../src/types.js";

let seq = 0;

function rec(kind: string, data: Record<string, unknown>, tick = 1): EventRecord {
  return { seq: seq++, tick, kind, data };
}

function freshView(): ViewState {
  seq = 0;
  return initialView();
}

function snap(extra: Partial<Snapshot> = {}): Snapshot {
  return {
    tick: 7,
    mode: "normal",
    advisory: null,
    variables: { "b̂": "empty", "ti?": true, "opl!": false },
    operations: { TightenBoltPair: "idle" },
    plan: { events: ["runNut.start"], remaining: ["runNut.start"] },
    started: [],
    abilities: {},
    events: 3,
    ...extra,
  };
}

describe("sequence discipline", () => {
  it("applies records in order exactly once", () => {
    const view = freshView();
    const a = rec("state-delta", { changes: { "ti?": false }, source: "inbound" });
    const b = rec("state-delta", { changes: { "ti?": true }, source: "inbound" });
    expect(apply(view, a)).toBe("applied");
    expect(apply(view, b)).toBe("applied");
    expect(view.nextSeq).toBe(2);
    expect(view.variables["ti?"]).toBe(true);
  });

  it("skips replayed records without touching state", () => {
    const view = freshView();
    const a = rec("state-delta", { changes: { "b̂": "placed" }, source: "operator" });
    const b = rec("state-delta", { changes: { "b̂": "empty" }, source: "operator" });
    apply(view, a);
    apply(view, b);
    // a replay of the first record must not roll the value back
    expect(apply(view, a)).toBe("duplicate");
    expect(view.variables["b̂"]).toBe("empty");
    expect(view.nextSeq).toBe(2);
    expect(view.feed).toHaveLength(2);
  });

  it("reports a forward jump as a gap and stays put", () => {
    const view = freshView();
    apply(view, rec("state-delta", { changes: {}, source: "inbound" }));
    const ahead: EventRecord = {
      seq: 9,
      tick: 4,
      kind: "state-delta",
      data: { changes: { "ti?": false }, source: "inbound" },
    };
    expect(apply(view, ahead)).toBe("gap");
    expect(view.nextSeq).toBe(1);
    expect(view.variables["ti?"]).toBeUndefined();
  });

  it("snapshot application never moves the cursor backwards", () => {
    const view = freshView();
    applySnapshot(view, snap({ events: 10 }));
    expect(view.nextSeq).toBe(10);
    applySnapshot(view, snap({ events: 3 }));
    expect(view.nextSeq).toBe(10);
  });
});

describe("plan and lifecycle projection", () => {
  it("tracks the remaining start order as abilities launch", () => {
    const view = freshView();
    apply(
      view,
      rec("plan-adopted", {
        events: ["runNut.start", "moveToPosition(BP).start"],
        reason: "goals-changed",
        goals: ["TightenBoltPair"],
      }),
    );
    expect(view.planQueue).toEqual(["runNut.start", "moveToPosition(BP).start"]);
    apply(view, rec("ability-started", { ability: "runNut", event: "runNut.start" }));
    expect(view.planQueue).toEqual(["moveToPosition(BP).start"]);
    expect(view.started.has("runNut")).toBe(true);
    apply(view, rec("ability-finished", { ability: "runNut", event: "runNut.finish" }));
    expect(view.started.has("runNut")).toBe(false);
  });

  it("adopting a plan clears a standing advisory", () => {
    const view = freshView();
    apply(view, rec("advisory", { message: "planning stuck" }));
    expect(view.advisory).toBe("planning stuck");
    apply(view, rec("plan-adopted", { events: [], reason: "no-plan", goals: [] }));
    expect(view.advisory).toBeNull();
  });

  it("mode changes drop the plan, reset clears started memory", () => {
    const view = freshView();
    apply(view, rec("plan-adopted", { events: ["x.start"], reason: "r", goals: [] }));
    apply(view, rec("ability-started", { ability: "x", event: "x.start" }));
    apply(view, rec("mode-change", { mode: "restart" }));
    expect(view.mode).toBe("restart");
    expect(view.planQueue).toEqual([]);
    apply(
      view,
      rec("operator-command", {
        command: "reset_operation",
        operation: "TightenBoltPair",
        source: "api",
      }),
    );
    expect(view.started.size).toBe(0);
    apply(view, rec("operation-phase", { operation: "TightenBoltPair", phase: "reset" }));
    expect(view.operations["TightenBoltPair"]).toBe("reset");
  });
});

describe("operator task inbox", () => {
  it("raising the request opens one task, lowering it closes it", () => {
    const view = freshView();
    apply(view, rec("state-delta", { changes: { "opl!": true }, source: "dispatch" }, 5));
    const task = activeTask(view);
    expect(task).not.toBeNull();
    expect(task!.issuedTick).toBe(5);
    expect(task!.ack).toBe("pending");
    // repeated deltas while the request stays up do not spawn twins
    apply(view, rec("state-delta", { changes: { "opl!": true }, source: "dispatch" }, 6));
    expect(view.tasks).toHaveLength(1);
    apply(view, rec("state-delta", { changes: { "opl!": false }, source: "closure" }, 8));
    expect(activeTask(view)).toBeNull();
    expect(view.tasks[0]!.ack).toBe("done");
  });

  it("a re-raised request is a fresh task instance with its own ack", () => {
    const view = freshView();
    apply(view, rec("state-delta", { changes: { "opl!": true }, source: "dispatch" }));
    view.tasks[0]!.ack = "sent";
    apply(view, rec("state-delta", { changes: { "opl!": false }, source: "closure" }));
    apply(view, rec("state-delta", { changes: { "opl!": true }, source: "dispatch" }, 9));
    expect(view.tasks).toHaveLength(2);
    expect(view.tasks[1]!.ack).toBe("pending");
    expect(view.tasks[1]!.id).not.toBe(view.tasks[0]!.id);
  });

  it("snapshots rebuild the pending task from the request variable", () => {
    const view = freshView();
    applySnapshot(view, snap({ variables: { "opl!": true }, tick: 12 }));
    expect(activeTask(view)).not.toBeNull();
    expect(activeTask(view)!.issuedTick).toBe(12);
    applySnapshot(view, snap({ variables: { "opl!": false }, events: 20 }));
    expect(activeTask(view)).toBeNull();
  });
});
