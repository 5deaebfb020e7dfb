// Seq-ordered projection of the controller's event log into ViewState.
//
// The view applies a record only when its sequence number is exactly the
// next one expected: replayed records are reported as duplicates and
// skipped, a jump forward is reported as a gap so the owner can re-fetch
// the authoritative snapshot. Rendered sequence position never decreases.

import type {
  EventRecord,
  OperatorTask,
  Snapshot,
  Value,
  ViewState,
} from "./types.js";

// The one manual task this cell knows: the supervisor raises the
// request output below, the operator acknowledges over POST
// /operator/ack/place, and the finish closure lowers it again.
export const PLACE_TASK = "place";
export const PLACE_REQUEST_VAR = "opl!";
export const PLACE_DESCRIPTION = "place the bolt pair in the fixture";

const FEED_LIMIT = 250;

let taskIds = 0;

export function initialView(): ViewState {
  return {
    nextSeq: 0,
    tick: 0,
    mode: "normal",
    advisory: null,
    variables: {},
    operations: {},
    planQueue: [],
    planEvents: null,
    started: new Set(),
    tasks: [],
    feed: [],
  };
}

export function activeTask(view: ViewState): OperatorTask | null {
  const last = view.tasks[view.tasks.length - 1];
  return last && last.ack !== "done" ? last : null;
}

function openTask(view: ViewState, tick: number): void {
  if (activeTask(view)) return;
  view.tasks.push({ id: ++taskIds, issuedTick: tick, ack: "pending", queued: false });
}

function closeTask(view: ViewState): void {
  const task = activeTask(view);
  if (task) {
    task.ack = "done";
    task.queued = false;
  }
}

/** Full resync from GET /state; the stream cursor jumps to snap.events. */
export function applySnapshot(view: ViewState, snap: Snapshot): void {
  view.nextSeq = Math.max(view.nextSeq, snap.events);
  view.tick = snap.tick;
  view.mode = snap.mode;
  view.advisory = snap.advisory;
  view.variables = { ...snap.variables };
  view.operations = { ...snap.operations };
  view.planQueue = [...snap.plan.remaining];
  view.planEvents = snap.plan.events ? [...snap.plan.events] : null;
  view.started = new Set(snap.started);
  if (snap.variables[PLACE_REQUEST_VAR] === true) openTask(view, snap.tick);
  else closeTask(view);
}

export type ApplyResult = "applied" | "duplicate" | "gap";

export function apply(view: ViewState, rec: EventRecord): ApplyResult {
  if (rec.seq < view.nextSeq) return "duplicate";
  if (rec.seq > view.nextSeq) return "gap";
  view.nextSeq = rec.seq + 1;
  if (rec.tick > view.tick) view.tick = rec.tick;
  view.feed.push(rec);
  if (view.feed.length > FEED_LIMIT) view.feed.splice(0, view.feed.length - FEED_LIMIT);

  const d = rec.data;
  switch (rec.kind) {
    case "state-delta": {
      const changes = d["changes"] as Record<string, Value>;
      Object.assign(view.variables, changes);
      if (changes[PLACE_REQUEST_VAR] === true) openTask(view, rec.tick);
      if (changes[PLACE_REQUEST_VAR] === false) closeTask(view);
      break;
    }
    case "ability-started": {
      view.started.add(d["ability"] as string);
      if (view.planQueue[0] === (d["event"] as string)) view.planQueue.shift();
      break;
    }
    case "ability-finished":
      view.started.delete(d["ability"] as string);
      break;
    case "operation-phase":
      view.operations[d["operation"] as string] = d["phase"] as string;
      break;
    case "plan-adopted":
      view.planEvents = [...(d["events"] as string[])];
      view.planQueue = [...(d["events"] as string[])];
      view.advisory = null; // adopting a plan ends a planning-stuck advisory
      break;
    case "advisory":
      view.advisory = d["message"] as string;
      break;
    case "mode-change":
      view.mode = d["mode"] as string;
      view.planQueue = [];
      view.planEvents = null;
      if (view.mode === "restart") view.advisory = null;
      break;
    case "operator-command":
      if (d["command"] === "reset_operation") {
        view.planQueue = [];
        view.planEvents = null;
        view.started.clear();
      }
      break;
    // replan-failed and fault carry no view state; they stay in the feed
  }
  return "applied";
}
