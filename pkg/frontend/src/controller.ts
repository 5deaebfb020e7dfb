// Orchestrates the api client, the event feed, and the view.
//
// Commands are fire-and-confirm: a POST only succeeds on the wire, the
// visible effect always arrives back through the event stream. The
// controller therefore never writes authoritative state, only UI state
// (drafts, errors, connection).

import { ApiClient, ApiError } from "./api.js";
import {
  activeTask,
  apply,
  applySnapshot,
  initialView,
  PLACE_TASK,
} from "./reducer.js";
import type {
  EventRecord,
  ModelDoc,
  UiState,
  Value,
  ViewState,
} from "./types.js";

const ERROR_LIMIT = 5;

export class Controller {
  view: ViewState = initialView();
  model: ModelDoc | null = null;
  ui: UiState = {
    connection: "connecting",
    stale: false,
    draft: null,
    errors: [],
  };
  private resyncing = false;

  constructor(
    private readonly api: ApiClient,
    private readonly onChange: () => void = () => {},
  ) {}

  /** Fetch the model document and the first snapshot; returns the
   * sequence number the event feed should start from. */
  async boot(): Promise<number> {
    this.model = await this.api.model();
    const snap = await this.api.state();
    applySnapshot(this.view, snap);
    this.onChange();
    return this.view.nextSeq;
  }

  // --- stream handlers ---------------------------------------------------

  handleRecord(rec: EventRecord): void {
    const result = apply(this.view, rec);
    if (result === "gap") {
      // the stream skipped ahead of us; the snapshot is authoritative
      this.ui.stale = true;
      void this.resnapshot();
    }
    if (result !== "duplicate") this.onChange();
  }

  handleStatus(status: "connected" | "disconnected"): void {
    this.ui.connection = status;
    if (status === "connected") this.retryQueuedAck();
    this.onChange();
  }

  private async resnapshot(): Promise<void> {
    if (this.resyncing) return;
    this.resyncing = true;
    try {
      const snap = await this.api.state();
      applySnapshot(this.view, snap);
      this.ui.stale = false;
    } catch {
      // still stale; next gap or reconnect retries
    } finally {
      this.resyncing = false;
      this.onChange();
    }
  }

  // --- operator task -----------------------------------------------------

  async ackTask(): Promise<void> {
    const task = activeTask(this.view);
    if (!task || task.ack !== "pending") return; // one-shot per instance
    task.ack = "sent";
    this.onChange();
    try {
      await this.api.ack(PLACE_TASK);
      task.queued = false;
    } catch (err) {
      task.ack = "pending";
      if (err instanceof ApiError) {
        this.pushError(`ack rejected: ${err.message}`);
      } else {
        // unreachable server: keep the ack queued and retry on reconnect
        task.queued = true;
      }
    }
    this.onChange();
  }

  private retryQueuedAck(): void {
    const task = activeTask(this.view);
    if (task && task.queued && task.ack === "pending") void this.ackTask();
  }

  // --- restart panel -----------------------------------------------------

  enterRestart(): Promise<void> {
    return this.command(() => this.api.setMode("restart"));
  }

  exitRestart(): Promise<void> {
    return this.command(() => this.api.setMode("normal"));
  }

  resetOperation(name: string): Promise<void> {
    return this.command(() => this.api.resetOperation(name));
  }

  startAbility(name: string): Promise<void> {
    return this.command(() => this.api.startAbility(name));
  }

  private async command(send: () => Promise<unknown>): Promise<void> {
    try {
      await send();
    } catch (err) {
      this.pushError(errorText(err));
    }
    this.onChange();
  }

  // --- estimated-state editor --------------------------------------------

  estimatedVariables() {
    return (this.model?.variables ?? []).filter((v) => v.kind === "estimated");
  }

  pickEstimated(name: string, value: string): void {
    const doc = this.estimatedVariables().find((v) => v.name === name);
    if (!doc) {
      this.pushError(`only estimated variables can be edited, not ${name}`);
      this.onChange();
      return;
    }
    this.ui.draft = { name, value, confirming: false };
    this.onChange();
  }

  confirmEstimated(): void {
    if (this.ui.draft) this.ui.draft.confirming = true;
    this.onChange();
  }

  cancelEstimated(): void {
    this.ui.draft = null;
    this.onChange();
  }

  async applyEstimated(): Promise<void> {
    const draft = this.ui.draft;
    if (!draft || !draft.confirming) return;
    const doc = this.estimatedVariables().find((v) => v.name === draft.name);
    const typed = doc
      ? (doc.domain.find((dv) => String(dv) === draft.value) ?? draft.value)
      : draft.value;
    try {
      await this.api.syncEstimated({ [draft.name]: typed as Value });
      this.ui.draft = null;
    } catch (err) {
      this.pushError(errorText(err));
    }
    this.onChange();
  }

  // --- errors ------------------------------------------------------------

  private pushError(text: string): void {
    this.ui.errors.push(text);
    if (this.ui.errors.length > ERROR_LIMIT) {
      this.ui.errors.splice(0, this.ui.errors.length - ERROR_LIMIT);
    }
  }

  clearErrors(): void {
    this.ui.errors = [];
    this.onChange();
  }
}

function errorText(err: unknown): string {
  if (err instanceof ApiError) {
    return err.problems.length
      ? `${err.message}: ${err.problems.join("; ")}`
      : err.message;
  }
  return String(err instanceof Error ? err.message : err);
}
