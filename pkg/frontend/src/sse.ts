// Server-sent-events consumption with sequence-based resume.
//
// Hand-rolled instead of EventSource so the resume cursor is ours: every
// reconnect asks /events?from=<next unseen seq> and the server replays
// from there. Duplicate suppression is the reducer's job; this layer
// only guarantees the cursor never moves backwards.

import type { EventRecord } from "./types.js";
import type { FetchLike } from "./api.js";

export interface SseFrame {
  id: string | null;
  event: string;
  data: string;
}

/** Incremental parser over the text/event-stream framing. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseFrame[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const frames: SseFrame[] = [];
    for (;;) {
      const cut = this.buffer.indexOf("\n\n");
      if (cut < 0) break;
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const frame: SseFrame = { id: null, event: "message", data: "" };
      let sawData = false;
      for (const line of block.split("\n")) {
        if (line.startsWith(":")) continue; // comment / keepalive
        const colon = line.indexOf(":");
        if (colon < 0) continue;
        const field = line.slice(0, colon);
        const value = line.slice(colon + 1).replace(/^ /, "");
        if (field === "id") frame.id = value;
        else if (field === "event") frame.event = value;
        else if (field === "data") {
          frame.data = sawData ? frame.data + "\n" + value : value;
          sawData = true;
        }
      }
      if (sawData) frames.push(frame);
    }
    return frames;
  }
}

export interface FeedHandlers {
  onRecord(rec: EventRecord): void;
  onStatus(status: "connected" | "disconnected"): void;
}

export interface FeedOptions {
  retryMs?: number;
  fetchFn?: FetchLike;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class EventFeed {
  private nextSeq = 0;
  private stopped = false;
  private abort: AbortController | null = null;
  private readonly retryMs: number;
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly base: string,
    private readonly handlers: FeedHandlers,
    opts: FeedOptions = {},
  ) {
    this.retryMs = opts.retryMs ?? 1000;
    this.fetchFn = opts.fetchFn ?? ((u, i) => fetch(u, i));
  }

  get cursor(): number {
    return this.nextSeq;
  }

  start(fromSeq: number): Promise<void> {
    this.nextSeq = fromSeq;
    this.stopped = false;
    return this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.abort?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.abort = new AbortController();
      try {
        const res = await this.fetchFn(
          new URL(`events?from=${this.nextSeq}`, this.base).toString(),
          { signal: this.abort.signal },
        );
        if (!res.ok || !res.body) throw new Error(`stream ${res.status}`);
        this.handlers.onStatus("connected");
        await this.consume(res.body);
      } catch {
        // fall through to retry
      }
      if (this.stopped) return;
      this.handlers.onStatus("disconnected");
      await sleep(this.retryMs);
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
        if (frame.event !== "record") continue;
        const rec = JSON.parse(frame.data) as EventRecord;
        this.handlers.onRecord(rec);
        if (rec.seq >= this.nextSeq) this.nextSeq = rec.seq + 1;
      }
    }
  }
}
