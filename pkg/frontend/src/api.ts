// Typed client for the documented endpoints. The console mutates the
// system through these calls and nothing else.

import type { ModelDoc, Snapshot, Value } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly problems: string[] = [],
  ) {
    super(message);
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  url(path: string): string {
    return new URL(path, this.base).toString();
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.url(path), init);
    if (!res.ok) {
      let detail = `${res.status} ${res.statusText}`;
      let problems: string[] = [];
      try {
        const body = (await res.json()) as {
          detail?: string;
          problems?: string[];
        };
        if (body.detail) detail = body.detail;
        if (body.problems) problems = body.problems;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(detail, res.status, problems);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  state(): Promise<Snapshot> {
    return this.request<Snapshot>("state");
  }

  model(): Promise<ModelDoc> {
    return this.request<ModelDoc>("model");
  }

  setMode(mode: "restart" | "normal"): Promise<unknown> {
    return this.post(`mode/${mode}`);
  }

  resetOperation(name: string): Promise<unknown> {
    return this.post(`operations/${encodeURIComponent(name)}/reset`);
  }

  syncEstimated(changes: Record<string, Value>): Promise<unknown> {
    return this.post("estimated", changes);
  }

  startAbility(name: string): Promise<unknown> {
    return this.post(`abilities/${encodeURIComponent(name)}/start`);
  }

  ack(task: string): Promise<unknown> {
    return this.post(`operator/ack/${encodeURIComponent(task)}`);
  }
}

/** Endpoint base: ?api=http://host:port/ beats the /console/ default. */
export function resolveBase(locationHref: string): string {
  const loc = new URL(locationHref);
  const given = loc.searchParams.get("api");
  if (given) {
    return given.endsWith("/") ? given : given + "/";
  }
  // served under /console/, the service root is one level up
  return new URL("..", loc).toString();
}
