// Wire types mirrored from the supervisor's HTTP service.

export type Value = string | number | boolean;

export interface EventRecord {
  seq: number;
  tick: number;
  kind: string;
  data: Record<string, unknown>;
}

export interface Snapshot {
  tick: number;
  mode: string;
  advisory: string | null;
  variables: Record<string, Value>;
  operations: Record<string, string>;
  plan: { events: string[] | null; remaining: string[] };
  started: string[];
  abilities: Record<string, string>;
  /** log length, i.e. the sequence number the next record will get */
  events: number;
}

export type VariableKind = "measured" | "estimated" | "output" | "ability-state";

export interface VariableDoc {
  name: string;
  kind: VariableKind;
  domain: Value[];
}

export interface AbilityDoc {
  name: string;
  resource: string;
  restart_only: boolean;
  events: string[];
}

export interface OperationDoc {
  name: string;
  precondition: string;
  goal: string;
}

export interface ModelDoc {
  name: string;
  variables: VariableDoc[];
  abilities: AbilityDoc[];
  operations: OperationDoc[];
  forbidden: string[];
  topics: string[];
}

// --- console-side state --------------------------------------------------

export type AckState = "pending" | "sent" | "done";

export interface OperatorTask {
  id: number;
  issuedTick: number;
  ack: AckState;
  /** ack attempted while unreachable; will retry on reconnect */
  queued: boolean;
}

export interface ViewState {
  /** next event sequence number the view expects; never decreases */
  nextSeq: number;
  tick: number;
  mode: string;
  advisory: string | null;
  variables: Record<string, Value>;
  operations: Record<string, string>;
  /** remaining start-order of the adopted plan */
  planQueue: string[];
  planEvents: string[] | null;
  started: Set<string>;
  tasks: OperatorTask[];
  /** bounded tail of raw records for the feed panel */
  feed: EventRecord[];
}

export type Connection = "connecting" | "connected" | "disconnected";

export interface EstimatedDraft {
  name: string;
  value: string;
  confirming: boolean;
}

export interface UiState {
  connection: Connection;
  /** stream gap detected; snapshot re-fetch in flight or failed */
  stale: boolean;
  draft: EstimatedDraft | null;
  errors: string[];
}
