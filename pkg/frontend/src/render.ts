// Pure view -> HTML string rendering. No DOM access here so the whole
// layer is testable in Node; main.ts owns mounting and event wiring.

import { activeTask } from "./reducer.js";
import type {
  EventRecord,
  ModelDoc,
  UiState,
  Value,
  VariableDoc,
  ViewState,
} from "./types.js";

export function esc(s: unknown): string {
  return String(s)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function valueCell(v: Value | undefined): string {
  if (v === true) return `<td class="val bool-true">true</td>`;
  if (v === false) return `<td class="val bool-false">false</td>`;
  return `<td class="val">${esc(v ?? "?")}</td>`;
}

const KIND_ORDER: { kind: VariableDoc["kind"]; label: string }[] = [
  { kind: "measured", label: "measured" },
  { kind: "estimated", label: "estimated" },
  { kind: "output", label: "output" },
  { kind: "ability-state", label: "ability lifecycle" },
];

export function renderStateTable(view: ViewState, model: ModelDoc): string {
  const rows: string[] = [];
  for (const group of KIND_ORDER) {
    const vars = model.variables.filter((v) => v.kind === group.kind);
    if (!vars.length) continue;
    rows.push(`<tr class="group"><td colspan="3">${esc(group.label)}</td></tr>`);
    for (const v of vars) {
      const badge =
        v.kind === "estimated"
          ? `<span class="badge kind estimated">belief</span>`
          : "";
      rows.push(
        `<tr><td>${esc(v.name)}</td>${valueCell(view.variables[v.name])}` +
          `<td>${badge}</td></tr>`,
      );
    }
  }
  return `<table>${rows.join("")}</table>`;
}

export function renderOperations(view: ViewState, model: ModelDoc): string {
  const items = model.operations.map((op) => {
    const phase = view.operations[op.name] ?? "idle";
    const reset =
      view.mode === "restart"
        ? ` <button data-action="reset-op" data-op="${esc(op.name)}">reset</button>`
        : "";
    return (
      `<li><span class="phase-${esc(phase)}">${esc(phase)}</span> ` +
      `${esc(op.name)}${reset}</li>`
    );
  });
  return `<ul>${items.join("")}</ul>`;
}

export function renderPlan(view: ViewState): string {
  if (!view.planQueue.length) {
    const note =
      view.mode === "restart" ? "planning paused" : "no pending start events";
    return `<p class="meta">${note}</p>`;
  }
  const items = view.planQueue.map(
    (ev, i) =>
      `<li${i === 0 ? ` class="plan-head"` : ""}>${i === 0 ? "&#9656; " : ""}${esc(ev)}</li>`,
  );
  const started = view.started.size
    ? `<p class="meta">running: ${esc([...view.started].sort().join(", "))}</p>`
    : "";
  return `<ul>${items.join("")}</ul>${started}`;
}

export function renderTasks(view: ViewState, ui: UiState): string {
  if (!view.tasks.length) return `<p class="meta">no manual tasks yet</p>`;
  const cards = view.tasks.slice(-4).map((t) => {
    const current = t === activeTask(view);
    const button = current
      ? `<button class="primary" data-action="ack" ${t.ack !== "pending" ? "disabled" : ""}>` +
        `${t.ack === "sent" ? "sent" : "acknowledge"}</button>`
      : "";
    const queued =
      t.queued && ui.connection !== "connected"
        ? `<span class="queued-note">queued, retrying on reconnect</span>`
        : "";
    return (
      `<div class="task${t.ack === "done" ? " done" : ""}">` +
      `<span class="desc">place the bolt pair in the fixture</span>` +
      `<span class="meta">t${t.issuedTick}</span>${queued}${button}</div>`
    );
  });
  return cards.join("");
}

export function renderRestartPanel(
  view: ViewState,
  model: ModelDoc,
  ui: UiState,
): string {
  const inRestart = view.mode === "restart";
  const modeButton = inRestart
    ? `<button data-action="exit-restart">resume normal mode</button>`
    : `<button class="warn" data-action="enter-restart">enter restart mode</button>`;
  if (!inRestart) {
    return `<div class="restart-row">${modeButton}</div>` +
      `<p class="meta">restart mode pauses automatic execution and unlocks recovery controls</p>`;
  }

  const restartAbilities = model.abilities.filter((a) => a.restart_only);
  const abilityButtons = restartAbilities
    .map(
      (a) =>
        `<button data-action="start-ability" data-ability="${esc(a.name)}">start ${esc(a.name)}</button>`,
    )
    .join(" ");

  const estimated = model.variables.filter((v) => v.kind === "estimated");
  const varOptions = estimated
    .map((v) => `<option value="${esc(v.name)}">${esc(v.name)}</option>`)
    .join("");
  const draft = ui.draft;
  const chosen = draft
    ? estimated.find((v) => v.name === draft.name)
    : estimated[0];
  const valueOptions = (chosen?.domain ?? [])
    .map(
      (dv) =>
        `<option value="${esc(String(dv))}"${draft && String(dv) === draft.value ? " selected" : ""}>${esc(String(dv))}</option>`,
    )
    .join("");

  let confirm = "";
  if (draft && draft.confirming) {
    const old = view.variables[draft.name];
    confirm =
      `<div class="confirm-box">${esc(draft.name)}: ${esc(old ?? "?")} ` +
      `<span class="arrow">&rarr;</span> ${esc(draft.value)} ` +
      `<button class="warn" data-action="est-apply">apply</button> ` +
      `<button data-action="est-cancel">cancel</button></div>`;
  }

  return (
    `<div class="restart-row">${modeButton}</div>` +
    `<div class="restart-row">${abilityButtons || "<span class='meta'>no restart abilities</span>"}</div>` +
    `<div class="restart-row">` +
    `<select data-role="est-var">${varOptions}</select>` +
    `<select data-role="est-value">${valueOptions}</select>` +
    `<button data-action="est-confirm">edit&hellip;</button>` +
    `</div>` +
    confirm
  );
}

function feedLine(rec: EventRecord): string {
  const detail = esc(JSON.stringify(rec.data));
  return (
    `<li class="kind-${esc(rec.kind)}"><span class="seq">#${rec.seq} t${rec.tick}</span> ` +
    `<span class="kind">${esc(rec.kind)}</span> ${detail}</li>`
  );
}

export function renderFeed(view: ViewState): string {
  const recent = view.feed.slice(-80).reverse();
  return `<ul class="feed">${recent.map(feedLine).join("")}</ul>`;
}

export function renderErrors(ui: UiState): string {
  if (!ui.errors.length) return "";
  const items = ui.errors.map((e) => `<li>${esc(e)}</li>`).join("");
  return (
    `<ul class="errors">${items}</ul>` +
    `<button data-action="clear-errors">dismiss</button>`
  );
}

export function renderApp(
  view: ViewState,
  model: ModelDoc | null,
  ui: UiState,
): string {
  if (!model) return `<p class="boot">loading model&hellip;</p>`;

  const banners: string[] = [];
  if (ui.connection === "disconnected") {
    banners.push(
      `<div class="banner disconnect">event stream lost, resuming from #${view.nextSeq}&hellip;</div>`,
    );
  }
  if (view.mode === "restart") {
    banners.push(
      `<div class="banner paused">restart mode: automatic execution of operations is paused</div>`,
    );
  }
  if (view.advisory) {
    banners.push(`<div class="banner advisory">${esc(view.advisory)}</div>`);
  }

  const stale = ui.stale ? `<span class="badge stale">stale view</span>` : "";

  return (
    `<header><h1>${esc(model.name)}</h1>` +
    `<span class="tick">tick ${view.tick}</span>` +
    `<span class="badge mode-${esc(view.mode)}">${esc(view.mode)}</span>` +
    `${stale}<span class="spacer"></span>` +
    `<span class="badge conn-${esc(ui.connection)}">${esc(ui.connection)}</span>` +
    `</header>` +
    banners.join("") +
    `<main>` +
    `<section class="panel"><h2>state</h2>${renderStateTable(view, model)}</section>` +
    `<div>` +
    `<section class="panel"><h2>operations</h2>${renderOperations(view, model)}</section>` +
    `<section class="panel"><h2>plan queue</h2>${renderPlan(view)}</section>` +
    `<section class="panel"><h2>task inbox</h2>${renderTasks(view, ui)}</section>` +
    `</div>` +
    `<div>` +
    `<section class="panel"><h2>restart</h2>${renderRestartPanel(view, model, ui)}${renderErrors(ui)}</section>` +
    `<section class="panel"><h2>events</h2>${renderFeed(view)}</section>` +
    `</div>` +
    `</main>`
  );
}
