// Browser entry point: mount, wire DOM events, start the stream.

import { ApiClient, resolveBase } from "./api.js";
import { Controller } from "./controller.js";
import { renderApp } from "./render.js";
import { EventFeed } from "./sse.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const base = resolveBase(window.location.href);
const api = new ApiClient(base);

let scheduled = false;
const controller = new Controller(api, () => {
  // collapse bursts of changes into one paint
  if (scheduled) return;
  scheduled = true;
  requestAnimationFrame(() => {
    scheduled = false;
    root.innerHTML = renderApp(controller.view, controller.model, controller.ui);
  });
});

const feed = new EventFeed(base, {
  onRecord: (rec) => controller.handleRecord(rec),
  onStatus: (status) => controller.handleStatus(status),
});

root.addEventListener("click", (event) => {
  const el = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!el) return;
  switch (el.dataset["action"]) {
    case "ack":
      void controller.ackTask();
      break;
    case "enter-restart":
      void controller.enterRestart();
      break;
    case "exit-restart":
      void controller.exitRestart();
      break;
    case "reset-op":
      void controller.resetOperation(el.dataset["op"] ?? "");
      break;
    case "start-ability":
      void controller.startAbility(el.dataset["ability"] ?? "");
      break;
    case "est-confirm": {
      const name =
        root.querySelector<HTMLSelectElement>("[data-role=est-var]")?.value;
      const value =
        root.querySelector<HTMLSelectElement>("[data-role=est-value]")?.value;
      if (name !== undefined && value !== undefined) {
        controller.pickEstimated(name, value);
        controller.confirmEstimated();
      }
      break;
    }
    case "est-apply":
      void controller.applyEstimated();
      break;
    case "est-cancel":
      controller.cancelEstimated();
      break;
    case "clear-errors":
      controller.clearErrors();
      break;
  }
});

// changing the variable select refreshes the value domain options
root.addEventListener("change", (event) => {
  const el = event.target as HTMLElement;
  if (el.matches("[data-role=est-var]")) {
    const name = (el as HTMLSelectElement).value;
    const doc = controller
      .estimatedVariables()
      .find((v) => v.name === name);
    const first = doc?.domain[0];
    controller.pickEstimated(name, String(first ?? ""));
  }
});

controller
  .boot()
  .then((fromSeq) => feed.start(fromSeq))
  .catch((err) => {
    root.innerHTML = `<p class="boot">failed to reach the supervisor: ${String(err)}</p>`;
  });
