/** Bootstrap: wire the store to the DOM with event delegation. */

import { HttpApiClient } from "./api.js";
import { renderApp } from "./render.js";
import { AppStore } from "./store.js";

const API_BASE =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8000";

const store = new AppStore(new HttpApiClient(API_BASE));
const root = document.querySelector<HTMLDivElement>("#app");

function mount(): void {
  if (root) root.innerHTML = renderApp(store.state);
}

store.subscribe(mount);

if (root) {
  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset.action;
    if (!action) return;
    if (action === "dismiss-banner") store.dismissBanner();
    if (action === "retry-load") void store.loadRecords();
    if (action === "reset-overrides") void store.resetOverrides();
    if (action === "set-override") {
      const factor = target.dataset.factor;
      const bin = Number(target.dataset.bin);
      if (factor && Number.isFinite(bin)) void store.setOverride(factor, bin);
    }
    if (action === "request-counterfactual") {
      const picker = root.querySelector<HTMLSelectElement>("[data-role=cf-target]");
      if (picker) void store.requestCounterfactual(picker.value);
    }
  });

  root.addEventListener("change", (event) => {
    const target = event.target as HTMLSelectElement;
    if (target.dataset.action === "select-record") void store.selectRecord(target.value);
  });

  root.addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    if (form.dataset.role !== "explain-form") return;
    event.preventDefault();
    const query = new FormData(form).get("query");
    if (typeof query === "string" && query.trim()) {
      void store.requestExplanation(query.trim());
    }
  });
}

mount();
void store.loadRecords().then(() => store.loadGraph());
