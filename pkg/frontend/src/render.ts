/**
 * Pure view functions: ViewState in, HTML string out. No inference happens
 * here; every number rendered is a field of an API response, rounded to 3
 * decimals for display with the exact value preserved on hover.
 */

import type { CounterfactualInfo, PosteriorInfo } from "./api.js";
import type { ViewState } from "./store.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function displayProb(p: number): string {
  return p.toFixed(3);
}

export function renderBanner(state: ViewState): string {
  if (!state.banner) return "";
  return (
    `<div class="banner" role="alert">${escapeHtml(state.banner)}` +
    `<button data-action="dismiss-banner">dismiss</button>` +
    `<button data-action="retry-load">retry</button></div>`
  );
}

export function renderPosteriorBars(posterior: PosteriorInfo, kind: string): string {
  const rows = Object.entries(posterior.probs)
    .map(([st, p]) => {
      const shown = displayProb(p);
      const width = Math.round(p * 100);
      const top = st === posterior.argmax ? " top" : "";
      return (
        `<div class="bar-row${top}" data-state="${escapeHtml(st)}">` +
        `<span class="bar-label">${escapeHtml(st)}</span>` +
        `<span class="bar" style="width:${width}%"></span>` +
        `<span class="bar-value" title="${String(p)}">${shown}</span></div>`
      );
    })
    .join("");
  return `<div class="posterior" data-kind="${kind}">${rows}</div>`;
}

export function renderRecordBrowser(state: ViewState): string {
  if (state.records.length === 0) {
    return `<section id="browser"><p class="empty">No records in the store yet.</p></section>`;
  }
  const options = state.records
    .map((r) => {
      const selected = r.record_id === state.selectedRecordId ? " selected" : "";
      return `<option value="${escapeHtml(r.record_id)}"${selected}>${escapeHtml(r.record_id)}</option>`;
    })
    .join("");
  let table = "";
  if (state.biomarkers) {
    const rows = Object.entries(state.biomarkers.quality)
      .map(([factor, quality]) => {
        const value = state.biomarkers!.values[factor];
        const label = state.biomarkers!.labels[factor] ?? "—";
        const shown = value === undefined ? "—" : value.toFixed(1);
        return (
          `<tr data-factor="${escapeHtml(factor)}">` +
          `<td>${escapeHtml(factor)}</td>` +
          `<td title="${value === undefined ? "" : String(value)}">${shown}</td>` +
          `<td>${escapeHtml(label)}</td>` +
          `<td class="quality-${escapeHtml(quality)}">${escapeHtml(quality)}</td></tr>`
        );
      })
      .join("");
    table =
      `<table class="biomarkers"><thead><tr>` +
      `<th>factor</th><th>value</th><th>bin</th><th>quality</th></tr></thead>` +
      `<tbody>${rows}</tbody></table>`;
  }
  return (
    `<section id="browser"><label>Record ` +
    `<select data-action="select-record">${options}</select></label>${table}</section>`
  );
}

export function renderWhatifPanel(state: ViewState): string {
  if (!state.selectedRecordId || !state.biomarkers || !state.baselinePosterior) {
    return `<section id="whatif"></section>`;
  }
  const selectors = Object.entries(state.biomarkers.bins)
    .map(([factor, baselineBin]) => {
      const states = state.factorStates[factor] ?? [];
      const active = state.overrides[factor] ?? baselineBin;
      const buttons = states
        .map((label, idx) => {
          const bin = idx + 1;
          const cls = [
            bin === active ? "active" : "",
            bin === baselineBin ? "baseline" : "",
          ]
            .filter(Boolean)
            .join(" ");
          return (
            `<button class="${cls}" data-action="set-override" ` +
            `data-factor="${escapeHtml(factor)}" data-bin="${bin}">${escapeHtml(label)}</button>`
          );
        })
        .join("");
      const inlineError =
        state.factorError && state.factorError.factor.includes(factor)
          ? `<span class="factor-error">${escapeHtml(state.factorError.message)}</span>`
          : "";
      return (
        `<div class="factor-row" data-factor="${escapeHtml(factor)}">` +
        `<span class="factor-name">${escapeHtml(factor)}</span>${buttons}${inlineError}</div>`
      );
    })
    .join("");
  const pending = state.pending.whatif ? ` <span class="pending">updating…</span>` : "";
  const whatif = state.whatifPosterior
    ? renderPosteriorBars(state.whatifPosterior, "whatif")
    : "";
  return (
    `<section id="whatif"><h2>What-if${pending}</h2>${selectors}` +
    `<button data-action="reset-overrides">reset</button>` +
    `<div class="posterior-pair">` +
    `<div><h3>baseline</h3>${renderPosteriorBars(state.baselinePosterior, "baseline")}</div>` +
    `<div><h3>with overrides</h3>${whatif}</div>` +
    `</div></section>`
  );
}

export function renderCounterfactualChips(result: CounterfactualInfo): string {
  if (!result.achieved) {
    return `<p class="cf-failed">No edit of the allowed size reaches ${escapeHtml(result.target)}.</p>`;
  }
  if (result.edits.length === 0) {
    return `<p class="cf-trivial">Already assessed as ${escapeHtml(result.target)}; no edit needed.</p>`;
  }
  const chips = result.edits
    .map(
      (e) =>
        `<span class="chip" data-factor="${escapeHtml(e.factor)}">` +
        `${escapeHtml(e.factor)}: ${escapeHtml(e.from_label ?? "?")} &rarr; ${escapeHtml(e.to_label)}</span>`,
    )
    .join("");
  return `<div class="chips">${chips}</div>`;
}

export function renderCounterfactualPanel(state: ViewState): string {
  if (!state.selectedRecordId) return `<section id="counterfactual"></section>`;
  const options = state.outcomeStates
    .map((s) => `<option value="${escapeHtml(s)}">${escapeHtml(s)}</option>`)
    .join("");
  const body = state.counterfactual
    ? renderCounterfactualChips(state.counterfactual) +
      `<div class="cf-posterior">` +
      renderPosteriorBars(
        {
          variable: "outcome",
          probs: state.counterfactual.posterior_after,
          argmax: argmaxOf(state.counterfactual.posterior_after),
        },
        "counterfactual",
      ) +
      `</div>`
    : "";
  const pending = state.pending.counterfactual ? ` <span class="pending">searching…</span>` : "";
  return (
    `<section id="counterfactual"><h2>Counterfactual${pending}</h2>` +
    `<label>Target <select data-role="cf-target">${options}</select></label>` +
    `<button data-action="request-counterfactual">find minimal edit</button>${body}</section>`
  );
}

function argmaxOf(probs: Record<string, number>): string {
  let best = "";
  let bestP = -1;
  for (const [st, p] of Object.entries(probs)) {
    if (p > bestP) {
      best = st;
      bestP = p;
    }
  }
  return best;
}

/** Replace "[Fact i]" citations with anchors into the fact list. */
export function linkFactTags(explanation: string): string {
  return escapeHtml(explanation).replace(
    /\[\s*Fact\s*(\d+)\s*\]/gi,
    (_m, idx) => `<a class="fact-tag" href="#fact-${idx}" data-fact="${idx}">[Fact ${idx}]</a>`,
  );
}

export function renderExplanationPanel(state: ViewState): string {
  if (!state.selectedRecordId) return `<section id="explanation"></section>`;
  const pending = state.pending.explanation ? ` <span class="pending">generating…</span>` : "";
  let body = "";
  if (state.explanation) {
    const e = state.explanation;
    const badge = e.used_fallback
      ? `<span class="badge fallback-badge" title="regenerated from retrieval only">fallback used</span>`
      : `<span class="badge grounded-badge">grounded</span>`;
    const gauge =
      `<div class="hr-gauge" title="${String(e.hallucination_score)}">` +
      `HR <meter min="0" max="1" high="0.5" value="${e.hallucination_score}"></meter> ` +
      `<span class="hr-value">${displayProb(e.hallucination_score)}</span></div>`;
    const facts = e.audit.retrieved.facts
      .map(
        (f, i) =>
          `<li id="fact-${i + 1}" data-fact-id="${escapeHtml(f.fact_id)}">` +
          `<span class="fact-score" title="${String(f.score)}">${displayProb(f.score)}</span> ` +
          `${escapeHtml(f.text)}</li>`,
      )
      .join("");
    const drivers = e.audit.drivers
      .map(
        ([factor, score]) =>
          `<li>${escapeHtml(factor)} <span title="${String(score)}">${displayProb(score)}</span></li>`,
      )
      .join("");
    const warnings = e.warnings.length
      ? `<ul class="warnings">${e.warnings.map((w) => `<li>${escapeHtml(w)}</li>`).join("")}</ul>`
      : "";
    body =
      `${badge}${gauge}` +
      `<div class="explanation-text">${linkFactTags(e.explanation)}</div>` +
      warnings +
      `<h3>Retrieved facts</h3><ol class="facts">${facts}</ol>` +
      `<details class="audit"><summary>Audit</summary>` +
      `<h4>Drivers</h4><ol>${drivers}</ol>` +
      `<h4>Prompt</h4><pre>${escapeHtml(e.audit.prompt)}</pre>` +
      `<h4>Raw (causal)</h4><pre>${escapeHtml(e.raw_with_causal)}</pre>` +
      (e.raw_rag_only !== null
        ? `<h4>Raw (RAG only)</h4><pre>${escapeHtml(e.raw_rag_only)}</pre>`
        : "") +
      `</details>`;
  }
  return (
    `<section id="explanation"><h2>Explanation${pending}</h2>` +
    `<form data-role="explain-form"><input name="query" type="text" ` +
    `placeholder="Ask about this record" /><button type="submit">explain</button></form>` +
    `${body}</section>`
  );
}

export function renderApp(state: ViewState): string {
  return (
    renderBanner(state) +
    renderRecordBrowser(state) +
    renderWhatifPanel(state) +
    renderCounterfactualPanel(state) +
    renderExplanationPanel(state)
  );
}
