import { describe, expect, it } from "vitest";

import type { CounterfactualInfo } from "../src/api.js";
import {
  linkFactTags,
  renderCounterfactualChips,
  renderExplanationPanel,
  renderPosteriorBars,
  renderRecordBrowser,
} from "../src/render.js";
import { initialState } from "../src/store.js";
import { BIOMARKERS, RECORD, explanationFixture, recordedPosterior } from "./helpers.js";

describe("posterior bars", () => {
  it("shows three decimals with the exact value on hover", () => {
    const posterior = recordedPosterior({ qtc_bazett_ms: 2 });
    const html = renderPosteriorBars(posterior, "whatif");
    for (const [state, p] of Object.entries(posterior.probs)) {
      expect(html).toContain(`data-state="${state}"`);
      expect(html).toContain(`title="${String(p)}">${p.toFixed(3)}<`);
    }
  });

  it("marks the argmax row", () => {
    const html = renderPosteriorBars(
      { variable: "outcome", probs: { Normal: 0.3, MI: 0.7 }, argmax: "MI" },
      "baseline",
    );
    expect(html).toContain('class="bar-row top" data-state="MI"');
  });
});

describe("record browser", () => {
  it("renders an empty-state message for an empty store", () => {
    const html = renderRecordBrowser(initialState());
    expect(html).toContain("No records in the store yet.");
  });

  it("renders quality flags in the biomarker table", () => {
    const state = initialState();
    state.records = [RECORD];
    state.selectedRecordId = RECORD.record_id;
    state.biomarkers = structuredClone(BIOMARKERS);
    state.biomarkers.quality.qtc_bazett_ms = "low_confidence";
    const html = renderRecordBrowser(state);
    expect(html).toContain('class="quality-low_confidence"');
    expect(html).toContain("heart_rate_bpm");
  });
});

describe("counterfactual chips", () => {
  const achieved: CounterfactualInfo = {
    target: "Normal",
    edits: [
      { factor: "qtc_bazett_ms", from_bin: 3, to_bin: 2, from_label: "High", to_label: "Mid" },
      { factor: "rr_rmssd_ms", from_bin: 3, to_bin: 1, from_label: "High", to_label: "Low" },
    ],
    achieved: true,
    posterior_after: { Normal: 0.8, MI: 0.2 },
    candidates_examined: 12,
  };

  it("renders edit chips in API order", () => {
    const html = renderCounterfactualChips(achieved);
    const first = html.indexOf("qtc_bazett_ms: High &rarr; Mid");
    const second = html.indexOf("rr_rmssd_ms: High &rarr; Low");
    expect(first).toBeGreaterThan(-1);
    expect(second).toBeGreaterThan(first);
  });

  it("renders an explicit notice when not achievable", () => {
    const failed: CounterfactualInfo = {
      ...achieved,
      achieved: false,
      edits: [],
    };
    const html = renderCounterfactualChips(failed);
    expect(html).toContain("No edit of the allowed size reaches Normal");
  });
});

describe("fact-tag linking", () => {
  it("turns tags into anchors and escapes the rest", () => {
    const html = linkFactTags("see [Fact 2] & [fact 10]");
    expect(html).toContain('<a class="fact-tag" href="#fact-2" data-fact="2">[Fact 2]</a>');
    expect(html).toContain('href="#fact-10"');
    expect(html).toContain("&amp;");
  });
});

describe("explanation panel", () => {
  function stateWith(usedFallback: boolean) {
    const state = initialState();
    state.records = [RECORD];
    state.selectedRecordId = RECORD.record_id;
    state.explanation = explanationFixture(usedFallback);
    return state;
  }

  it("fallback state renders the badge, note and rag-only audit", () => {
    const html = renderExplanationPanel(stateWith(true));
    expect(html).toContain("fallback-badge");
    expect(html).toContain("fallback used");
    expect(html).toContain("Fallback used due to high hallucination risk");
    expect(html).toContain("Raw (RAG only)");
    expect(html).toMatchSnapshot();
  });

  it("grounded state renders no fallback badge and links fact tags", () => {
    const html = renderExplanationPanel(stateWith(false));
    expect(html).not.toContain("fallback-badge");
    expect(html).toContain("grounded-badge");
    expect(html).toContain('href="#fact-1"');
    expect(html).toContain('id="fact-1"');
    expect(html).toContain('id="fact-2"');
    expect(html).toMatchSnapshot();
  });

  it("hr gauge shows the payload value rounded with exact hover", () => {
    const html = renderExplanationPanel(stateWith(false));
    expect(html).toContain('class="hr-gauge" title="0.5"');
    expect(html).toContain('<span class="hr-value">0.500</span>');
  });
});
