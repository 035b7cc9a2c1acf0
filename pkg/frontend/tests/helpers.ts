/** Deterministic stub client: a recorded server with controllable timing. */

import type {
  ApiClient,
  BiomarkerInfo,
  CounterfactualInfo,
  ExplanationInfo,
  PosteriorInfo,
  RecordInfo,
} from "../src/api.js";

export class Deferred<T> {
  promise: Promise<T>;
  resolve!: (value: T) => void;
  reject!: (reason?: unknown) => void;

  constructor() {
    this.promise = new Promise<T>((resolve, reject) => {
      this.resolve = resolve;
      this.reject = reject;
    });
  }
}

export const RECORD: RecordInfo = {
  record_id: "case0001",
  patient_id: "p0001",
  acquired_at: 1700000000,
  sampling_rate_hz: 500,
  lead_names: ["I", "II"],
  num_samples: 8192,
};

export const BIOMARKERS: BiomarkerInfo = {
  record_id: "case0001",
  values: {
    heart_rate_bpm: 61.2345,
    rr_rmssd_ms: 104.2,
    qtc_bazett_ms: 423.77,
  },
  quality: {
    heart_rate_bpm: "ok",
    rr_rmssd_ms: "ok",
    qtc_bazett_ms: "ok",
  },
  bins: { heart_rate_bpm: 2, rr_rmssd_ms: 3, qtc_bazett_ms: 3 },
  labels: { heart_rate_bpm: "Mid", rr_rmssd_ms: "High", qtc_bazett_ms: "High" },
};

export const GRAPH = {
  nodes: [
    { name: "heart_rate_bpm", states: ["Low", "Mid", "High"] },
    { name: "rr_rmssd_ms", states: ["Low", "Mid", "High"] },
    { name: "qtc_bazett_ms", states: ["Low", "Mid", "High"] },
    { name: "outcome", states: ["Normal", "MI"] },
  ],
  edges: [
    ["rr_rmssd_ms", "outcome"],
    ["qtc_bazett_ms", "outcome"],
  ] as [string, string][],
};

/** Recorded posterior for an override set: a deterministic function so the
 * test can compute the expected display independently. */
export function recordedPosterior(overrides: Record<string, number>): PosteriorInfo {
  const rmssd = overrides["rr_rmssd_ms"] ?? BIOMARKERS.bins["rr_rmssd_ms"];
  const qtc = overrides["qtc_bazett_ms"] ?? BIOMARKERS.bins["qtc_bazett_ms"];
  const risk = Math.min(0.995, 0.05 + 0.2372 * (rmssd - 1) + 0.2231 * (qtc - 1));
  const mi = Number(risk.toFixed(6));
  const probs = { Normal: Number((1 - mi).toFixed(6)), MI: mi };
  return { variable: "outcome", probs, argmax: mi > 0.5 ? "MI" : "Normal" };
}

export interface WhatifCall {
  overrides: Record<string, number>;
  deferred: Deferred<PosteriorInfo>;
  respond: () => void;
}

export class StubClient implements ApiClient {
  whatifCalls: WhatifCall[] = [];
  manualWhatif = false;
  explanationPayload: ExplanationInfo | null = null;
  counterfactualPayload: CounterfactualInfo | null = null;

  async listRecords(): Promise<RecordInfo[]> {
    return [RECORD];
  }

  async getBiomarkers(): Promise<BiomarkerInfo> {
    return structuredClone(BIOMARKERS);
  }

  async getPosterior(): Promise<PosteriorInfo> {
    return recordedPosterior({});
  }

  postWhatif(_recordId: string, overrides: Record<string, number>): Promise<PosteriorInfo> {
    const deferred = new Deferred<PosteriorInfo>();
    const respond = () => deferred.resolve(recordedPosterior(overrides));
    this.whatifCalls.push({ overrides: { ...overrides }, deferred, respond });
    if (!this.manualWhatif) respond();
    return deferred.promise;
  }

  async postCounterfactual(): Promise<CounterfactualInfo> {
    if (!this.counterfactualPayload) throw new Error("no counterfactual recorded");
    return this.counterfactualPayload;
  }

  async postExplain(): Promise<ExplanationInfo> {
    if (!this.explanationPayload) throw new Error("no explanation recorded");
    return this.explanationPayload;
  }

  async getGraph() {
    return GRAPH;
  }
}

export function explanationFixture(usedFallback: boolean): ExplanationInfo {
  const facts = [
    {
      fact_id: "F001",
      text: "a prolonged qtc interval raises arrhythmic risk",
      tags: ["LNGQT"],
      source: "demo",
      score: 0.71234,
    },
    {
      fact_id: "F002",
      text: "high rr variability can indicate rhythm irregularity",
      tags: ["AFIB"],
      source: "demo",
      score: 0.55,
    },
  ];
  const base =
    "[Fact 1] a prolonged qtc interval raises arrhythmic risk\n" +
    "[Fact 2] high rr variability can indicate rhythm irregularity\n" +
    "The predicted outcome is MI with probability 0.87.";
  return {
    explanation: usedFallback
      ? base + "\n(Note: Fallback used due to high hallucination risk.)"
      : base,
    hallucination_score: usedFallback ? 0.0 : 0.5,
    used_fallback: usedFallback,
    raw_with_causal: "draft with causal factors",
    raw_rag_only: usedFallback ? base : null,
    warnings: [],
    audit: {
      query: "why MI",
      evidence: {
        bins: BIOMARKERS.bins,
        labels: BIOMARKERS.labels,
      },
      prediction: "MI",
      posterior: recordedPosterior({}),
      drivers: [
        ["qtc_bazett_ms", 0.31],
        ["rr_rmssd_ms", 0.22],
      ],
      retrieved: { enriched_query: "why MI qtc_bazett_ms High MI", empty_query: false, facts },
      delta: null,
      counterfactual: null,
      prompt: "Patient Query: why MI\nKey Causal Factors (from VAE/Graph): qtc_bazett_ms=High",
    },
  };
}

export async function settle(): Promise<void> {
  // drain the microtask queue a few times so chained awaits progress
  for (let i = 0; i < 10; i += 1) await Promise.resolve();
}
