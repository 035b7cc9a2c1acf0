/**
 * Typed client for the pipeline service. Every displayed number in the UI
 * comes from one of these response payloads; the client adds nothing.
 */

export interface RecordInfo {
  record_id: string;
  patient_id: string | null;
  acquired_at: number | null;
  sampling_rate_hz: number;
  lead_names: string[];
  num_samples: number;
}

export interface BiomarkerInfo {
  record_id: string;
  values: Record<string, number>;
  quality: Record<string, string>;
  bins: Record<string, number>;
  labels: Record<string, string>;
}

export interface PosteriorInfo {
  variable: string;
  probs: Record<string, number>;
  argmax: string;
}

export interface CounterfactualEdit {
  factor: string;
  from_bin: number | null;
  to_bin: number;
  from_label: string | null;
  to_label: string;
}

export interface CounterfactualInfo {
  target: string;
  edits: CounterfactualEdit[];
  achieved: boolean;
  posterior_after: Record<string, number>;
  candidates_examined: number;
}

export interface RetrievedFact {
  fact_id: string;
  text: string;
  tags: string[];
  source: string;
  score: number;
}

export interface ExplanationInfo {
  explanation: string;
  hallucination_score: number;
  used_fallback: boolean;
  raw_with_causal: string;
  raw_rag_only: string | null;
  warnings: string[];
  audit: {
    query: string;
    evidence: { bins: Record<string, number>; labels: Record<string, string> };
    prediction: string;
    posterior: PosteriorInfo;
    drivers: [string, number][];
    retrieved: { enriched_query: string; empty_query: boolean; facts: RetrievedFact[] };
    delta: { deltas: Record<string, number>; baseline_record_id: string; surrogate: boolean } | null;
    counterfactual: CounterfactualInfo | null;
    prompt: string;
  };
}

export interface ApiError {
  status: number;
  code: string;
  error: string;
}

/** Narrow interface consumed by the store; tests substitute a stub. */
export interface ApiClient {
  listRecords(): Promise<RecordInfo[]>;
  getBiomarkers(recordId: string): Promise<BiomarkerInfo>;
  getPosterior(recordId: string): Promise<PosteriorInfo>;
  postWhatif(recordId: string, overrides: Record<string, number>): Promise<PosteriorInfo>;
  postCounterfactual(recordId: string, target: string, maxEdits: number): Promise<CounterfactualInfo>;
  postExplain(recordId: string, query: string, fallbackEnabled: boolean): Promise<ExplanationInfo>;
  getGraph(): Promise<{ nodes: { name: string; states: string[] }[]; edges: [string, string][] }>;
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = `HTTP ${resp.status}`;
    let message = resp.statusText;
    try {
      const body = await resp.json();
      code = body.code ?? code;
      message = body.error ?? message;
    } catch {
      /* non-JSON error body */
    }
    const err: ApiError = { status: resp.status, code, error: message };
    throw err;
  }
  return (await resp.json()) as T;
}

export class HttpApiClient implements ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private get(path: string): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}${path}`);
  }

  private post(path: string, body: unknown): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async listRecords(): Promise<RecordInfo[]> {
    const body = await parseOrThrow<{ records: RecordInfo[] }>(await this.get("/records"));
    return body.records;
  }

  getBiomarkers(recordId: string): Promise<BiomarkerInfo> {
    return this.get(`/records/${recordId}/biomarkers`).then((r) => parseOrThrow(r));
  }

  getPosterior(recordId: string): Promise<PosteriorInfo> {
    return this.get(`/records/${recordId}/posterior`).then((r) => parseOrThrow(r));
  }

  postWhatif(recordId: string, overrides: Record<string, number>): Promise<PosteriorInfo> {
    return this.post(`/records/${recordId}/whatif`, { overrides }).then((r) => parseOrThrow(r));
  }

  postCounterfactual(recordId: string, target: string, maxEdits: number): Promise<CounterfactualInfo> {
    return this.post(`/records/${recordId}/counterfactual`, {
      target,
      max_edits: maxEdits,
    }).then((r) => parseOrThrow(r));
  }

  postExplain(recordId: string, query: string, fallbackEnabled: boolean): Promise<ExplanationInfo> {
    return this.post(`/records/${recordId}/explain`, {
      query,
      fallback_enabled: fallbackEnabled,
    }).then((r) => parseOrThrow(r));
  }

  getGraph(): Promise<{ nodes: { name: string; states: string[] }[]; edges: [string, string][] }> {
    return this.get("/graph").then((r) => parseOrThrow(r));
  }
}
