/**
 * View state with stale-response protection.
 *
 * Every request family (posterior/what-if, counterfactual, explanation)
 * carries a monotonically increasing sequence number; a response only
 * lands in the state when it is still the newest request of its family,
 * so out-of-order arrivals can never overwrite fresher data.
 */

import type {
  ApiClient,
  ApiError,
  BiomarkerInfo,
  CounterfactualInfo,
  ExplanationInfo,
  PosteriorInfo,
  RecordInfo,
} from "./api.js";

export interface ViewState {
  records: RecordInfo[];
  selectedRecordId: string | null;
  biomarkers: BiomarkerInfo | null;
  baselinePosterior: PosteriorInfo | null;
  whatifPosterior: PosteriorInfo | null;
  overrides: Record<string, number>;
  counterfactual: CounterfactualInfo | null;
  explanation: ExplanationInfo | null;
  factorStates: Record<string, string[]>;
  outcomeStates: string[];
  banner: string | null;
  factorError: { factor: string; message: string } | null;
  pending: { whatif: boolean; counterfactual: boolean; explanation: boolean };
}

export function initialState(): ViewState {
  return {
    records: [],
    selectedRecordId: null,
    biomarkers: null,
    baselinePosterior: null,
    whatifPosterior: null,
    overrides: {},
    counterfactual: null,
    explanation: null,
    factorStates: {},
    outcomeStates: [],
    banner: null,
    factorError: null,
    pending: { whatif: false, counterfactual: false, explanation: false },
  };
}

type Listener = (state: ViewState) => void;

function isApiError(e: unknown): e is ApiError {
  return typeof e === "object" && e !== null && "status" in e && "code" in e;
}

export class AppStore {
  readonly state: ViewState = initialState();
  private listeners: Listener[] = [];
  private whatifSeq = 0;
  private counterfactualSeq = 0;
  private explanationSeq = 0;
  private selectSeq = 0;

  constructor(private readonly client: ApiClient) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private fail(e: unknown): void {
    this.state.banner = isApiError(e) ? `${e.code}: ${e.error}` : String(e);
    this.notify();
  }

  dismissBanner(): void {
    this.state.banner = null;
    this.notify();
  }

  async loadRecords(): Promise<void> {
    try {
      this.state.records = await this.client.listRecords();
      this.notify();
    } catch (e) {
      this.fail(e);
    }
  }

  async loadGraph(): Promise<void> {
    try {
      const graph = await this.client.getGraph();
      const outcome = graph.nodes[graph.nodes.length - 1];
      this.state.outcomeStates = outcome ? outcome.states : [];
      this.state.factorStates = {};
      for (const node of graph.nodes.slice(0, -1)) {
        this.state.factorStates[node.name] = node.states;
      }
      this.notify();
    } catch (e) {
      this.fail(e);
    }
  }

  async selectRecord(recordId: string): Promise<void> {
    const seq = ++this.selectSeq;
    this.state.selectedRecordId = recordId;
    this.state.overrides = {};
    this.state.whatifPosterior = null;
    this.state.counterfactual = null;
    this.state.explanation = null;
    this.state.factorError = null;
    this.notify();
    try {
      const [biomarkers, posterior] = await Promise.all([
        this.client.getBiomarkers(recordId),
        this.client.getPosterior(recordId),
      ]);
      if (seq !== this.selectSeq) return; // a newer selection won
      this.state.biomarkers = biomarkers;
      this.state.baselinePosterior = posterior;
      this.state.whatifPosterior = posterior;
      this.notify();
    } catch (e) {
      if (seq === this.selectSeq) this.fail(e);
    }
  }

  /** Change one factor's bin; issues a what-if request for the full set. */
  async setOverride(factor: string, bin: number): Promise<void> {
    if (!this.state.selectedRecordId) return;
    const baselineBin = this.state.biomarkers?.bins[factor];
    if (baselineBin === bin) {
      delete this.state.overrides[factor];
    } else {
      this.state.overrides[factor] = bin;
    }
    await this.refreshWhatif();
  }

  async resetOverrides(): Promise<void> {
    this.state.overrides = {};
    this.state.factorError = null;
    // baseline applies immediately; no request needed for the empty set
    this.whatifSeq += 1;
    this.state.whatifPosterior = this.state.baselinePosterior;
    this.state.pending.whatif = false;
    this.notify();
  }

  private async refreshWhatif(): Promise<void> {
    const recordId = this.state.selectedRecordId;
    if (!recordId) return;
    const seq = ++this.whatifSeq;
    const overrides = { ...this.state.overrides };
    this.state.pending.whatif = true;
    this.state.factorError = null;
    this.notify();
    try {
      const posterior = await this.client.postWhatif(recordId, overrides);
      if (seq !== this.whatifSeq) return; // stale response discarded
      this.state.whatifPosterior = posterior;
      this.state.pending.whatif = false;
      this.notify();
    } catch (e) {
      if (seq !== this.whatifSeq) return;
      this.state.pending.whatif = false;
      if (isApiError(e) && e.status === 409) {
        const factor = Object.keys(overrides).sort().join(", ");
        this.state.factorError = { factor, message: e.error };
        this.notify();
      } else {
        this.fail(e);
      }
    }
  }

  async requestCounterfactual(target: string, maxEdits = 2): Promise<void> {
    const recordId = this.state.selectedRecordId;
    if (!recordId) return;
    const seq = ++this.counterfactualSeq;
    this.state.pending.counterfactual = true;
    this.notify();
    try {
      const result = await this.client.postCounterfactual(recordId, target, maxEdits);
      if (seq !== this.counterfactualSeq) return;
      this.state.counterfactual = result;
      this.state.pending.counterfactual = false;
      this.notify();
    } catch (e) {
      if (seq !== this.counterfactualSeq) return;
      this.state.pending.counterfactual = false;
      this.fail(e);
    }
  }

  async requestExplanation(query: string, fallbackEnabled = true): Promise<void> {
    const recordId = this.state.selectedRecordId;
    if (!recordId) return;
    const seq = ++this.explanationSeq;
    this.state.pending.explanation = true;
    this.notify();
    try {
      const payload = await this.client.postExplain(recordId, query, fallbackEnabled);
      if (seq !== this.explanationSeq) return;
      this.state.explanation = payload;
      this.state.pending.explanation = false;
      this.notify();
    } catch (e) {
      if (seq !== this.explanationSeq) return;
      this.state.pending.explanation = false;
      this.fail(e);
    }
  }
}
