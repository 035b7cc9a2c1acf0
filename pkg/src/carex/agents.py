"""History / Diagnosis / Response agent pipeline.

The three agents communicate through a compact message carrying the
query, the longitudinal factor delta, the discretized evidence, the
predicted state with its posterior, the retrieved facts and the ranked
causal drivers. The Response agent builds a fact-tagged prompt, calls a
generator (remote chat-completions endpoint or the deterministic offline
template) and applies the hallucination gate with a retrieval-only
fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import requests

from .biomarker import BiomarkerDelta, BiomarkerVector, DiscreteEvidence, delta
from .causal import (
    CausalNetwork,
    FactorContribution,
    Posterior,
    infer_posterior,
    rank_contributions,
)
from .counterfactual import CounterfactualResult, find_counterfactual
from .errors import RemoteUnavailable, SchemaMismatch, Timeout
from .grounding import hallucination_risk
from .knowledge import RetrievalResult
from .signal_io import EcgRecord, RecordStore

FALLBACK_NOTE = "(Note: Fallback used due to high hallucination risk.)"

GENERATION_INSTRUCTION = (
    "Explain the prediction clearly and medically grounded, "
    "and attach citations using fact tags (e.g., [Fact 1])."
)


@dataclass
class AgentMessage:
    """Message tuple passed between agents."""

    query: str
    evidence: DiscreteEvidence
    prediction: str
    posterior: Posterior
    retrieved: RetrievalResult
    drivers: FactorContribution
    delta: BiomarkerDelta | None = None
    counterfactual: CounterfactualResult | None = None


@dataclass
class GeneratorConfig:
    mode: str = "offline"  # "offline" or "remote"
    endpoint: str | None = None
    model: str = "gpt-4"
    temperature: float = 0.3
    max_tokens: int = 600
    api_key_env: str = "CAREX_API_KEY"
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.mode not in ("offline", "remote"):
            raise SchemaMismatch(f"generator mode must be offline or remote, got {self.mode!r}")
        if self.mode == "remote" and not (self.endpoint and self.model):
            raise SchemaMismatch("remote generator mode requires endpoint and model")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "api_key_env": self.api_key_env,
            "timeout_s": self.timeout_s,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorConfig":
        return cls(**obj)


@dataclass
class ExplanationPayload:
    explanation: str
    hallucination_score: float
    used_fallback: bool
    raw_with_causal: str
    raw_rag_only: str | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "explanation": self.explanation,
            "hallucination_score": self.hallucination_score,
            "used_fallback": self.used_fallback,
            "raw_with_causal": self.raw_with_causal,
            "raw_rag_only": self.raw_rag_only,
            "warnings": list(self.warnings),
        }


def history_agent(
    store: RecordStore,
    vectors: dict[str, BiomarkerVector],
    current: EcgRecord,
) -> BiomarkerDelta | None:
    """Longitudinal factor shift for the current record.

    Prefers the patient's most recent earlier record; otherwise falls back
    to the corpus record nearest in z-scored factor space as surrogate
    history (flagged). Returns None when there is nothing to compare to.
    """
    current_vec = vectors.get(current.record_id)
    if current_vec is None:
        return None

    if current.patient_id is not None and current.acquired_at is not None:
        history = store.list_patient_history(current.patient_id)
        prior_ids = [
            rid for rid in history
            if rid != current.record_id
            and store.index[rid]["acquired_at"] < current.acquired_at
            and rid in vectors
        ]
        if prior_ids:
            return delta(vectors[prior_ids[-1]], current_vec)

    # Surrogate: nearest neighbour on z-scored factors, excluding self.
    candidates = {rid: v for rid, v in vectors.items() if rid != current.record_id}
    if not candidates:
        return None
    factors = sorted(current_vec.schema)
    stats = {}
    for f in factors:
        vals = [v.values[f] for v in vectors.values() if v.quality.get(f) == "ok"]
        if len(vals) >= 2:
            mean = float(np.mean(vals))
            std = float(np.std(vals))
            stats[f] = (mean, std if std > 0 else 1.0)

    best_rid, best_dist = None, math.inf
    for rid in sorted(candidates):
        v = candidates[rid]
        sq = 0.0
        shared = 0
        for f, (mean, std) in stats.items():
            a = current_vec.ok_value(f)
            b = v.ok_value(f)
            if a is None or b is None:
                continue
            sq += ((a - mean) / std - (b - mean) / std) ** 2
            shared += 1
        if shared == 0:
            continue
        dist = math.sqrt(sq)
        if dist < best_dist:
            best_rid, best_dist = rid, dist
    if best_rid is None:
        return None
    d = delta(candidates[best_rid], current_vec)
    d.surrogate = True
    return d


def resolve_target_state(
    query: str,
    posterior: Posterior,
    outcome_states: tuple[str, ...],
    outcome_lexicon: dict[str, list[str]],
) -> str | None:
    """Counterfactual target implied by the query.

    A state named in the query (by keyword, case-insensitive) becomes the
    target when it differs from the current argmax; naming the argmax
    itself flips to the other state in the binary case. With no named
    state the runner-up serves as a sensitivity probe.
    """
    query_l = query.lower()
    argmax = posterior.argmax()
    named = None
    for state in outcome_states:
        keywords = [state.lower()] + [kw.lower() for kw in outcome_lexicon.get(state, [])]
        if any(kw in query_l for kw in keywords):
            named = state
            break
    if named is not None and named != argmax:
        return named
    if named == argmax and len(outcome_states) == 2:
        return next(s for s in outcome_states if s != argmax)
    return posterior.runner_up()


def diagnosis_agent(
    net: CausalNetwork,
    evidence: DiscreteEvidence,
    query: str,
    outcome: str,
    outcome_lexicon: dict[str, list[str]] | None = None,
    max_edits: int = 1,
    with_counterfactual: bool = True,
) -> tuple[Posterior, FactorContribution, CounterfactualResult | None]:
    """Posterior, ranked drivers, and an optional counterfactual probe
    toward the query-implied target (or the runner-up state)."""
    posterior = infer_posterior(net, evidence, outcome)
    drivers = rank_contributions(net, evidence, outcome)
    counterfactual = None
    if with_counterfactual:
        target = resolve_target_state(
            query, posterior, net.node(outcome).states, outcome_lexicon or {}
        )
        if target is not None:
            counterfactual = find_counterfactual(
                net, evidence, target, max_edits=max_edits, outcome=outcome
            )
    return posterior, drivers, counterfactual


def build_prompt(message: AgentMessage, rag_only: bool = False) -> str:
    """Byte-deterministic fact-tagged prompt.

    Sections, in order: patient query; causal factors as comma-joined
    "factor=label" descriptors ("None" when empty or in RAG-only mode);
    enumerated retrieved facts; the static generation instruction.
    """
    descriptors = [
        f"{factor}={message.evidence.labels[factor]}"
        for factor, _ in message.drivers
        if factor in message.evidence.labels
    ]
    causal = "None" if rag_only or not descriptors else ", ".join(descriptors)
    lines = [
        f"Patient Query: {message.query}",
        f"Key Causal Factors (from VAE/Graph): {causal}",
        "Retrieved Medical Facts (RAG):",
    ]
    for i, (doc, _) in enumerate(message.retrieved.items, start=1):
        lines.append(f"[Fact {i}] {doc.text}")
    lines.append(GENERATION_INSTRUCTION)
    return "\n".join(lines)


def _offline_template(message: AgentMessage, rag_only: bool) -> str:
    """Deterministic generator: quote each fact with its tag, name each
    causal driver with its bin label (unless RAG-only), then state the
    prediction with its probability."""
    lines = []
    for i, (doc, _) in enumerate(message.retrieved.items, start=1):
        lines.append(f"[Fact {i}] {doc.text}")
    if not rag_only:
        for factor, _ in message.drivers:
            label = message.evidence.labels.get(factor)
            if label is not None:
                lines.append(f"{factor} is {label}.")
    prob = message.posterior.probs[message.prediction]
    lines.append(
        f"The predicted outcome is {message.prediction} "
        f"with probability {prob:.2f}."
    )
    return "\n".join(lines)


def generate(
    prompt: str,
    cfg: GeneratorConfig,
    message: AgentMessage | None = None,
    rag_only: bool = False,
) -> str:
    """Produce an explanation for the prompt.

    Remote mode posts an OpenAI-compatible chat-completions request to the
    configured endpoint; offline mode renders the deterministic template
    from the agent message (required in that mode).
    """
    if cfg.mode == "offline":
        if message is None:
            raise SchemaMismatch("offline generation requires the agent message")
        return _offline_template(message, rag_only)

    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    try:
        resp = requests.post(cfg.endpoint, json=body, headers=headers,
                             timeout=cfg.timeout_s)
    except requests.Timeout as exc:
        raise Timeout(f"generation timed out after {cfg.timeout_s}s") from exc
    except requests.RequestException as exc:
        raise RemoteUnavailable(f"generator unreachable: {exc}") from exc
    if resp.status_code >= 400:
        raise RemoteUnavailable(
            f"generator HTTP {resp.status_code}: {resp.text[:200]}"
        )
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError) as exc:
        raise RemoteUnavailable(f"malformed generator response: {exc}") from exc


def respond(
    message: AgentMessage,
    cfg: GeneratorConfig,
    fallback_enabled: bool = True,
    hr_threshold: float = 0.5,
    match_threshold: float = 0.6,
    verifier_enabled: bool = True,
) -> ExplanationPayload:
    """Generate, score hallucination risk, and apply the safety gate.

    The fallback (RAG-only regeneration plus the verbatim note) triggers
    when the initial score exceeds the threshold with fallback enabled, or
    unconditionally when retrieval was flagged ungroundable. With the
    verifier disabled the gate is off entirely. The reported score always
    belongs to the returned explanation.
    """
    facts = message.retrieved.facts()
    payload_warnings: list[str] = []

    raw_with_causal = generate(build_prompt(message, rag_only=False), cfg,
                               message=message, rag_only=False)
    report = hallucination_risk(raw_with_causal, facts, match_threshold)
    if verifier_enabled and report.ungroundable:
        payload_warnings.append("retrieval returned no facts; explanation ungroundable")

    gate = verifier_enabled and (
        (report.hr > hr_threshold and fallback_enabled) or report.ungroundable
    )
    if not gate:
        return ExplanationPayload(
            explanation=raw_with_causal,
            hallucination_score=report.hr,
            used_fallback=False,
            raw_with_causal=raw_with_causal,
            warnings=payload_warnings,
        )

    try:
        raw_rag_only = generate(build_prompt(message, rag_only=True), cfg,
                                message=message, rag_only=True)
    except (RemoteUnavailable, Timeout) as exc:
        payload_warnings.append(f"fallback generation failed: {exc}")
        return ExplanationPayload(
            explanation=raw_with_causal,
            hallucination_score=report.hr,
            used_fallback=False,
            raw_with_causal=raw_with_causal,
            warnings=payload_warnings,
        )
    rescored = hallucination_risk(raw_rag_only, facts, match_threshold)
    return ExplanationPayload(
        explanation=f"{raw_rag_only}\n{FALLBACK_NOTE}",
        hallucination_score=rescored.hr,
        used_fallback=True,
        raw_with_causal=raw_with_causal,
        raw_rag_only=raw_rag_only,
        warnings=payload_warnings,
    )
