"""Fuzzy matching between generated text and retrieved facts.

Similarity is the Dice coefficient on lowercase alphanumeric token sets
at sentence granularity; the hallucination risk score is one minus the
fraction of retrieved facts matched by at least one explanation
sentence. Citation tags like "[Fact 2]" are stripped before matching.
All functions here are pure and deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .causal import FactorContribution
from .knowledge import FactDoc, KnowledgeIndex, tokenize

DEFAULT_MATCH_THRESHOLD = 0.6

_FACT_TAG_RE = re.compile(r"\[\s*fact\s*\d+\s*\]", re.IGNORECASE)
_SENTENCE_SPLIT_RE = re.compile(r"[.!?\n]+")


def split_sentences(text: str) -> list[str]:
    """Sentences delimited by '.', '!', '?' or newline, tags stripped."""
    cleaned = _FACT_TAG_RE.sub(" ", text)
    return [s.strip() for s in _SENTENCE_SPLIT_RE.split(cleaned) if s.strip()]


def fuzzy_match(a: str, b: str) -> float:
    """Dice coefficient on token sets: 2|A & B| / (|A| + |B|).

    Two empty token sets are identical (1.0); exactly one empty is 0.0.
    """
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return 2.0 * len(ta & tb) / (len(ta) + len(tb))


@dataclass
class FactMatch:
    fact_id: str
    matched: bool
    best_sentence: str
    best_similarity: float


@dataclass
class MatchReport:
    fact_matches: list[FactMatch]
    hr: float
    ungroundable: bool = False


def hallucination_risk(
    explanation: str,
    facts: list[FactDoc],
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> MatchReport:
    """HR = 1 - matched_facts / |facts|; a fact matches when its best
    sentence similarity reaches the threshold.

    An empty fact list leaves HR undefined; we report 0 with the
    ``ungroundable`` flag set so the verifier can force a fallback.
    """
    if not facts:
        return MatchReport([], 0.0, ungroundable=True)
    sentences = split_sentences(explanation)
    matches = []
    matched_count = 0
    for fact in facts:
        best_sim, best_sentence = 0.0, ""
        for s in sentences:
            sim = fuzzy_match(fact.text, s)
            if sim > best_sim:
                best_sim, best_sentence = sim, s
        ok = best_sim >= match_threshold
        matched_count += ok
        matches.append(FactMatch(fact.fact_id, ok, best_sentence, best_sim))
    return MatchReport(matches, 1.0 - matched_count / len(facts))


def groundedness(
    explanation: str,
    facts: list[FactDoc],
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> float:
    """Fraction of explanation sentences whose best fact similarity
    reaches the threshold; no sentences means 0."""
    sentences = split_sentences(explanation)
    if not sentences:
        return 0.0
    grounded = 0
    for s in sentences:
        best = max((fuzzy_match(fact.text, s) for fact in facts), default=0.0)
        grounded += best >= match_threshold
    return grounded / len(sentences)


def context_relevance(query: str, explanation: str, index: KnowledgeIndex) -> float:
    """Cosine between query and explanation under the corpus tf-idf
    vocabulary; zero vectors give 0."""
    qvec = index.vectorize(query)
    evec = index.vectorize(explanation)
    if not qvec or not evec:
        return 0.0
    return sum(w * evec.get(t, 0.0) for t, w in qvec.items())


def srs(explanation: str, facts: list[FactDoc], index: KnowledgeIndex) -> float:
    """Semantic relevance: cosine between the explanation and the
    concatenated retrieved fact texts; zero vectors give 0."""
    evec = index.vectorize(explanation)
    fvec = index.vectorize(" ".join(fact.text for fact in facts))
    if not evec or not fvec:
        return 0.0
    return sum(w * fvec.get(t, 0.0) for t, w in evec.items())


def crc(
    explanation: str,
    drivers: FactorContribution,
    descriptor_map: dict[str, list[str]],
    top_n: int = 3,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> float:
    """Causal retrieval coverage: fraction of the top-n drivers reflected
    in the explanation, where a driver counts when any synonym (its factor
    name or a descriptor) fuzzy-matches any sentence at the threshold.

    Fewer drivers than top_n shrink the denominator; no drivers at all is
    vacuously 1.
    """
    top = [factor for factor, _ in drivers[:top_n]]
    if not top:
        return 1.0
    sentences = split_sentences(explanation)
    covered = 0
    for factor in top:
        synonyms = [factor] + list(descriptor_map.get(factor, []))
        hit = any(
            fuzzy_match(syn, s) >= match_threshold
            for syn in synonyms
            for s in sentences
        )
        covered += hit
    return covered / len(top)
