"""Offline knowledge index with causal-conditioned retrieval.

Documents are embedded as L2-normalized tf-idf vectors over a lowercase
alphanumeric tokenization; retrieval queries are enriched with the top
causal drivers and the predicted label before cosine ranking. A remote
embedding endpoint can replace the tf-idf vectorizer via configuration.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .biomarker import DiscreteEvidence
from .causal import FactorContribution
from .errors import EmptyCorpus, IoError, RemoteUnavailable, Timeout, UsageError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class FactDoc:
    fact_id: str
    text: str
    tags: tuple[str, ...] = ()
    source: str = ""

    def __post_init__(self):
        if not self.text:
            raise EmptyCorpus(f"fact {self.fact_id!r} has empty text")


@dataclass
class RetrievalResult:
    items: list[tuple[FactDoc, float]]
    enriched_query: str
    empty_query: bool = False

    def facts(self) -> list[FactDoc]:
        return [doc for doc, _ in self.items]


@dataclass
class KnowledgeIndex:
    """tf-idf document index; immutable after build."""

    idf: dict[str, float]
    doc_vectors: dict[str, dict[str, float]]
    docs: dict[str, FactDoc]
    num_docs: int = 0

    def vectorize(self, text: str) -> dict[str, float]:
        """Unit tf-idf vector using corpus idf; unseen terms are dropped.
        Returns {} when nothing survives."""
        tf: dict[str, int] = {}
        for tok in tokenize(text):
            if tok in self.idf:
                tf[tok] = tf.get(tok, 0) + 1
        vec = {t: c * self.idf[t] for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm == 0:
            return {}
        return {t: w / norm for t, w in vec.items()}

    def to_json(self) -> dict:
        return {
            "num_docs": self.num_docs,
            "idf": self.idf,
            "doc_vectors": self.doc_vectors,
            "docs": [
                {"fact_id": d.fact_id, "text": d.text,
                 "tags": list(d.tags), "source": d.source}
                for d in self.docs.values()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KnowledgeIndex":
        docs = {
            d["fact_id"]: FactDoc(d["fact_id"], d["text"],
                                  tuple(d.get("tags", ())), d.get("source", ""))
            for d in obj["docs"]
        }
        return cls(
            idf=dict(obj["idf"]),
            doc_vectors={k: dict(v) for k, v in obj["doc_vectors"].items()},
            docs=docs,
            num_docs=obj["num_docs"],
        )

    def save(self, path):
        try:
            Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))
        except OSError as exc:
            raise IoError(f"cannot write index to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "KnowledgeIndex":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise IoError(f"cannot read index from {path}: {exc}") from exc


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    return sum(w * b.get(t, 0.0) for t, w in a.items())


def build_index(docs: list[FactDoc]) -> KnowledgeIndex:
    """Build the tf-idf index: idf(t) = ln((1+N)/(1+df(t))) + 1, vectors
    tf*idf L2-normalized. Docs with no tokens are excluded with a warning.
    """
    if not docs:
        raise EmptyCorpus("no documents to index")
    seen = set()
    for d in docs:
        if d.fact_id in seen:
            raise EmptyCorpus(f"duplicate fact_id {d.fact_id!r}")
        seen.add(d.fact_id)

    tokenized = {d.fact_id: tokenize(d.text) for d in docs}
    df: dict[str, int] = {}
    for toks in tokenized.values():
        for t in set(toks):
            df[t] = df.get(t, 0) + 1
    n = len(docs)
    idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}

    doc_vectors: dict[str, dict[str, float]] = {}
    kept: dict[str, FactDoc] = {}
    for d in docs:
        tf: dict[str, int] = {}
        for tok in tokenized[d.fact_id]:
            tf[tok] = tf.get(tok, 0) + 1
        vec = {t: c * idf[t] for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm == 0:
            warnings.warn(f"fact {d.fact_id!r} has no tokens; excluded from index",
                          stacklevel=2)
            continue
        doc_vectors[d.fact_id] = {t: w / norm for t, w in vec.items()}
        kept[d.fact_id] = d
    if not kept:
        raise EmptyCorpus("every document tokenized to nothing")
    return KnowledgeIndex(idf=idf, doc_vectors=doc_vectors, docs=kept, num_docs=n)


def enrich_query(
    query: str,
    drivers: FactorContribution,
    evidence: DiscreteEvidence,
    prediction: str,
    top_m: int = 3,
) -> str:
    """Append "factor bin_label" descriptors for the top drivers present in
    the evidence, then the predicted state label. top_m of zero leaves the
    query untouched."""
    if top_m <= 0:
        return query
    parts = [query]
    added = 0
    for factor, _ in drivers:
        if added >= top_m:
            break
        label = evidence.labels.get(factor)
        if label is None:
            continue
        parts.append(f"{factor} {label}")
        added += 1
    parts.append(prediction)
    return " ".join(parts)


def retrieve(index: KnowledgeIndex, enriched_query: str, k: int = 5) -> RetrievalResult:
    """Top-k documents by cosine similarity; ties break by fact_id. A query
    sharing no vocabulary with the corpus yields an empty flagged result."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    qvec = index.vectorize(enriched_query)
    if not qvec:
        return RetrievalResult([], enriched_query, empty_query=True)
    scored = [
        (index.docs[fid], cosine(qvec, dvec))
        for fid, dvec in index.doc_vectors.items()
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0].fact_id))
    return RetrievalResult(scored[:k], enriched_query)


def load_corpus(path) -> list[FactDoc]:
    """Read a JSON Lines corpus: one {fact_id, text, tags, source} per line."""
    docs = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read corpus {path}: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EmptyCorpus(f"{path}:{i}: invalid JSON: {exc}") from exc
        docs.append(FactDoc(obj["fact_id"], obj["text"],
                            tuple(obj.get("tags", ())), obj.get("source", "")))
    return docs


@dataclass
class RemoteEmbedder:
    """HTTP embedding endpoint: POST {"texts": [...]} -> {"vectors": [[...]]}.

    Drop-in alternative to the tf-idf vectorizer, selected in config.
    """

    endpoint: str
    timeout_s: float = 30.0
    post = staticmethod(requests.post)

    def embed(self, texts: list[str]) -> list[list[float]]:
        try:
            resp = self.post(self.endpoint, json={"texts": texts}, timeout=self.timeout_s)
        except requests.Timeout as exc:
            raise Timeout(f"embedding endpoint timed out: {exc}") from exc
        except requests.RequestException as exc:
            raise RemoteUnavailable(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code >= 400:
            raise RemoteUnavailable(
                f"embedding endpoint HTTP {resp.status_code}: {resp.text[:200]}"
            )
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError) as exc:
            raise RemoteUnavailable(f"malformed embedding response: {exc}") from exc
        return vectors


@dataclass
class EmbeddingIndex:
    """Dense-vector variant of the knowledge index for remote embedders."""

    embedder: RemoteEmbedder
    docs: dict[str, FactDoc] = field(default_factory=dict)
    vectors: dict[str, list[float]] = field(default_factory=dict)

    @classmethod
    def build(cls, docs: list[FactDoc], embedder: RemoteEmbedder) -> "EmbeddingIndex":
        if not docs:
            raise EmptyCorpus("no documents to index")
        raw = embedder.embed([d.text for d in docs])
        index = cls(embedder=embedder)
        for d, vec in zip(docs, raw):
            norm = math.sqrt(sum(w * w for w in vec))
            if norm == 0:
                warnings.warn(f"fact {d.fact_id!r} embedded to zero; excluded",
                              stacklevel=2)
                continue
            index.docs[d.fact_id] = d
            index.vectors[d.fact_id] = [w / norm for w in vec]
        return index

    def retrieve(self, enriched_query: str, k: int = 5) -> RetrievalResult:
        qvec = self.embedder.embed([enriched_query])[0]
        norm = math.sqrt(sum(w * w for w in qvec))
        if norm == 0:
            return RetrievalResult([], enriched_query, empty_query=True)
        qvec = [w / norm for w in qvec]
        scored = [
            (self.docs[fid], sum(a * b for a, b in zip(qvec, dvec)))
            for fid, dvec in self.vectors.items()
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0].fact_id))
        return RetrievalResult(scored[:k], enriched_query)
