"""Fitted-pipeline bundle: discretizer, network, knowledge index, priors.

A handle is immutable once fitted; services swap whole handles atomically
rather than mutating one in place. Fitting happens offline (CLI) and the
bundle persists as a directory of JSON artifacts.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .biomarker import (
    BiomarkerVector,
    DiscretizerModel,
    DiscreteEvidence,
    discretize,
    extract_biomarkers,
    fit_discretizer,
)
from .causal import (
    CausalNetwork,
    EdgeConstraints,
    LabeledEvidenceSet,
    NodeSpec,
    fit_cpts,
    learn_structure,
)
from .config import PipelineConfig, canonical_json
from .errors import EncodeFailure, IoError, MissingArtifact
from .knowledge import FactDoc, KnowledgeIndex, build_index
from .signal_io import RecordStore


@dataclass
class PipelineHandle:
    config: PipelineConfig
    discretizer: DiscretizerModel
    network: CausalNetwork
    outcome_prior: dict[str, float]
    index: KnowledgeIndex | None = None
    store: RecordStore | None = None
    descriptor_map: dict[str, list[str]] = field(default_factory=dict)
    _vector_cache: dict[str, BiomarkerVector] = field(default_factory=dict, repr=False)

    @property
    def version(self) -> str:
        payload = canonical_json({
            "config": self.config.fingerprint(),
            "discretizer": self.discretizer.to_json(),
            "network": self.network.to_json(),
            "prior": self.outcome_prior,
        })
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def prior_argmax(self) -> str:
        """Most frequent training outcome; ties break by state order."""
        states = self.network.node(self.config.outcome_node).states
        best, best_p = None, -1.0
        for s in states:
            p = self.outcome_prior.get(s, 0.0)
            if p > best_p:
                best, best_p = s, p
        return best

    def vector_for(self, record_id: str) -> BiomarkerVector:
        cached = self._vector_cache.get(record_id)
        if cached is not None:
            return cached
        if self.store is None:
            raise MissingArtifact("handle has no record store")
        vec = extract_biomarkers(self.store.load_record(record_id))
        self._vector_cache[record_id] = vec
        return vec

    def evidence_for(self, record_id: str) -> DiscreteEvidence:
        return discretize(self.discretizer, self.vector_for(record_id))

    # --- persistence ---

    def save(self, out_dir):
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            self.config.save(out / "config.json")
            (out / "discretizer.json").write_text(
                canonical_json(self.discretizer.to_json()))
            (out / "network.json").write_text(canonical_json(self.network.to_json()))
            (out / "outcome_prior.json").write_text(canonical_json(self.outcome_prior))
            (out / "descriptor_map.json").write_text(canonical_json(self.descriptor_map))
            if self.index is not None:
                self.index.save(out / "knowledge_index.json")
            (out / "version.txt").write_text(self.version + "\n")
        except OSError as exc:
            raise IoError(f"cannot write artifacts to {out}: {exc}") from exc

    @classmethod
    def load(cls, artifacts_dir, store_path=None) -> "PipelineHandle":
        d = Path(artifacts_dir)
        if not (d / "config.json").exists():
            raise MissingArtifact(f"no config.json under {d}")
        config = PipelineConfig.load(d / "config.json")
        try:
            discretizer = DiscretizerModel.from_json(
                json.loads((d / "discretizer.json").read_text()))
            network = CausalNetwork.from_json(
                json.loads((d / "network.json").read_text()))
            prior = json.loads((d / "outcome_prior.json").read_text())
            descriptor_map = (
                json.loads((d / "descriptor_map.json").read_text())
                if (d / "descriptor_map.json").exists() else {}
            )
        except OSError as exc:
            raise MissingArtifact(f"incomplete artifacts under {d}: {exc}") from exc
        index = None
        if (d / "knowledge_index.json").exists():
            index = KnowledgeIndex.load(d / "knowledge_index.json")
        store = None
        root = store_path or config.store_path
        if root and Path(root).exists():
            store = RecordStore(root, create=False)
        return cls(config=config, discretizer=discretizer, network=network,
                   outcome_prior=prior, index=index, store=store,
                   descriptor_map=descriptor_map)


def encode_records(
    store: RecordStore,
    record_ids: list[str],
    feature_vectors: dict[str, BiomarkerVector] | None = None,
) -> dict[str, BiomarkerVector]:
    """Biomarker vectors for the given records, preferring precomputed
    feature vectors; encode failures keep the all-missing vector."""
    out: dict[str, BiomarkerVector] = {}
    for rid in record_ids:
        if feature_vectors and rid in feature_vectors:
            out[rid] = feature_vectors[rid]
            continue
        if store is None:
            raise MissingArtifact(
                f"record {rid}: no feature vector and no store to encode from"
            )
        try:
            out[rid] = extract_biomarkers(store.load_record(rid))
        except EncodeFailure as exc:
            warnings.warn(f"record {rid}: encoding failed ({exc}); factors missing",
                          stacklevel=2)
            out[rid] = exc.vector
    return out


def fit_pipeline(
    store: RecordStore | None,
    labels: dict[str, str],
    config: PipelineConfig,
    corpus_docs: list[FactDoc] | None = None,
    feature_vectors: dict[str, BiomarkerVector] | None = None,
    descriptor_map: dict[str, list[str]] | None = None,
) -> PipelineHandle:
    """Fit the discretizer, learn the structure, estimate the CPTs and
    build the knowledge index from labelled training records."""
    record_ids = sorted(labels)
    vectors = encode_records(store, record_ids, feature_vectors) if store or feature_vectors \
        else {}
    if not vectors:
        raise MissingArtifact("no training vectors available")

    train_vecs = [vectors[rid] for rid in record_ids]
    discretizer = fit_discretizer(train_vecs, config.num_bins, list(config.bin_labels))

    usable_factors = [
        f for f in config.factors
        if f in discretizer.factors and f not in discretizer.degenerate
    ]
    states = config.outcome_states or sorted(set(labels.values()))
    nodes = [NodeSpec(f, tuple(config.bin_labels)) for f in usable_factors]
    nodes.append(NodeSpec(config.outcome_node, tuple(states)))

    rows = [
        (discretize(discretizer, vectors[rid]), labels[rid])
        for rid in record_ids
    ]
    data = LabeledEvidenceSet(nodes=nodes, outcome=config.outcome_node, rows=rows)
    constraints = EdgeConstraints(
        ordering=config.node_ordering(usable_factors),
        required={tuple(e) for e in config.required_edges},
        forbidden={tuple(e) for e in config.forbidden_edges},
    )
    network = fit_cpts(
        learn_structure(data, constraints, config.max_parents),
        data,
        config.pseudocount,
    )

    n = len(record_ids)
    prior = {s: sum(1 for rid in record_ids if labels[rid] == s) / n for s in states}

    index = build_index(corpus_docs) if corpus_docs else None
    handle = PipelineHandle(
        config=config,
        discretizer=discretizer,
        network=network,
        outcome_prior=prior,
        index=index,
        store=store,
        descriptor_map=descriptor_map or {},
    )
    handle._vector_cache.update(vectors)
    return handle
