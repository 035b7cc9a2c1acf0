"""Pipeline configuration: one JSON document drives every stage.

Path fields are excluded from the semantic fingerprint so reports from
relocated artifact directories stay byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .agents import GeneratorConfig
from .biomarker import DEFAULT_BIN_LABELS, FACTOR_SCHEMA
from .errors import IoError, UsageError

DEFAULT_OUTCOME_LEXICON = {
    "MI": ["mi", "myocardial infarction", "infarct", "heart attack", "ischemia"],
    "Normal": ["normal", "healthy", "benign", "unremarkable"],
}


@dataclass
class PipelineConfig:
    factors: list[str] = field(default_factory=lambda: list(FACTOR_SCHEMA))
    num_bins: int = 3
    bin_labels: list[str] = field(default_factory=lambda: list(DEFAULT_BIN_LABELS))
    pseudocount: float = 1.0
    max_parents: int = 3
    ordering: list[str] | None = None
    required_edges: list[list[str]] = field(default_factory=list)
    forbidden_edges: list[list[str]] = field(default_factory=list)
    outcome_node: str = "outcome"
    outcome_states: list[str] | None = None
    outcome_lexicon: dict[str, list[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_OUTCOME_LEXICON.items()}
    )
    retrieval_k: int = 5
    enrich_top_m: int = 3
    match_threshold: float = 0.6
    scp_threshold: float = 0.85
    crc_top_n: int = 3
    hr_threshold: float = 0.5
    fallback_enabled: bool = True
    max_edits: int = 1
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    store_path: str | None = None
    corpus_path: str | None = None
    lexicon_path: str | None = None
    descriptor_map_path: str | None = None
    artifacts_dir: str | None = None
    seed: int = 42

    def __post_init__(self):
        if not 0 < self.match_threshold <= 1:
            raise UsageError(f"match_threshold must be in (0, 1], got {self.match_threshold}")
        if not 0 < self.scp_threshold <= 1:
            raise UsageError(f"scp_threshold must be in (0, 1], got {self.scp_threshold}")
        if self.num_bins < 2:
            raise UsageError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.retrieval_k < 1:
            raise UsageError(f"retrieval_k must be >= 1, got {self.retrieval_k}")
        if self.pseudocount <= 0:
            raise UsageError(f"pseudocount must be > 0, got {self.pseudocount}")

    def node_ordering(self, available_factors: list[str]) -> list[str]:
        if self.ordering is not None:
            return [n for n in self.ordering if n in available_factors or n == self.outcome_node]
        return list(available_factors) + [self.outcome_node]

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["generator"] = self.generator.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        if "generator" in obj and isinstance(obj["generator"], dict):
            obj["generator"] = GeneratorConfig.from_json(obj["generator"])
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except (TypeError, json.JSONDecodeError) as exc:
            raise UsageError(f"invalid config {path}: {exc}") from exc

    def save(self, path):
        try:
            Path(path).write_text(canonical_json(self.to_json()) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write config {path}: {exc}") from exc

    _PATH_FIELDS = ("store_path", "corpus_path", "lexicon_path",
                    "descriptor_map_path", "artifacts_dir")

    def fingerprint(self) -> str:
        """Digest over the semantic parameters (paths excluded)."""
        obj = self.to_json()
        for key in self._PATH_FIELDS:
            obj.pop(key, None)
        return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
