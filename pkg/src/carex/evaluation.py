"""Dataset-level evaluation: SCP mapping, classification metrics, the
grounding metric family, the staged ablation runner and report emission.

Variants are cumulative: A0 predicts the training outcome prior and
explains from the bare template; A1 adds graph inference; A2 adds
retrieval; A3 adds the verification gate; A4 adds the counterfactual
probe. Reports are deterministic given the same artifacts and manifest.
"""

from __future__ import annotations

import csv
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentMessage, GeneratorConfig, diagnosis_agent, respond
from .artifacts import PipelineHandle
from .causal import Posterior, infer_posterior, rank_contributions
from .config import canonical_json
from .errors import IoError, LengthMismatch, MissingArtifact, UsageError
from .grounding import context_relevance, crc, groundedness, srs
from .knowledge import RetrievalResult, enrich_query, retrieve

# --- SCP keyword mapping ---


@dataclass
class ScpLexicon:
    """SCP code -> display label and keyword/synonym list."""

    entries: dict[str, dict]

    def __post_init__(self):
        for code, entry in self.entries.items():
            for kw in entry.get("keywords", []):
                if not kw:
                    raise UsageError(f"SCP code {code}: empty keyword")

    @classmethod
    def load(cls, path) -> "ScpLexicon":
        try:
            return cls(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise IoError(f"cannot read lexicon {path}: {exc}") from exc


def map_text_to_scp(text: str, lexicon: ScpLexicon, threshold: float = 0.85) -> set[str]:
    """Multi-label SCP mapping: a code matches when any keyword appears as
    a case-insensitive substring or fuzzy-matches a sentence at the
    threshold (Dice on token sets)."""
    from .grounding import fuzzy_match, split_sentences

    text_lower = text.lower()
    sentences = split_sentences(text)
    codes = set()
    for code, entry in lexicon.entries.items():
        for kw in entry.get("keywords", []):
            if kw.lower() in text_lower:
                codes.add(code)
                break
            if any(fuzzy_match(kw, s) >= threshold for s in sentences):
                codes.add(code)
                break
    return codes


# --- classification metrics ---


def classification_metrics(
    pred: list[set[str]],
    gold: list[set[str]],
    labels: list[str] | None = None,
) -> dict:
    """Exact-set-match accuracy plus macro precision/recall/F1 from
    multi-label confusion counts. A label with no predicted and no gold
    positives is vacuous (P=R=F1=1) and reported as such."""
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions for {len(gold)} gold sets")
    if not pred:
        raise LengthMismatch("empty evaluation set")
    if labels is None:
        labels = sorted({l for s in pred for l in s} | {l for s in gold for l in s})

    accuracy = sum(p == g for p, g in zip(pred, gold)) / len(pred)
    per_label = {}
    vacuous = []
    for label in labels:
        tp = sum(1 for p, g in zip(pred, gold) if label in p and label in g)
        fp = sum(1 for p, g in zip(pred, gold) if label in p and label not in g)
        fn = sum(1 for p, g in zip(pred, gold) if label not in p and label in g)
        if tp + fp + fn == 0:
            per_label[label] = {"precision": 1.0, "recall": 1.0, "f1": 1.0}
            vacuous.append(label)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[label] = {"precision": precision, "recall": recall, "f1": f1}
    k = len(labels) or 1
    return {
        "accuracy": accuracy,
        "macro_precision": sum(v["precision"] for v in per_label.values()) / k,
        "macro_recall": sum(v["recall"] for v in per_label.values()) / k,
        "macro_f1": sum(v["f1"] for v in per_label.values()) / k,
        "per_label": per_label,
        "vacuous_labels": vacuous,
    }


_ARTICLES = ("a ", "an ", "the ")


def normalize_answer(text: str) -> str:
    """Exact-match normalization: lowercase, strip punctuation and leading
    articles (convention recorded in reports)."""
    t = text.lower().strip()
    t = t.translate(str.maketrans("", "", string.punctuation))
    t = " ".join(t.split())
    for art in _ARTICLES:
        if t.startswith(art):
            t = t[len(art):]
            break
    return t


# --- ablation runner ---


@dataclass(frozen=True)
class AblationConfig:
    name: str
    graph_enabled: bool = False
    rag_enabled: bool = False
    verifier_enabled: bool = False
    counterfactual_enabled: bool = False


VARIANTS = {
    "A0": AblationConfig("A0"),
    "A1": AblationConfig("A1", graph_enabled=True),
    "A2": AblationConfig("A2", graph_enabled=True, rag_enabled=True),
    "A3": AblationConfig("A3", graph_enabled=True, rag_enabled=True,
                         verifier_enabled=True),
    "A4": AblationConfig("A4", graph_enabled=True, rag_enabled=True,
                         verifier_enabled=True, counterfactual_enabled=True),
}

GRID_METRICS = ("accuracy", "macro_f1", "crc", "groundedness", "hr", "srs")

METRIC_FORMULAS = {
    "hr": "one-minus-matched-fact-fraction/dice-token-sets/v1",
    "groundedness": "grounded-sentence-fraction/dice-token-sets/v1",
    "context_relevance": "query-explanation-tfidf-cosine/v1",
    "srs": "explanation-evidence-tfidf-cosine/v1",
    "crc": "driver-synonym-sentence-coverage/dice/v1",
    "accuracy": "exact-set-match/v1",
    "macro_f1": "multilabel-macro-f1/vacuous-as-one/v1",
    "exact_match_normalization": "lowercase/strip-punctuation/strip-leading-article",
}


@dataclass
class EvalReport:
    variant: str
    backbone: str
    rows: list[dict]
    aggregates: dict
    config_fingerprint: str
    metric_formulas: dict = field(default_factory=lambda: dict(METRIC_FORMULAS))

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "backbone": self.backbone,
            "config_fingerprint": self.config_fingerprint,
            "metric_formulas": self.metric_formulas,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def evaluate_variant(
    handle: PipelineHandle,
    manifest_rows: list[dict],
    variant: AblationConfig,
    generator: GeneratorConfig | None = None,
) -> EvalReport:
    """Run every example through exactly the stages the variant enables."""
    cfg = handle.config
    generator = generator or cfg.generator
    if variant.rag_enabled and handle.index is None:
        raise MissingArtifact("variant enables retrieval but no knowledge index is fitted")
    outcome = cfg.outcome_node
    states = handle.network.node(outcome).states

    rows = []
    pred_sets, gold_sets = [], []
    for ex in sorted(manifest_rows, key=lambda r: r["record_id"]):
        rid = ex["record_id"]
        query = ex.get("query", "")
        if "features" in ex:
            # manifest supplies precomputed factors instead of a stored record
            from .biomarker import BiomarkerVector, discretize

            values = {k: float(v) for k, v in ex["features"].items() if v is not None}
            quality = {k: ("ok" if k in values else "missing")
                       for k in handle.discretizer.factors}
            evidence = discretize(handle.discretizer,
                                  BiomarkerVector(rid, values, quality))
        else:
            evidence = handle.evidence_for(rid)

        if variant.graph_enabled:
            posterior = infer_posterior(handle.network, evidence, outcome)
            drivers = rank_contributions(handle.network, evidence, outcome)
        else:
            posterior = Posterior(outcome, {
                s: handle.outcome_prior.get(s, 0.0) for s in states
            })
            drivers = []
        prediction = posterior.argmax()

        counterfactual = None
        if variant.counterfactual_enabled and variant.graph_enabled:
            _, _, counterfactual = diagnosis_agent(
                handle.network, evidence, query, outcome,
                outcome_lexicon=cfg.outcome_lexicon, max_edits=cfg.max_edits,
            )

        if variant.rag_enabled:
            enriched = enrich_query(query, drivers, evidence, prediction,
                                    cfg.enrich_top_m)
            retrieved = retrieve(handle.index, enriched, cfg.retrieval_k)
        else:
            retrieved = RetrievalResult([], query, empty_query=True)

        message = AgentMessage(
            query=query, evidence=evidence, prediction=prediction,
            posterior=posterior, retrieved=retrieved, drivers=drivers,
            counterfactual=counterfactual,
        )
        payload = respond(
            message, generator,
            fallback_enabled=cfg.fallback_enabled,
            hr_threshold=cfg.hr_threshold,
            match_threshold=cfg.match_threshold,
            verifier_enabled=variant.verifier_enabled,
        )

        facts = retrieved.facts()
        explanation = payload.explanation
        row_metrics = {
            "crc": crc(explanation, drivers, handle.descriptor_map,
                       cfg.crc_top_n, cfg.match_threshold),
            "groundedness": groundedness(explanation, facts, cfg.match_threshold),
            "hr": payload.hallucination_score,
            "srs": srs(explanation, facts, handle.index) if handle.index else 0.0,
            "context_relevance": (
                context_relevance(query, explanation, handle.index)
                if handle.index else 0.0
            ),
        }
        if "gold_answer" in ex and "gold_labels" not in ex and "gold_outcome" not in ex:
            # QA-style row: exact match after normalization
            gold = {normalize_answer(ex["gold_answer"])}
            pred_sets.append({normalize_answer(prediction)})
        else:
            gold = set(ex.get("gold_labels") or [ex["gold_outcome"]])
            pred_sets.append({prediction})
        gold_sets.append(gold)
        row = {
            "record_id": rid,
            "predicted": prediction,
            "gold": sorted(gold),
            "used_fallback": payload.used_fallback,
            "counterfactual": (
                counterfactual.to_json(handle.network, evidence)
                if counterfactual is not None else None
            ),
            **row_metrics,
        }
        rows.append(row)

    cls = classification_metrics(pred_sets, gold_sets)
    aggregates = {
        "accuracy": cls["accuracy"],
        "macro_precision": cls["macro_precision"],
        "macro_recall": cls["macro_recall"],
        "macro_f1": cls["macro_f1"],
        "vacuous_labels": cls["vacuous_labels"],
        "crc": _mean(r["crc"] for r in rows),
        "groundedness": _mean(r["groundedness"] for r in rows),
        "hr": _mean(r["hr"] for r in rows),
        "srs": _mean(r["srs"] for r in rows),
        "context_relevance": _mean(r["context_relevance"] for r in rows),
        "fallback_rate": _mean(1.0 if r["used_fallback"] else 0.0 for r in rows),
        "num_examples": len(rows),
    }
    backbone = "offline" if generator.mode == "offline" else generator.model
    return EvalReport(
        variant=variant.name,
        backbone=backbone,
        rows=rows,
        aggregates=aggregates,
        config_fingerprint=cfg.fingerprint(),
    )


def run_ablation(
    handle: PipelineHandle,
    manifest_rows: list[dict],
    variant_names: list[str],
    generator: GeneratorConfig | None = None,
) -> list[EvalReport]:
    reports = []
    for name in variant_names:
        if name not in VARIANTS:
            raise UsageError(f"unknown variant {name!r} (choose from {sorted(VARIANTS)})")
        reports.append(evaluate_variant(handle, manifest_rows, VARIANTS[name], generator))
    return reports


# --- report emission ---

_ROW_COLUMNS = ("record_id", "predicted", "gold", "used_fallback",
                "crc", "groundedness", "hr", "srs", "context_relevance")


def emit_report(report: EvalReport, out_dir, basename: str | None = None) -> list[Path]:
    """Write {base}.json (full), {base}.csv (per-example rows) and
    {base}_plot.csv (metric/variant/backbone triples). Deterministic."""
    out = Path(out_dir)
    base = basename or f"report_{report.variant}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"{base}.json"
        json_path.write_text(canonical_json(report.to_json()) + "\n")

        csv_path = out / f"{base}.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_ROW_COLUMNS)
            for row in report.rows:
                writer.writerow([
                    row["record_id"], row["predicted"], "|".join(row["gold"]),
                    int(row["used_fallback"]),
                    *(f"{row[m]:.6f}" for m in ("crc", "groundedness", "hr",
                                                "srs", "context_relevance")),
                ])

        plot_path = out / f"{base}_plot.csv"
        with plot_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "backbone", "metric", "value"])
            for metric in GRID_METRICS:
                writer.writerow([report.variant, report.backbone, metric,
                                 f"{report.aggregates[metric]:.6f}"])
    except OSError as exc:
        raise IoError(f"cannot write report files under {out}: {exc}") from exc
    return [json_path, csv_path, plot_path]


def emit_ablation_grid(reports: list[EvalReport], out_path) -> Path:
    """Combined grid: one row per variant, the six ladder metrics as columns."""
    out_path = Path(out_path)
    try:
        with out_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", *GRID_METRICS])
            for report in reports:
                writer.writerow([
                    report.variant,
                    *(f"{report.aggregates[m]:.6f}" for m in GRID_METRICS),
                ])
    except OSError as exc:
        raise IoError(f"cannot write grid {out_path}: {exc}") from exc
    return out_path
