"""Command-line entry point for the whole pipeline lifecycle.

Subcommands: ingest, encode, fit, index, infer, counterfactual, explain,
evaluate, synth, serve. Every command prints JSON to stdout (or --out)
and exits 0 on success, 1 on validation errors, 2 on I/O failures, 3 on
remote-generator failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import errors as E
from .artifacts import PipelineHandle, encode_records, fit_pipeline
from .config import PipelineConfig, canonical_json
from .counterfactual import find_counterfactual
from .knowledge import build_index, load_corpus
from .signal_io import RecordStore, read_csv_record, read_feature_csv, read_wfdb16_record
from .synthetic import SyntheticSpec, default_spec, generate_dataset, load_manifest


def _data_path(name: str) -> Path:
    return Path(resources.files("carex.data") / name)


def _emit(obj, out: str | None):
    text = canonical_json(obj) + "\n"
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise E.IoError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _load_config(path: str | None) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def _load_labels(manifest_path) -> dict[str, str]:
    rows = load_manifest(manifest_path)
    return {r["record_id"]: r["gold_outcome"] for r in rows if "gold_outcome" in r}


def cmd_ingest(args) -> dict:
    store = RecordStore(args.store)
    if args.csv:
        if not args.rate or not args.leads:
            raise E.UsageError("--csv ingest needs --rate and --leads")
        rec = read_csv_record(
            args.csv, sampling_rate_hz=args.rate,
            lead_names=[l.strip() for l in args.leads.split(",")],
            record_id=args.record_id, patient_id=args.patient_id,
            acquired_at=args.acquired_at, scale=args.scale,
        )
    elif args.wfdb:
        rec = read_wfdb16_record(args.wfdb, record_id=args.record_id)
        if args.patient_id:
            rec.patient_id = args.patient_id
        if args.acquired_at is not None:
            rec.acquired_at = args.acquired_at
    else:
        raise E.UsageError("ingest needs --csv or --wfdb")
    rid = store.store_record(rec)
    return {"record_id": rid, "num_samples": rec.num_samples,
            "lead_names": rec.lead_names}


def cmd_encode(args) -> dict:
    store = RecordStore(args.store, create=False)
    features = None
    if args.features:
        features = dict(read_feature_csv(args.features))
    vectors = encode_records(store, store.list_records(), features)
    return {
        rid: {"values": v.values, "quality": v.quality}
        for rid, v in sorted(vectors.items())
    }


def cmd_fit(args) -> dict:
    config = _load_config(args.config)
    if args.store:
        config.store_path = args.store
    if not config.store_path:
        raise E.UsageError("fit needs --store or store_path in the config")
    store = RecordStore(config.store_path, create=False)
    labels = _load_labels(args.labels)
    if not labels:
        raise E.UsageError(f"no labelled rows in {args.labels}")
    corpus_path = args.corpus or config.corpus_path or str(_data_path("demo_corpus.jsonl"))
    descriptor_path = (args.descriptor_map or config.descriptor_map_path
                       or str(_data_path("descriptor_map.json")))
    config.corpus_path = corpus_path
    config.descriptor_map_path = descriptor_path
    features = dict(read_feature_csv(args.features)) if args.features else None
    handle = fit_pipeline(
        store, labels, config,
        corpus_docs=load_corpus(corpus_path),
        feature_vectors=features,
        descriptor_map=json.loads(Path(descriptor_path).read_text()),
    )
    handle.save(args.artifacts)
    return {
        "artifacts": args.artifacts,
        "version": handle.version,
        "nodes": handle.network.node_names(),
        "edges": sorted(list(e) for e in handle.network.edges),
        "degenerate_factors": sorted(handle.discretizer.degenerate),
        "outcome_prior": handle.outcome_prior,
    }


def cmd_index(args) -> dict:
    docs = load_corpus(args.corpus)
    index = build_index(docs)
    index.save(args.out_index)
    return {"indexed_docs": len(index.docs), "path": args.out_index}


def cmd_infer(args) -> dict:
    from .causal import infer_posterior

    handle = PipelineHandle.load(args.artifacts, store_path=args.store)
    posterior = infer_posterior(
        handle.network, handle.evidence_for(args.record_id),
        handle.config.outcome_node,
    )
    return {"record_id": args.record_id, "variable": posterior.variable,
            "probs": posterior.probs, "argmax": posterior.argmax()}


def cmd_counterfactual(args) -> dict:
    handle = PipelineHandle.load(args.artifacts, store_path=args.store)
    evidence = handle.evidence_for(args.record_id)
    result = find_counterfactual(
        handle.network, evidence, args.target,
        max_edits=args.max_edits, outcome=handle.config.outcome_node,
    )
    return {"record_id": args.record_id,
            **result.to_json(handle.network, evidence)}


def cmd_explain(args) -> dict:
    from .agents import AgentMessage, diagnosis_agent, respond
    from .knowledge import enrich_query, retrieve

    handle = PipelineHandle.load(args.artifacts, store_path=args.store)
    if handle.index is None:
        raise E.MissingArtifact("artifacts bundle has no knowledge index")
    cfg = handle.config
    evidence = handle.evidence_for(args.record_id)
    posterior, drivers, counterfactual = diagnosis_agent(
        handle.network, evidence, args.query, cfg.outcome_node,
        outcome_lexicon=cfg.outcome_lexicon, max_edits=cfg.max_edits,
    )
    prediction = posterior.argmax()
    enriched = enrich_query(args.query, drivers, evidence, prediction,
                            cfg.enrich_top_m)
    retrieved = retrieve(handle.index, enriched, cfg.retrieval_k)
    message = AgentMessage(
        query=args.query, evidence=evidence, prediction=prediction,
        posterior=posterior, retrieved=retrieved, drivers=drivers,
        counterfactual=counterfactual,
    )
    payload = respond(
        message, cfg.generator,
        fallback_enabled=args.fallback,
        hr_threshold=cfg.hr_threshold,
        match_threshold=cfg.match_threshold,
    )
    return {"record_id": args.record_id, "prediction": prediction,
            "posterior": posterior.probs, **payload.to_json()}


def cmd_evaluate(args) -> dict:
    from .evaluation import emit_ablation_grid, emit_report, run_ablation

    handle = PipelineHandle.load(args.artifacts, store_path=args.store)
    manifest_rows = load_manifest(args.manifest)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    reports = run_ablation(handle, manifest_rows, variants)
    out_dir = Path(args.out_dir)
    written = []
    for report in reports:
        written.extend(str(p) for p in emit_report(report, out_dir))
    grid = emit_ablation_grid(reports, out_dir / "ablation_grid.csv")
    written.append(str(grid))
    return {
        "reports": written,
        "aggregates": {r.variant: r.aggregates for r in reports},
    }


def cmd_synth(args) -> dict:
    if args.spec:
        try:
            spec = SyntheticSpec.from_json(json.loads(Path(args.spec).read_text()))
        except OSError as exc:
            raise E.IoError(f"cannot read {args.spec}: {exc}") from exc
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise E.UsageError(f"invalid synthetic model file {args.spec}: {exc}") from exc
    else:
        spec = default_spec()
    rows = generate_dataset(spec, args.num, args.seed, args.store, args.manifest)
    return {"cases": len(rows), "store": args.store, "manifest": args.manifest}


def cmd_serve(args) -> dict:
    from .service import serve

    handle = PipelineHandle.load(args.artifacts, store_path=args.store)
    serve(handle, bind=args.bind, cors_origin=args.cors_origin)
    return {"status": "stopped"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the CLI contract wants 1 with usage."""

    def error(self, message):
        raise E.UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="carex",
        description="Causal ECG reasoning pipeline",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="load a CSV or WFDB record into a store")
    p.add_argument("--store", required=True)
    p.add_argument("--csv")
    p.add_argument("--wfdb", help="WFDB header (.hea) path")
    p.add_argument("--rate", type=float, help="sampling rate for CSV ingest")
    p.add_argument("--leads", help="comma-separated lead names for CSV ingest")
    p.add_argument("--scale", type=float, default=1.0,
                   help="multiplicative factor applied to CSV values")
    p.add_argument("--record-id")
    p.add_argument("--patient-id")
    p.add_argument("--acquired-at", type=float)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode", help="biomarker table for every stored record")
    p.add_argument("--store", required=True)
    p.add_argument("--features", help="precomputed feature CSV (overrides waveforms)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("fit", help="fit discretizer, structure, CPTs and index")
    p.add_argument("--store")
    p.add_argument("--labels", required=True, help="JSONL manifest with gold_outcome")
    p.add_argument("--config")
    p.add_argument("--corpus")
    p.add_argument("--descriptor-map")
    p.add_argument("--features")
    p.add_argument("--artifacts", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("index", help="build the knowledge index from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-index", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("infer", help="posterior for a record")
    p.add_argument("record_id")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--store")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("counterfactual", help="minimal evidence edit toward a target")
    p.add_argument("record_id")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--store")
    p.add_argument("--target", required=True)
    p.add_argument("--max-edits", type=int, default=1)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("explain", help="grounded explanation for a record")
    p.add_argument("record_id")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--store")
    p.add_argument("--query", required=True)
    p.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="run the ablation ladder over a manifest")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variants", default="A0,A1,A2,A3,A4")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--spec", help="JSON spec (defaults to the built-in chain)")
    p.add_argument("-n", "--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--store", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="HTTP service over fitted artifacts")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--store")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--cors-origin")
    p.set_defaults(func=cmd_serve)

    for sub_parser in sub.choices.values():
        sub_parser.add_argument("--out", help="write the JSON result here instead of stdout")

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        result = args.func(args)
        _emit(result, getattr(args, "out", None))
        return 0
    except E.IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (E.RemoteUnavailable, E.Timeout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except E.UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except E.CarexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
