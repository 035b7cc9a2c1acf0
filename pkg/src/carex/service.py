"""HTTP JSON service over a fitted pipeline handle.

Every endpoint is a thin adapter around the corresponding library call;
the handle is immutable and shared across requests, refits are loaded by
atomic handle replacement. Errors map to {error, code, detail} bodies.
"""

from __future__ import annotations

import base64
import binascii
import tempfile
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import errors as E
from .agents import AgentMessage, build_prompt, diagnosis_agent, history_agent, respond
from .artifacts import PipelineHandle
from .causal import infer_posterior
from .counterfactual import find_counterfactual, whatif
from .knowledge import RetrievalResult, enrich_query, retrieve
from .signal_io import read_csv_record, read_wfdb16_record

_STATUS_BY_ERROR = {
    E.NotFound: 404,
    E.ZeroProbabilityEvidence: 409,
    E.RemoteUnavailable: 502,
    E.Timeout: 502,
    E.IoError: 500,
    E.MissingArtifact: 500,
}


def _status_for(exc: E.CarexError) -> int:
    for klass, status in _STATUS_BY_ERROR.items():
        if isinstance(exc, klass):
            return status
    return 400  # remaining library errors are input/validation problems


def _error_body(exc: Exception, detail: str = "") -> dict:
    return {"error": str(exc), "code": type(exc).__name__, "detail": detail}


def _posterior_json(posterior) -> dict:
    return {
        "variable": posterior.variable,
        "probs": dict(posterior.probs),
        "argmax": posterior.argmax(),
    }


def _retrieval_json(result: RetrievalResult) -> dict:
    return {
        "enriched_query": result.enriched_query,
        "empty_query": result.empty_query,
        "facts": [
            {"fact_id": doc.fact_id, "text": doc.text, "tags": list(doc.tags),
             "source": doc.source, "score": score}
            for doc, score in result.items
        ],
    }


def create_app(handle: PipelineHandle, cors_origin: str | None = None) -> FastAPI:
    app = FastAPI(title="carex", version=handle.version)
    app.state.handle = handle
    if cors_origin:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(E.CarexError)
    async def _carex_error(request: Request, exc: E.CarexError):
        return JSONResponse(status_code=_status_for(exc), content=_error_body(exc))

    def _handle() -> PipelineHandle:
        return app.state.handle

    def _store(h: PipelineHandle):
        if h.store is None:
            raise E.MissingArtifact("service has no record store")
        return h.store

    @app.get("/health")
    def health():
        return {"status": "ok", "version": _handle().version}

    @app.get("/records")
    def list_records():
        h = _handle()
        store = _store(h)
        return {
            "records": [
                {
                    "record_id": rid,
                    "patient_id": store.index[rid].get("patient_id"),
                    "acquired_at": store.index[rid].get("acquired_at"),
                    "sampling_rate_hz": store.index[rid].get("sampling_rate_hz"),
                    "lead_names": store.index[rid].get("lead_names"),
                    "num_samples": store.index[rid].get("num_samples"),
                }
                for rid in store.list_records()
            ]
        }

    @app.get("/records/{record_id}")
    def get_record(record_id: str):
        h = _handle()
        rec = _store(h).load_record(record_id)
        return {
            "record_id": rec.record_id,
            "patient_id": rec.patient_id,
            "acquired_at": rec.acquired_at,
            "sampling_rate_hz": rec.sampling_rate_hz,
            "lead_names": rec.lead_names,
            "num_samples": rec.num_samples,
            "duration_s": rec.duration_s,
        }

    @app.post("/records")
    def upload_record(body: dict):
        """Base64 upload: {"kind": "csv"|"wfdb16", "content_b64": ...} plus
        kind-specific fields (csv: sampling_rate_hz, lead_names, record_id;
        wfdb16: header_b64 + content_b64 as the signal file)."""
        h = _handle()
        store = _store(h)
        kind = body.get("kind")
        try:
            if kind == "csv":
                with tempfile.TemporaryDirectory() as tmp:
                    path = Path(tmp) / f"{body.get('record_id', 'upload')}.csv"
                    path.write_bytes(base64.b64decode(body["content_b64"]))
                    rec = read_csv_record(
                        path,
                        sampling_rate_hz=float(body["sampling_rate_hz"]),
                        lead_names=list(body["lead_names"]),
                        record_id=body.get("record_id"),
                        patient_id=body.get("patient_id"),
                        acquired_at=body.get("acquired_at"),
                        scale=float(body.get("scale", 1.0)),
                    )
            elif kind == "wfdb16":
                with tempfile.TemporaryDirectory() as tmp:
                    header = Path(tmp) / "upload.hea"
                    header.write_bytes(base64.b64decode(body["header_b64"]))
                    # the signal file name comes from the header's first signal line
                    lines = [ln for ln in header.read_text().splitlines()
                             if ln.strip() and not ln.lstrip().startswith("#")]
                    if len(lines) < 2:
                        raise E.HeaderMismatch("header has no signal lines")
                    signal_name = lines[1].split()[0]
                    (Path(tmp) / signal_name).write_bytes(
                        base64.b64decode(body["content_b64"]))
                    rec = read_wfdb16_record(header, record_id=body.get("record_id"))
            else:
                raise E.UsageError(f"unknown upload kind {kind!r}")
        except (KeyError, ValueError, binascii.Error) as exc:
            raise E.UsageError(f"malformed upload body: {exc}") from exc
        rid = store.store_record(rec)
        return {"record_id": rid}

    @app.get("/records/{record_id}/biomarkers")
    def biomarkers(record_id: str):
        h = _handle()
        vec = h.vector_for(record_id)
        ev = h.evidence_for(record_id)
        return {
            "record_id": record_id,
            "values": dict(vec.values),
            "quality": dict(vec.quality),
            "bins": dict(ev.bins),
            "labels": dict(ev.labels),
        }

    @app.get("/records/{record_id}/posterior")
    def posterior(record_id: str):
        h = _handle()
        post = infer_posterior(h.network, h.evidence_for(record_id),
                               h.config.outcome_node)
        return _posterior_json(post)

    @app.post("/records/{record_id}/whatif")
    def whatif_endpoint(record_id: str, body: dict):
        h = _handle()
        overrides = {k: int(v) for k, v in (body.get("overrides") or {}).items()}
        post = whatif(h.network, h.evidence_for(record_id), overrides,
                      outcome=h.config.outcome_node)
        return _posterior_json(post)

    @app.post("/records/{record_id}/counterfactual")
    def counterfactual_endpoint(record_id: str, body: dict):
        h = _handle()
        target = body.get("target")
        if target is None:
            raise E.UsageError("body must name a target state")
        evidence = h.evidence_for(record_id)
        result = find_counterfactual(
            h.network, evidence, target,
            max_edits=int(body.get("max_edits", h.config.max_edits)),
            outcome=h.config.outcome_node,
        )
        return result.to_json(h.network, evidence)

    @app.post("/records/{record_id}/explain")
    def explain(record_id: str, body: dict):
        h = _handle()
        if h.index is None:
            raise E.MissingArtifact("no knowledge index fitted")
        cfg = h.config
        store = _store(h)
        query = body.get("query", "")
        fallback_enabled = bool(body.get("fallback_enabled", cfg.fallback_enabled))

        evidence = h.evidence_for(record_id)
        posterior, drivers, counterfactual = diagnosis_agent(
            h.network, evidence, query, cfg.outcome_node,
            outcome_lexicon=cfg.outcome_lexicon, max_edits=cfg.max_edits,
        )
        prediction = posterior.argmax()
        vectors = {}
        for rid in store.list_records():
            try:
                vectors[rid] = h.vector_for(rid)
            except E.EncodeFailure:
                continue  # unencodable corpus records can't serve as history
        delta = history_agent(store, vectors, store.load_record(record_id))
        enriched = enrich_query(query, drivers, evidence, prediction, cfg.enrich_top_m)
        retrieved = retrieve(h.index, enriched, cfg.retrieval_k)
        message = AgentMessage(
            query=query, evidence=evidence, prediction=prediction,
            posterior=posterior, retrieved=retrieved, drivers=drivers,
            delta=delta, counterfactual=counterfactual,
        )
        payload = respond(
            message, cfg.generator,
            fallback_enabled=fallback_enabled,
            hr_threshold=cfg.hr_threshold,
            match_threshold=cfg.match_threshold,
        )
        return {
            **payload.to_json(),
            "audit": {
                "query": query,
                "evidence": {"bins": dict(evidence.bins), "labels": dict(evidence.labels)},
                "prediction": prediction,
                "posterior": _posterior_json(posterior),
                "drivers": [[f, s] for f, s in drivers],
                "retrieved": _retrieval_json(retrieved),
                "delta": (
                    {"deltas": delta.deltas, "baseline_record_id": delta.baseline_record_id,
                     "surrogate": delta.surrogate}
                    if delta is not None else None
                ),
                "counterfactual": (
                    counterfactual.to_json(h.network, evidence)
                    if counterfactual is not None else None
                ),
                "prompt": build_prompt(message, rag_only=False),
            },
        }

    @app.get("/graph")
    def graph():
        return _handle().network.to_json()

    return app


def serve(handle: PipelineHandle, bind: str = "127.0.0.1:8000",
          cors_origin: str | None = None):
    import uvicorn

    host, _, port = bind.partition(":")
    app = create_app(handle, cors_origin=cors_origin)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000),
                    log_level="warning")
    except OSError as exc:
        raise E.IoError(f"cannot bind {bind}: {exc}") from exc
