import numpy as np
import pytest

from carex.agents import (
    FALLBACK_NOTE,
    AgentMessage,
    GeneratorConfig,
    build_prompt,
    diagnosis_agent,
    generate,
    history_agent,
    resolve_target_state,
    respond,
)
from carex.biomarker import BiomarkerVector, DiscreteEvidence
from carex.causal import CausalNetwork, NodeSpec, Posterior
from carex.errors import RemoteUnavailable, SchemaMismatch
from carex.grounding import hallucination_risk
from carex.knowledge import FactDoc, RetrievalResult
from carex.signal_io import EcgRecord, RecordStore

FACTS = [
    FactDoc("f1", "qt prolongation raises arrhythmic risk"),
    FactDoc("f2", "st elevation suggests myocardial injury"),
]


def make_message(facts=FACTS, drivers=None, query="why is this MI"):
    evidence = DiscreteEvidence(
        "r1", {"qtc_bazett_ms": 3, "rr_rmssd_ms": 2},
        {"qtc_bazett_ms": "High", "rr_rmssd_ms": "Mid"},
    )
    if drivers is None:
        drivers = [("qtc_bazett_ms", 0.4), ("rr_rmssd_ms", 0.1)]
    return AgentMessage(
        query=query,
        evidence=evidence,
        prediction="MI",
        posterior=Posterior("outcome", {"Normal": 0.13, "MI": 0.87}),
        retrieved=RetrievalResult([(f, 0.5) for f in facts], query,
                                  empty_query=not facts),
        drivers=drivers,
    )


class TestBuildPrompt:
    def test_rag_only_causal_line_is_none(self):
        prompt = build_prompt(make_message(), rag_only=True)
        assert "Key Causal Factors (from VAE/Graph): None" in prompt.splitlines()

    def test_fact_lines_enumerated(self):
        lines = build_prompt(make_message()).splitlines()
        assert f"[Fact 1] {FACTS[0].text}" in lines
        assert f"[Fact 2] {FACTS[1].text}" in lines

    def test_byte_deterministic(self):
        assert build_prompt(make_message()) == build_prompt(make_message())

    def test_section_order(self):
        prompt = build_prompt(make_message())
        q = prompt.index("Patient Query:")
        c = prompt.index("Key Causal Factors")
        r = prompt.index("Retrieved Medical Facts (RAG):")
        i = prompt.index("Explain the prediction clearly and medically grounded")
        assert q < c < r < i

    def test_causal_descriptors_comma_joined(self):
        prompt = build_prompt(make_message())
        assert "Key Causal Factors (from VAE/Graph): " \
               "qtc_bazett_ms=High, rr_rmssd_ms=Mid" in prompt.splitlines()


class TestGenerateOffline:
    def test_template_contents(self):
        cfg = GeneratorConfig(mode="offline")
        message = make_message()
        text = generate(build_prompt(message), cfg, message=message)
        lines = text.splitlines()
        assert lines[0] == f"[Fact 1] {FACTS[0].text}"
        assert lines[1] == f"[Fact 2] {FACTS[1].text}"
        assert "qtc_bazett_ms is High." in lines
        assert "rr_rmssd_ms is Mid." in lines
        assert lines[-1] == "The predicted outcome is MI with probability 0.87."

    def test_two_facts_one_driver_gives_four_sentences(self):
        cfg = GeneratorConfig(mode="offline")
        message = make_message(drivers=[("qtc_bazett_ms", 0.4)])
        text = generate(build_prompt(message), cfg, message=message)
        lines = text.splitlines()
        assert len(lines) == 4  # 2 facts + 1 driver + prediction
        assert FACTS[0].text in lines[0]
        assert FACTS[1].text in lines[1]
        assert "qtc_bazett_ms is High." == lines[2]
        assert lines[3].startswith("The predicted outcome is")

    def test_rag_only_drops_drivers(self):
        cfg = GeneratorConfig(mode="offline")
        message = make_message()
        text = generate(build_prompt(message, True), cfg, message=message,
                        rag_only=True)
        assert "qtc_bazett_ms" not in text

    def test_offline_requires_message(self):
        with pytest.raises(SchemaMismatch):
            generate("prompt", GeneratorConfig(mode="offline"))


class TestGenerateRemote:
    class FakeResponse:
        def __init__(self, status_code=200, payload=None, text=""):
            self.status_code = status_code
            self._payload = payload
            self.text = text

        def json(self):
            return self._payload

    def test_pass_through(self, monkeypatch):
        def fake_post(url, **kwargs):
            assert kwargs["json"]["model"] == "gpt-4"
            assert kwargs["json"]["temperature"] == 0.3
            assert kwargs["json"]["max_tokens"] == 600
            return self.FakeResponse(
                payload={"choices": [{"message": {"content": "verbatim reply"}}]})

        monkeypatch.setattr("carex.agents.requests.post", fake_post)
        cfg = GeneratorConfig(mode="remote", endpoint="http://llm.local/v1/chat")
        assert generate("p", cfg) == "verbatim reply"

    def test_http_500(self, monkeypatch):
        monkeypatch.setattr("carex.agents.requests.post",
                            lambda url, **k: self.FakeResponse(500, text="boom"))
        cfg = GeneratorConfig(mode="remote", endpoint="http://llm.local/v1/chat")
        with pytest.raises(RemoteUnavailable, match="500"):
            generate("p", cfg)

    def test_remote_requires_endpoint(self):
        with pytest.raises(SchemaMismatch):
            GeneratorConfig(mode="remote", endpoint=None)

    def test_wire_format_over_real_socket(self, monkeypatch):
        import json as jsonlib
        import threading
        from http.server import BaseHTTPRequestHandler, HTTPServer

        received = {}

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                received["body"] = jsonlib.loads(self.rfile.read(length))
                received["auth"] = self.headers.get("Authorization")
                if self.path == "/fail":
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(b"backend exploded")
                    return
                payload = jsonlib.dumps(
                    {"choices": [{"message": {"content": "socket reply"}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            port = server.server_address[1]
            monkeypatch.setenv("CAREX_API_KEY", "sekret")
            cfg = GeneratorConfig(mode="remote",
                                  endpoint=f"http://127.0.0.1:{port}/v1/chat",
                                  timeout_s=5.0)
            assert generate("the prompt", cfg) == "socket reply"
            assert received["auth"] == "Bearer sekret"
            assert received["body"]["messages"] == [
                {"role": "user", "content": "the prompt"}]
            assert received["body"]["model"] == "gpt-4"

            bad = GeneratorConfig(mode="remote",
                                  endpoint=f"http://127.0.0.1:{port}/fail",
                                  timeout_s=5.0)
            with pytest.raises(RemoteUnavailable, match="backend exploded"):
                generate("p", bad)
        finally:
            server.shutdown()
            server.server_close()


class StubGenerator:
    """Patches offline generation to return canned text."""

    def __init__(self, monkeypatch, text_with_causal, text_rag_only=None,
                 fail_fallback=False):
        self.calls = []
        outer = self

        def fake_template(message, rag_only):
            outer.calls.append(rag_only)
            if rag_only:
                if fail_fallback:
                    raise RemoteUnavailable("fallback down")
                return text_rag_only if text_rag_only is not None else text_with_causal
            return text_with_causal

        monkeypatch.setattr("carex.agents._offline_template", fake_template)


class TestRespond:
    def test_offline_template_grounded_no_fallback(self):
        message = make_message()
        payload = respond(message, GeneratorConfig(mode="offline"))
        assert payload.hallucination_score == 0.0
        assert not payload.used_fallback
        assert payload.raw_rag_only is None
        assert FALLBACK_NOTE not in payload.explanation

    def test_fact_free_text_triggers_fallback(self, monkeypatch):
        StubGenerator(monkeypatch, "totally ungrounded claim.",
                      text_rag_only=FACTS[0].text + ". " + FACTS[1].text + ".")
        message = make_message()
        payload = respond(message, GeneratorConfig(mode="offline"),
                          fallback_enabled=True)
        assert payload.used_fallback
        assert payload.explanation.endswith(FALLBACK_NOTE)
        assert payload.raw_with_causal == "totally ungrounded claim."
        assert payload.raw_rag_only is not None
        assert payload.hallucination_score == 0.0  # re-scored on the fallback text

    def test_gate_off_reports_high_hr(self, monkeypatch):
        StubGenerator(monkeypatch, "totally ungrounded claim.")
        message = make_message()
        payload = respond(message, GeneratorConfig(mode="offline"),
                          fallback_enabled=False)
        assert not payload.used_fallback
        assert payload.hallucination_score == 1.0
        assert FALLBACK_NOTE not in payload.explanation

    def test_ungroundable_retrieval_forces_fallback(self):
        message = make_message(facts=[])
        payload = respond(message, GeneratorConfig(mode="offline"),
                          fallback_enabled=False)
        assert payload.used_fallback
        assert payload.explanation.endswith(FALLBACK_NOTE)
        assert any("ungroundable" in w for w in payload.warnings)

    def test_verifier_disabled_never_falls_back(self, monkeypatch):
        StubGenerator(monkeypatch, "totally ungrounded claim.")
        message = make_message(facts=[])
        payload = respond(message, GeneratorConfig(mode="offline"),
                          fallback_enabled=True, verifier_enabled=False)
        assert not payload.used_fallback
        assert FALLBACK_NOTE not in payload.explanation

    def test_fallback_generation_failure_keeps_original(self, monkeypatch):
        StubGenerator(monkeypatch, "totally ungrounded claim.", fail_fallback=True)
        message = make_message()
        payload = respond(message, GeneratorConfig(mode="offline"))
        assert not payload.used_fallback
        assert payload.explanation == "totally ungrounded claim."
        assert any("fallback generation failed" in w for w in payload.warnings)

    def test_gate_exactness_randomized(self, monkeypatch):
        rng = np.random.default_rng(997)
        for _ in range(40):
            n_match = int(rng.integers(0, 3))
            quoted = [f.text for f in FACTS[:n_match]]
            text = ". ".join(quoted + ["unrelated filler words"]) + "."
            StubGenerator(monkeypatch, text, text_rag_only=text)
            fallback_enabled = bool(rng.integers(0, 2))
            message = make_message()
            hr_initial = hallucination_risk(text, FACTS).hr
            payload = respond(message, GeneratorConfig(mode="offline"),
                              fallback_enabled=fallback_enabled)
            want = hr_initial > 0.5 and fallback_enabled
            assert payload.used_fallback == want
            assert (FALLBACK_NOTE in payload.explanation) == want

    def test_deterministic_payload(self):
        message = make_message()
        a = respond(message, GeneratorConfig(mode="offline"))
        b = respond(message, GeneratorConfig(mode="offline"))
        assert a.to_json() == b.to_json()


class TestResolveTarget:
    STATES = ("Normal", "MI")
    LEXICON = {"MI": ["mi", "myocardial infarction"], "Normal": ["normal"]}

    def test_query_naming_argmax_flips_in_binary_case(self):
        posterior = Posterior("outcome", {"Normal": 0.2, "MI": 0.8})
        got = resolve_target_state("what if not MI", posterior, self.STATES,
                                   self.LEXICON)
        assert got == "Normal"

    def test_query_naming_other_state_targets_it(self):
        posterior = Posterior("outcome", {"Normal": 0.2, "MI": 0.8})
        got = resolve_target_state("could this be normal", posterior, self.STATES,
                                   self.LEXICON)
        assert got == "Normal"

    def test_no_target_terms_uses_runner_up(self):
        posterior = Posterior("outcome", {"Normal": 0.2, "MI": 0.8})
        got = resolve_target_state("explain the rhythm", posterior, self.STATES,
                                   self.LEXICON)
        assert got == "Normal"


class TestAgents:
    def make_store_with_vectors(self, tmp_path):
        store = RecordStore(tmp_path / "s")
        rng = np.random.default_rng(0)
        vectors = {}
        specs = [
            ("old", "p1", 100.0, 400.0),
            ("mid", "p1", 200.0, 420.0),
            ("new", "p1", 300.0, 430.0),
            ("other", "p2", 150.0, 360.0),
        ]
        for rid, pid, when, qt in specs:
            rec = EcgRecord(rid, 500, ["II"], rng.normal(size=(1, 1200)),
                            patient_id=pid, acquired_at=when)
            store.store_record(rec)
            vectors[rid] = BiomarkerVector(
                rid, {"qt_interval_ms": qt, "heart_rate_bpm": 60.0 + qt / 100},
                {"qt_interval_ms": "ok", "heart_rate_bpm": "ok"},
            )
        return store, vectors

    def test_history_prefers_most_recent_prior(self, tmp_path):
        store, vectors = self.make_store_with_vectors(tmp_path)
        current = store.load_record("new")
        d = history_agent(store, vectors, current)
        assert d.baseline_record_id == "mid"
        assert not d.surrogate
        assert d.deltas["qt_interval_ms"] == pytest.approx(10.0)

    def test_surrogate_when_no_prior(self, tmp_path):
        store, vectors = self.make_store_with_vectors(tmp_path)
        current = store.load_record("other")  # p2 has no history
        d = history_agent(store, vectors, current)
        assert d.surrogate
        assert d.baseline_record_id == "old"  # nearest in z-scored space

    def test_no_candidates_returns_none(self, tmp_path):
        store = RecordStore(tmp_path / "s2")
        rng = np.random.default_rng(1)
        rec = EcgRecord("only", 500, ["II"], rng.normal(size=(1, 1200)),
                        patient_id="p", acquired_at=1.0)
        store.store_record(rec)
        vectors = {"only": BiomarkerVector("only", {"f": 1.0}, {"f": "ok"})}
        assert history_agent(store, vectors, rec) is None

    def test_diagnosis_agent_targets_runner_up(self):
        nodes = [NodeSpec("a", ("Low", "High")), NodeSpec("outcome", ("Normal", "MI"))]
        net = CausalNetwork(nodes=nodes, edges={("a", "outcome")})
        net.cpts = {
            "a": np.array([0.5, 0.5]),
            "outcome": np.array([[0.9, 0.1], [0.2, 0.8]]),
        }
        evidence = DiscreteEvidence("r", {"a": 2}, {"a": "High"})
        posterior, drivers, cf = diagnosis_agent(
            net, evidence, "no target words", "outcome", outcome_lexicon={})
        assert posterior.argmax() == "MI"
        assert drivers[0][0] == "a"
        assert cf is not None and cf.target == "Normal"
        assert cf.achieved and cf.edit.edits == {"a": 1}
