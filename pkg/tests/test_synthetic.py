import hashlib
import json

import numpy as np
import pytest

from carex.errors import SpecInvalid
from carex.synthetic import (
    SyntheticSpec,
    default_spec,
    enumerate_bin_marginals,
    generate_dataset,
    load_manifest,
    sample_case,
    sample_labeled_evidence,
)


class TestSampleCase:
    def test_rr_consistent_with_heart_rate(self):
        spec = default_spec()
        for seed in range(5):
            _, ev, _, vec = sample_case(spec, seed)
            hr = vec.values["heart_rate_bpm"]
            lo, hi = spec.bin_ranges["heart_rate_bpm"][ev.bins["heart_rate_bpm"] - 1]
            assert lo <= hr <= hi
            # RR implied by heart rate sits inside 60000/bpm bounds
            rr_ms = 60000.0 / hr
            assert 60000.0 / hi <= rr_ms <= 60000.0 / lo

    def test_values_fall_in_their_bins(self):
        spec = default_spec()
        for seed in range(10):
            _, ev, _, vec = sample_case(spec, seed)
            for factor, b in ev.bins.items():
                lo, hi = spec.bin_ranges[factor][b - 1]
                assert lo <= vec.values[factor] <= hi

    def test_bit_identical_for_same_seed(self):
        spec = default_spec()
        rec_a, ev_a, out_a, vec_a = sample_case(spec, 314)
        rec_b, ev_b, out_b, vec_b = sample_case(spec, 314)
        assert np.array_equal(rec_a.samples, rec_b.samples)
        assert ev_a.bins == ev_b.bins
        assert out_a == out_b
        assert vec_a.values == vec_b.values

    def test_different_seeds_differ(self):
        spec = default_spec()
        rec_a, _, _, _ = sample_case(spec, 1)
        rec_b, _, _, _ = sample_case(spec, 2)
        assert not np.array_equal(rec_a.samples, rec_b.samples)

    def test_bazett_identity_holds_exactly(self):
        spec = default_spec()
        _, _, _, vec = sample_case(spec, 77)
        rr_s = 60.0 / vec.values["heart_rate_bpm"]
        assert vec.values["qt_interval_ms"] / np.sqrt(rr_s) == pytest.approx(
            vec.values["qtc_bazett_ms"], rel=1e-12)

    def test_marginals_match_enumeration(self):
        spec = default_spec()
        marg = enumerate_bin_marginals(spec)
        counts = {name: np.zeros(len(m)) for name, m in marg.items()}
        n = 500
        rng = np.random.default_rng(42)
        seeds = rng.integers(0, 2**63 - 1, size=n)
        for i in range(n):
            _, ev, outcome, _ = sample_case(spec, int(seeds[i]))
            for name in marg:
                if name == "outcome":
                    counts[name][spec.outcome_states.index(outcome)] += 1
                else:
                    counts[name][ev.bins[name] - 1] += 1
        for name, want in marg.items():
            got = counts[name] / n
            assert np.abs(got - want).max() <= 0.05


class TestSpecValidation:
    def test_default_spec_valid(self):
        default_spec()

    def test_overlapping_ranges_rejected(self):
        spec = default_spec()
        bad = {f: list(r) for f, r in spec.bin_ranges.items()}
        bad["qt_interval_ms"] = [(320.0, 380.0), (360.0, 400.0), (410.0, 420.0)]
        with pytest.raises(SpecInvalid):
            SyntheticSpec(network=spec.network, bin_ranges=bad,
                          free_priors=spec.free_priors)

    def test_bad_prior_rejected(self):
        spec = default_spec()
        priors = dict(spec.free_priors, pr_interval_ms=[0.5, 0.2, 0.2])
        with pytest.raises(SpecInvalid):
            SyntheticSpec(network=spec.network, bin_ranges=spec.bin_ranges,
                          free_priors=priors)

    def test_json_round_trip(self):
        spec = default_spec()
        again = SyntheticSpec.from_json(json.loads(json.dumps(spec.to_json())))
        assert again.bin_ranges == spec.bin_ranges
        assert again.network.edges == spec.network.edges


class TestGenerateDataset:
    def test_empty_dataset(self, tmp_path):
        rows = generate_dataset(default_spec(), 0, 1, tmp_path / "s",
                                tmp_path / "m.jsonl")
        assert rows == []
        assert load_manifest(tmp_path / "m.jsonl") == []

    def test_deterministic_manifest_digest(self, tmp_path):
        spec = default_spec()
        generate_dataset(spec, 8, 42, tmp_path / "s1", tmp_path / "m1.jsonl")
        generate_dataset(spec, 8, 42, tmp_path / "s2", tmp_path / "m2.jsonl")
        d1 = hashlib.sha256((tmp_path / "m1.jsonl").read_bytes()).hexdigest()
        d2 = hashlib.sha256((tmp_path / "m2.jsonl").read_bytes()).hexdigest()
        assert d1 == d2

    def test_manifest_rows_complete(self, tmp_path):
        rows = generate_dataset(default_spec(), 3, 5, tmp_path / "s",
                                tmp_path / "m.jsonl")
        for row in rows:
            assert set(row) == {"record_id", "patient_id", "query", "gold_outcome",
                                "gold_bins", "gold_values"}
            assert len(row["gold_bins"]) == 8


class TestSampleLabeledEvidence:
    def test_rows_cover_network_nodes(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 20, seed=3)
        assert len(data.rows) == 20
        for evidence, outcome in data.rows:
            assert set(evidence.bins) == {"rr_rmssd_ms", "qt_interval_ms",
                                          "qtc_bazett_ms"}
            assert outcome in spec.outcome_states

    def test_deterministic(self):
        spec = default_spec()
        a = sample_labeled_evidence(spec, 15, seed=9)
        b = sample_labeled_evidence(spec, 15, seed=9)
        assert [(e.bins, o) for e, o in a.rows] == [(e.bins, o) for e, o in b.rows]
