import math

import numpy as np
import pytest

from carex.biomarker import DiscreteEvidence
from carex.causal import (
    CausalNetwork,
    EdgeConstraints,
    LabeledEvidenceSet,
    NodeSpec,
    enumerate_posterior,
    fit_cpts,
    infer_posterior,
    k2_score,
    learn_structure,
    rank_contributions,
)
from carex.errors import (
    ConstraintConflict,
    OrderingIncomplete,
    UnknownNode,
    ZeroProbabilityEvidence,
)
from carex.synthetic import default_spec, sample_labeled_evidence


def evidence_set(nodes, rows, outcome="y"):
    """rows: list of dicts var -> 1-based bin / outcome state string."""
    out_states = next(n.states for n in nodes if n.name == outcome)
    converted = []
    for i, row in enumerate(rows):
        bins = {k: v for k, v in row.items() if k != outcome}
        labels = {k: f"b{v}" for k, v in bins.items()}
        converted.append((DiscreteEvidence(f"r{i}", bins, labels), row[outcome]))
    return LabeledEvidenceSet(nodes=list(nodes), outcome=outcome, rows=converted)


BINARY = ("s1", "s2")


def random_net(rng, max_nodes=6, max_card=4):
    n_nodes = int(rng.integers(2, max_nodes + 1))
    names = [f"n{j}" for j in range(n_nodes)]
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n_nodes)]
    nodes = [NodeSpec(nm, tuple(f"s{k}" for k in range(c)))
             for nm, c in zip(names, cards)]
    edges = set()
    for j in range(n_nodes):
        for i in range(j):
            if rng.random() < 0.4:
                edges.add((names[i], names[j]))
    net = CausalNetwork(nodes=nodes, edges=edges)
    cpts = {}
    for j, nm in enumerate(names):
        parents = net.parents_of(nm)
        shape = tuple(cards[names.index(p)] for p in parents) + (cards[j],)
        raw = rng.random(shape) + 0.05
        cpts[nm] = raw / raw.sum(axis=-1, keepdims=True)
    net.cpts = cpts
    return net, names, cards


class TestK2Score:
    def test_hand_computed_two_rows(self):
        nodes = [NodeSpec("y", BINARY)]
        data = evidence_set(nodes, [{"y": "s1"}, {"y": "s1"}])
        # lnG(2) - lnG(4) + lnG(3) + lnG(1) = -ln 6 + ln 2 = ln(1/3)
        assert k2_score(data, "y", []) == pytest.approx(math.log(1 / 3))

    def test_deterministic(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        data = evidence_set(nodes, [{"a": 1, "y": "s1"}, {"a": 2, "y": "s2"}] * 10)
        assert k2_score(data, "y", ["a"]) == k2_score(data, "y", ["a"])

    def test_true_parent_scores_higher_on_chain_data(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 2000, seed=1)
        informative = k2_score(data, "outcome", ["qtc_bazett_ms"])
        independent = k2_score(data, "outcome", ["qt_interval_ms"])
        assert informative > independent

    def test_listwise_deletion_skips_partial_rows(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        full = evidence_set(nodes, [{"a": 1, "y": "s1"}, {"a": 1, "y": "s1"}])
        with_hole = evidence_set(
            nodes, [{"a": 1, "y": "s1"}, {"a": 1, "y": "s1"}, {"y": "s2"}])
        assert k2_score(full, "y", ["a"]) == pytest.approx(
            k2_score(with_hole, "y", ["a"]))

    def test_unknown_node(self):
        nodes = [NodeSpec("y", BINARY)]
        data = evidence_set(nodes, [{"y": "s1"}])
        with pytest.raises(UnknownNode):
            k2_score(data, "ghost", [])


class TestLearnStructure:
    def test_recovers_default_chain(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 2000, seed=1)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"])
        net = learn_structure(data, priors, max_parents=2)
        assert net.edges == {
            ("rr_rmssd_ms", "outcome"),
            ("qtc_bazett_ms", "outcome"),
            ("qt_interval_ms", "qtc_bazett_ms"),
        }

    def test_required_and_forbidden_edges(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 300, seed=2)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"],
            required={("qt_interval_ms", "outcome")},
            forbidden={("qtc_bazett_ms", "outcome")},
        )
        net = learn_structure(data, priors, max_parents=2)
        assert ("qt_interval_ms", "outcome") in net.edges
        assert ("qtc_bazett_ms", "outcome") not in net.edges

    def test_max_parents_zero_keeps_required_only(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 300, seed=2)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"])
        net = learn_structure(data, priors, max_parents=0)
        assert net.edges == set()

    def test_ordering_incomplete(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 50, seed=2)
        with pytest.raises(OrderingIncomplete):
            learn_structure(data, EdgeConstraints(ordering=["outcome"]), 2)

    def test_required_edge_against_ordering(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 50, seed=2)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"],
            required={("outcome", "rr_rmssd_ms")},
        )
        with pytest.raises(ConstraintConflict):
            learn_structure(data, priors, 2)

    def test_acyclic_for_random_data(self):
        rng = np.random.default_rng(5)
        nodes = [NodeSpec(f"v{i}", BINARY) for i in range(5)] + [NodeSpec("y", BINARY)]
        rows = []
        for _ in range(200):
            row = {f"v{i}": int(rng.integers(1, 3)) for i in range(5)}
            row["y"] = "s1" if rng.random() < 0.5 else "s2"
            rows.append(row)
        data = evidence_set(nodes, rows)
        priors = EdgeConstraints(ordering=[f"v{i}" for i in range(5)] + ["y"])
        net = learn_structure(data, priors, max_parents=3)
        assert net.topological_order() is not None

    def test_greedy_matches_exhaustive_parent_scoring(self):
        # confirm the greedy pick per node is the global optimum over all
        # admissible parent subsets within the budget
        from itertools import combinations

        spec = default_spec()
        data = sample_labeled_evidence(spec, 2000, seed=1)
        ordering = ["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"]
        net = learn_structure(data, EdgeConstraints(ordering=ordering), max_parents=2)
        for i, node in enumerate(ordering):
            predecessors = ordering[:i]
            best_set, best_score = None, -float("inf")
            for size in range(0, min(2, len(predecessors)) + 1):
                for subset in combinations(predecessors, size):
                    score = k2_score(data, node, sorted(subset))
                    if score > best_score:
                        best_set, best_score = set(subset), score
            assert set(net.parents_of(node)) == best_set

    def test_greedy_additions_strictly_improve(self):
        spec = default_spec()
        data = sample_labeled_evidence(spec, 2000, seed=1)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"])
        net = learn_structure(data, priors, max_parents=2)
        for node in net.node_names():
            parents = sorted(net.parents_of(node))
            full = k2_score(data, node, parents)
            for drop in parents:
                reduced = [p for p in parents if p != drop]
                assert full > k2_score(data, node, reduced)


class TestFitCpts:
    def chain_net(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        return CausalNetwork(nodes=nodes, edges={("a", "y")})

    def test_laplace_counts(self):
        net = self.chain_net()
        rows = [{"a": 1, "y": "s1"}] * 3 + [{"a": 1, "y": "s2"}]
        data = evidence_set(net.nodes, rows)
        fitted = fit_cpts(net, data, 1.0)
        assert fitted.cpts["y"][0] == pytest.approx([4 / 6, 2 / 6])

    def test_uniform_fallback_for_unseen_config(self):
        nodes = [NodeSpec("a", ("s1", "s2", "s3")), NodeSpec("y", ("s1", "s2", "s3"))]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        data = evidence_set(nodes, [{"a": 1, "y": "s1"}])
        fitted = fit_cpts(net, data, 1.0)
        assert fitted.cpts["y"][2] == pytest.approx([1 / 3, 1 / 3, 1 / 3])

    def test_symmetric_counts_any_pseudocount(self):
        net = self.chain_net()
        rows = [{"a": 1, "y": "s1"}] * 2 + [{"a": 1, "y": "s2"}] * 2
        data = evidence_set(net.nodes, rows)
        for alpha in (1e-9, 1.0, 10.0):
            fitted = fit_cpts(net, data, alpha)
            assert fitted.cpts["y"][0] == pytest.approx([0.5, 0.5])

    def test_rows_are_distributions(self):
        rng = np.random.default_rng(8)
        spec = default_spec()
        data = sample_labeled_evidence(spec, 100, seed=3)
        priors = EdgeConstraints(
            ordering=["rr_rmssd_ms", "qt_interval_ms", "qtc_bazett_ms", "outcome"])
        net = fit_cpts(learn_structure(data, priors, 2), data, 1.0)
        for name, table in net.cpts.items():
            sums = np.asarray(table).sum(axis=-1)
            assert np.allclose(sums, 1.0, atol=1e-12)
            assert np.all(np.asarray(table) >= 0)


class TestInferPosterior:
    def test_deterministic_chain(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        net.cpts = {
            "a": np.array([1.0, 0.0]),
            "y": np.array([[1.0, 0.0], [0.0, 1.0]]),
        }
        post = infer_posterior(net, {}, "y")
        assert post.probs == pytest.approx({"s1": 1.0, "s2": 0.0})

    def test_matches_enumeration_on_random_nets(self):
        rng = np.random.default_rng(17)
        for _ in range(40):
            net, names, cards = random_net(rng)
            ev = {}
            for nm in names[:-1]:
                if rng.random() < 0.5:
                    ev[nm] = int(rng.integers(1, cards[names.index(nm)] + 1))
            query = names[-1]
            a = infer_posterior(net, ev, query)
            b = enumerate_posterior(net, ev, query)
            for s in a.probs:
                assert abs(a.probs[s] - b.probs[s]) <= 1e-9

    def test_evidence_on_all_parents_reads_cpt_row(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("b", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y"), ("b", "y")})
        rng = np.random.default_rng(2)
        ay = rng.random((2, 2, 2)) + 0.1
        net.cpts = {
            "a": np.array([0.6, 0.4]),
            "b": np.array([0.3, 0.7]),
            "y": ay / ay.sum(-1, keepdims=True),
        }
        post = infer_posterior(net, {"a": 2, "b": 1}, "y")
        assert post.probs["s1"] == pytest.approx(net.cpts["y"][1, 0, 0])

    def test_zero_probability_evidence(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        net.cpts = {
            "a": np.array([1.0, 0.0]),
            "y": np.array([[0.5, 0.5], [0.5, 0.5]]),
        }
        with pytest.raises(ZeroProbabilityEvidence):
            infer_posterior(net, {"a": 2}, "y")

    def test_unknown_evidence_ignored_with_warning(self):
        nodes = [NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges=set())
        net.cpts = {"y": np.array([0.25, 0.75])}
        with pytest.warns(UserWarning, match="ghost"):
            post = infer_posterior(net, {"ghost": 1}, "y")
        assert post.probs["s2"] == pytest.approx(0.75)

    def test_evidence_irrelevance_when_d_separated(self):
        # a -> y, b isolated: evidence on b must not move the posterior
        nodes = [NodeSpec("a", BINARY), NodeSpec("b", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        rng = np.random.default_rng(3)
        ycpt = rng.random((2, 2)) + 0.1
        net.cpts = {
            "a": np.array([0.5, 0.5]),
            "b": np.array([0.9, 0.1]),
            "y": ycpt / ycpt.sum(-1, keepdims=True),
        }
        base = infer_posterior(net, {"a": 1}, "y")
        with_b = infer_posterior(net, {"a": 1, "b": 2}, "y")
        for s in base.probs:
            assert abs(base.probs[s] - with_b.probs[s]) <= 1e-9

    def test_json_round_trip(self):
        rng = np.random.default_rng(23)
        net, names, cards = random_net(rng)
        again = CausalNetwork.from_json(net.to_json())
        assert again.edges == net.edges
        for nm in names:
            assert np.allclose(again.cpts[nm], net.cpts[nm])


class TestRankContributions:
    def test_d_separated_factor_scores_zero(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("b", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        rng = np.random.default_rng(4)
        ycpt = rng.random((2, 2)) + 0.1
        net.cpts = {
            "a": np.array([0.5, 0.5]),
            "b": np.array([0.5, 0.5]),
            "y": ycpt / ycpt.sum(-1, keepdims=True),
        }
        ranked = dict(rank_contributions(net, {"a": 1, "b": 2}, "y"))
        assert ranked["b"] == pytest.approx(0.0, abs=1e-12)
        assert ranked["a"] > 0

    def test_single_parent_ranked_first(self):
        nodes = [NodeSpec("a", BINARY), NodeSpec("y", BINARY)]
        net = CausalNetwork(nodes=nodes, edges={("a", "y")})
        net.cpts = {
            "a": np.array([0.5, 0.5]),
            "y": np.array([[0.9, 0.1], [0.1, 0.9]]),
        }
        ranked = rank_contributions(net, {"a": 1}, "y")
        assert ranked[0][0] == "a"
        assert ranked[0][1] > 0

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            net, names, cards = random_net(rng, max_nodes=5)
            ev = {nm: int(rng.integers(1, cards[names.index(nm)] + 1))
                  for nm in names[:-1] if rng.random() < 0.7}
            query = names[-1]
            ranked = rank_contributions(net, ev, query)
            base = enumerate_posterior(net, ev, query)
            for factor, score in ranked:
                reduced = {k: v for k, v in ev.items() if k != factor}
                alt = enumerate_posterior(net, reduced, query)
                tv = 0.5 * sum(abs(base.probs[s] - alt.probs[s]) for s in base.probs)
                assert score == pytest.approx(tv, abs=1e-9)

    def test_sorted_non_increasing(self):
        rng = np.random.default_rng(31)
        net, names, cards = random_net(rng)
        ev = {nm: 1 for nm in names[:-1]}
        ranked = rank_contributions(net, ev, names[-1])
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)
