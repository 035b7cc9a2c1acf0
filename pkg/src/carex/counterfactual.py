"""Minimal evidence edits that flip the diagnosis to a target state.

The search enumerates candidate bin replacements in order of increasing
edit size (single edits first, then pairs when allowed), keeps the
smallest successful size, and among equal-size successes returns the one
with the highest target posterior. Everything is a pure function of the
fitted network and the observed evidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .biomarker import DiscreteEvidence
from .causal import CausalNetwork, Posterior, infer_posterior
from .errors import UnknownNode, UnknownState, UsageError, ZeroProbabilityEvidence

MAX_EDIT_CAP = 2  # multi-variable interventions beyond pairs are out of scope


@dataclass
class EvidenceEdit:
    """Replacement bins for a subset of observed factors."""

    edits: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.edits)


@dataclass
class CounterfactualResult:
    target: str
    edit: EvidenceEdit | None
    posterior_after: Posterior
    achieved: bool
    candidates_examined: int

    def to_json(self, net: CausalNetwork, evidence: DiscreteEvidence) -> dict:
        edits = []
        if self.edit is not None:
            for factor in sorted(self.edit.edits):
                to_bin = self.edit.edits[factor]
                from_bin = evidence.bins.get(factor)
                states = net.node(factor).states
                edits.append({
                    "factor": factor,
                    "from_bin": from_bin,
                    "to_bin": to_bin,
                    "from_label": states[from_bin - 1] if from_bin else None,
                    "to_label": states[to_bin - 1],
                })
        return {
            "target": self.target,
            "edits": edits,
            "achieved": self.achieved,
            "posterior_after": dict(self.posterior_after.probs),
            "candidates_examined": self.candidates_examined,
        }


def _editable_factors(net: CausalNetwork, evidence: DiscreteEvidence, outcome: str):
    names = set(net.node_names())
    return sorted(f for f in evidence.bins if f in names and f != outcome)


def _alternative_bins(net: CausalNetwork, factor: str, observed: int):
    card = net.node(factor).cardinality
    return [b for b in range(1, card + 1) if b != observed]


def find_counterfactual(
    net: CausalNetwork,
    evidence: DiscreteEvidence,
    target: str,
    max_edits: int = 1,
    outcome: str | None = None,
) -> CounterfactualResult:
    """Smallest evidence edit whose posterior argmax equals ``target``.

    Candidates are enumerated in lexicographic (factor, bin) order;
    candidates that make the evidence impossible are skipped but counted.
    When the observed evidence already yields the target, the result is
    achieved with no edit.
    """
    if outcome is None:
        outcome = net.node_names()[-1]
    if outcome not in net.node_names():
        raise UnknownNode(f"outcome node {outcome!r} not in network")
    if target not in net.node(outcome).states:
        raise UnknownState(
            f"target {target!r} not a state of {outcome!r} "
            f"(states: {list(net.node(outcome).states)})"
        )
    if not 1 <= max_edits <= MAX_EDIT_CAP:
        raise UsageError(f"max_edits must be in [1, {MAX_EDIT_CAP}], got {max_edits}")

    baseline = infer_posterior(net, evidence, outcome)
    if baseline.argmax() == target:
        return CounterfactualResult(target, None, baseline, True, 0)

    factors = _editable_factors(net, evidence, outcome)
    examined = 0
    best: tuple[float, EvidenceEdit, Posterior] | None = None

    def try_candidate(edits: dict[str, int]):
        nonlocal examined, best
        examined += 1
        merged = dict(evidence.bins)
        merged.update(edits)
        try:
            post = infer_posterior(net, merged, outcome)
        except ZeroProbabilityEvidence:
            return
        if post.argmax() == target:
            score = post.probs[target]
            if best is None or score > best[0]:
                best = (score, EvidenceEdit(dict(edits)), post)

    for size in range(1, max_edits + 1):
        if size == 1:
            for factor in factors:
                for b in _alternative_bins(net, factor, evidence.bins[factor]):
                    try_candidate({factor: b})
        else:
            for f1, f2 in combinations(factors, 2):
                for b1 in _alternative_bins(net, f1, evidence.bins[f1]):
                    for b2 in _alternative_bins(net, f2, evidence.bins[f2]):
                        try_candidate({f1: b1, f2: b2})
        if best is not None:
            _, edit, post = best
            return CounterfactualResult(target, edit, post, True, examined)

    return CounterfactualResult(target, None, baseline, False, examined)


def whatif(net: CausalNetwork, evidence: DiscreteEvidence, overrides: dict[str, int],
           outcome: str | None = None) -> Posterior:
    """Posterior under evidence with the given bins replaced (or added).

    Pure: neither the evidence nor the network is modified.
    """
    if outcome is None:
        outcome = net.node_names()[-1]
    names = set(net.node_names())
    for factor, b in overrides.items():
        if factor not in names:
            raise UnknownNode(f"override factor {factor!r} not in network")
        card = net.node(factor).cardinality
        if not 1 <= b <= card:
            raise UnknownState(f"bin {b} out of range for {factor} (cardinality {card})")
    merged = dict(evidence.bins)
    merged.update(overrides)
    return infer_posterior(net, merged, outcome)
