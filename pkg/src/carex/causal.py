"""Discrete Bayesian network over biomarker factors and the outcome label.

Structure search is greedy K2 under a fixed node ordering with the
Cooper-Herskovits marginal-likelihood score; conditional probability
tables use Dirichlet (Laplace) smoothing; inference is exact variable
elimination with a min-degree ordering. All tie-breaks are lexicographic
so every operation is deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from math import lgamma

import numpy as np

from .biomarker import DiscreteEvidence
from .errors import (
    ConstraintConflict,
    OrderingIncomplete,
    SchemaMismatch,
    UnknownNode,
    UnknownState,
    ZeroProbabilityEvidence,
)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    states: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.states)


@dataclass
class EdgeConstraints:
    """Clinical priors for structure search: required and forbidden edges
    plus the K2 node ordering (parents must precede children)."""

    ordering: list[str]
    required: set[tuple[str, str]] = field(default_factory=set)
    forbidden: set[tuple[str, str]] = field(default_factory=set)


@dataclass
class Posterior:
    variable: str
    probs: dict[str, float]

    def argmax(self) -> str:
        """Most probable state; ties break by state declaration order."""
        best_state, best_p = None, -1.0
        for state, p in self.probs.items():
            if p > best_p:
                best_state, best_p = state, p
        return best_state

    def runner_up(self) -> str | None:
        top = self.argmax()
        best_state, best_p = None, -1.0
        for state, p in self.probs.items():
            if state != top and p > best_p:
                best_state, best_p = state, p
        return best_state


FactorContribution = list[tuple[str, float]]
"""Ranked (factor, contribution score) pairs, non-increasing by score."""


@dataclass
class CausalNetwork:
    """DAG over factor nodes and the outcome node, with one CPT per node.

    ``cpts[name]`` has one axis per parent (in network node order) plus a
    final axis over the node's own states; each row along that final axis
    sums to one.
    """

    nodes: list[NodeSpec]
    edges: set[tuple[str, str]]
    cpts: dict[str, np.ndarray] = field(default_factory=dict)
    priors: EdgeConstraints | None = None

    def __post_init__(self):
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate node names")
        index = {n: i for i, n in enumerate(names)}
        for u, v in self.edges:
            if u not in index or v not in index:
                raise UnknownNode(f"edge ({u}, {v}) references unknown node")
        if self.topological_order() is None:
            raise ConstraintConflict("edge set contains a cycle")

    def topological_order(self):
        names = [n.name for n in self.nodes]
        indeg = {n: 0 for n in names}
        for _, v in self.edges:
            indeg[v] += 1
        frontier = sorted(n for n in names if indeg[n] == 0)
        order = []
        while frontier:
            n = frontier.pop(0)
            order.append(n)
            changed = False
            for u, v in self.edges:
                if u == n:
                    indeg[v] -= 1
                    if indeg[v] == 0:
                        frontier.append(v)
                        changed = True
            if changed:
                frontier.sort()
        return order if len(order) == len(names) else None

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise UnknownNode(f"node {name!r} not in network")

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def parents_of(self, name: str) -> tuple[str, ...]:
        order = {n.name: i for i, n in enumerate(self.nodes)}
        return tuple(sorted((u for u, v in self.edges if v == name), key=order.get))

    def to_json(self) -> dict:
        obj = {
            "nodes": [{"name": n.name, "states": list(n.states)} for n in self.nodes],
            "edges": sorted(list(e) for e in self.edges),
            "cpts": {
                name: {"parents": list(self.parents_of(name)), "table": t.tolist()}
                for name, t in self.cpts.items()
            },
        }
        if self.priors is not None:
            obj["priors"] = {
                "ordering": list(self.priors.ordering),
                "required": sorted(list(e) for e in self.priors.required),
                "forbidden": sorted(list(e) for e in self.priors.forbidden),
            }
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CausalNetwork":
        nodes = [NodeSpec(n["name"], tuple(n["states"])) for n in obj["nodes"]]
        edges = {tuple(e) for e in obj["edges"]}
        cpts = {name: np.asarray(entry["table"], dtype=np.float64)
                for name, entry in obj.get("cpts", {}).items()}
        priors = None
        if "priors" in obj:
            priors = EdgeConstraints(
                ordering=list(obj["priors"]["ordering"]),
                required={tuple(e) for e in obj["priors"]["required"]},
                forbidden={tuple(e) for e in obj["priors"]["forbidden"]},
            )
        return cls(nodes=nodes, edges=edges, cpts=cpts, priors=priors)


@dataclass
class LabeledEvidenceSet:
    """Training rows: discrete evidence plus the observed outcome state."""

    nodes: list[NodeSpec]
    outcome: str
    rows: list[tuple[DiscreteEvidence, str]]
    _coded: list[dict[str, int]] | None = field(default=None, repr=False)

    def spec(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise UnknownNode(f"node {name!r} not in evidence schema")

    def coded_rows(self) -> list[dict[str, int]]:
        """Rows as {node: state index}; variables missing in a row are absent."""
        if self._coded is None:
            specs = {n.name: n for n in self.nodes}
            coded = []
            for evidence, outcome_state in self.rows:
                row: dict[str, int] = {}
                for factor, b in evidence.bins.items():
                    spec = specs.get(factor)
                    if spec is None:
                        continue
                    if not 1 <= b <= spec.cardinality:
                        raise UnknownState(
                            f"bin {b} out of range for {factor} "
                            f"(cardinality {spec.cardinality})"
                        )
                    row[factor] = b - 1
                out_spec = specs[self.outcome]
                if outcome_state not in out_spec.states:
                    raise UnknownState(f"outcome state {outcome_state!r} unknown")
                row[self.outcome] = out_spec.states.index(outcome_state)
                coded.append(row)
            self._coded = coded
        return self._coded


def k2_score(data: LabeledEvidenceSet, node: str, parents) -> float:
    """Cooper-Herskovits log marginal likelihood of ``node`` given a parent
    set: sum over observed parent configurations j of
    lnG(r) - lnG(N_j + r) + sum_k lnG(N_jk + 1). Rows missing any involved
    variable are skipped.
    """
    parents = tuple(parents)
    r = data.spec(node).cardinality
    for p in parents:
        data.spec(p)
    counts: dict[tuple[int, ...], np.ndarray] = {}
    for row in data.coded_rows():
        if node not in row or any(p not in row for p in parents):
            continue
        config = tuple(row[p] for p in parents)
        bucket = counts.get(config)
        if bucket is None:
            bucket = counts[config] = np.zeros(r)
        bucket[row[node]] += 1
    score = 0.0
    lg_r = lgamma(r)
    for bucket in counts.values():
        n_j = bucket.sum()
        score += lg_r - lgamma(n_j + r)
        score += sum(lgamma(n_jk + 1) for n_jk in bucket)
    return score


def learn_structure(
    data: LabeledEvidenceSet,
    priors: EdgeConstraints,
    max_parents: int = 3,
) -> CausalNetwork:
    """Greedy K2: per node in the declared ordering, start from required
    parents and repeatedly add the admissible predecessor that most
    improves the score; stop when nothing improves or the parent budget is
    reached. Ties break on the lexicographically smallest node name.
    """
    names = [n.name for n in data.nodes]
    missing = [n for n in names if n not in priors.ordering]
    if missing:
        raise OrderingIncomplete(f"ordering missing nodes: {missing}")
    unknown = [n for n in priors.ordering if n not in names]
    if unknown:
        raise UnknownNode(f"ordering names unknown nodes: {unknown}")
    position = {n: i for i, n in enumerate(priors.ordering)}
    for u, v in priors.required:
        if u not in position or v not in position:
            raise UnknownNode(f"required edge ({u}, {v}) references unknown node")
        if position[u] >= position[v]:
            raise ConstraintConflict(f"required edge ({u}, {v}) violates the ordering")
        if (u, v) in priors.forbidden:
            raise ConstraintConflict(f"edge ({u}, {v}) both required and forbidden")

    edges: set[tuple[str, str]] = set()
    for v in priors.ordering:
        predecessors = [u for u in priors.ordering if position[u] < position[v]]
        parents = {u for u, w in priors.required if w == v}
        candidates = [
            u for u in predecessors
            if u not in parents and (u, v) not in priors.forbidden
        ]
        current = k2_score(data, v, sorted(parents))
        while len(parents) < max_parents and candidates:
            best_u, best_score = None, current
            for u in sorted(candidates):
                s = k2_score(data, v, sorted(parents | {u}))
                if s > best_score:
                    best_u, best_score = u, s
            if best_u is None:
                break
            parents.add(best_u)
            candidates.remove(best_u)
            current = best_score
        edges.update((u, v) for u in parents)

    ordered_nodes = [data.spec(n) for n in priors.ordering]
    return CausalNetwork(nodes=ordered_nodes, edges=edges, priors=priors)


def fit_cpts(
    net: CausalNetwork,
    data: LabeledEvidenceSet,
    pseudocount: float = 1.0,
) -> CausalNetwork:
    """Bayesian CPT estimation: P(node=k | config) = (N_jk + a) / (N_j + a*r).

    Unobserved parent configurations fall back to the uniform distribution.
    Returns a new network; the input is unchanged.
    """
    if pseudocount <= 0:
        raise SchemaMismatch(f"pseudocount must be > 0, got {pseudocount}")
    data_specs = {n.name: n for n in data.nodes}
    for node in net.nodes:
        got = data_specs.get(node.name)
        if got is None or got.cardinality != node.cardinality:
            raise SchemaMismatch(f"data schema disagrees with network at {node.name!r}")

    cards = {n.name: n.cardinality for n in net.nodes}
    cpts: dict[str, np.ndarray] = {}
    for node in net.nodes:
        parents = net.parents_of(node.name)
        shape = tuple(cards[p] for p in parents) + (node.cardinality,)
        counts = np.zeros(shape)
        for row in data.coded_rows():
            if node.name not in row or any(p not in row for p in parents):
                continue
            idx = tuple(row[p] for p in parents) + (row[node.name],)
            counts[idx] += 1
        totals = counts.sum(axis=-1, keepdims=True)
        cpts[node.name] = (counts + pseudocount) / (
            totals + pseudocount * node.cardinality
        )
    return replace(net, cpts=cpts)


def _evidence_indices(net: CausalNetwork, evidence) -> dict[str, int]:
    """Normalize evidence (DiscreteEvidence bins or {name: bin}) to
    {node: state index}, warning about variables the network lacks."""
    bins = evidence.bins if isinstance(evidence, DiscreteEvidence) else dict(evidence)
    names = set(net.node_names())
    out: dict[str, int] = {}
    for var, b in bins.items():
        if var not in names:
            warnings.warn(f"evidence variable {var!r} not in network; ignored",
                          stacklevel=3)
            continue
        card = net.node(var).cardinality
        if not 1 <= b <= card:
            raise UnknownState(f"bin {b} out of range for {var} (cardinality {card})")
        out[var] = b - 1
    return out


class _Factor:
    __slots__ = ("vars", "table")

    def __init__(self, vars_, table):
        self.vars = tuple(vars_)
        self.table = np.asarray(table, dtype=np.float64)


def _restrict(factor: _Factor, assignment: dict[str, int]) -> _Factor:
    vars_, table = list(factor.vars), factor.table
    for var, idx in assignment.items():
        if var in vars_:
            axis = vars_.index(var)
            table = np.take(table, idx, axis=axis)
            vars_.pop(axis)
    return _Factor(vars_, table)


def _multiply(factors: list[_Factor], var_order: dict[str, int]) -> _Factor:
    all_vars = sorted({v for f in factors for v in f.vars}, key=var_order.get)
    axes = {v: i for i, v in enumerate(all_vars)}
    result = None
    for f in factors:
        expanded = f.table
        # permute this factor's axes into global order, then broadcast
        perm = sorted(range(len(f.vars)), key=lambda i: axes[f.vars[i]])
        expanded = np.transpose(expanded, perm) if f.vars else expanded
        shape = [1] * len(all_vars)
        for i in perm:
            shape[axes[f.vars[i]]] = f.table.shape[i]
        expanded = expanded.reshape(shape)
        result = expanded if result is None else result * expanded
    if result is None:
        result = np.float64(1.0)
    return _Factor(all_vars, result)


def _min_degree_order(factors: list[_Factor], to_eliminate: set[str]) -> list[str]:
    """Min-degree elimination order on the moralized evidence-reduced
    graph; ties break lexicographically."""
    adjacency: dict[str, set[str]] = {}
    for f in factors:
        for v in f.vars:
            adjacency.setdefault(v, set()).update(u for u in f.vars if u != v)
    remaining = set(to_eliminate)
    order = []
    while remaining:
        pick = min(
            remaining,
            key=lambda v: (len(adjacency.get(v, set()) & adjacency.keys()), v),
        )
        order.append(pick)
        neighbors = adjacency.pop(pick, set())
        for u in list(neighbors):
            if u in adjacency:
                adjacency[u].discard(pick)
                adjacency[u].update(w for w in neighbors if w != u and w in adjacency)
        remaining.discard(pick)
    return order


def infer_posterior(net: CausalNetwork, evidence, query: str) -> Posterior:
    """Exact posterior P(query | evidence) by variable elimination.

    Evidence naming variables absent from the network is ignored with a
    warning; evidence of probability zero raises ZeroProbabilityEvidence.
    """
    if query not in net.node_names():
        raise UnknownNode(f"query node {query!r} not in network")
    if not net.cpts:
        raise SchemaMismatch("network has no fitted CPTs")
    assignment = _evidence_indices(net, evidence)
    var_order = {name: i for i, name in enumerate(net.node_names())}

    factors = []
    for node in net.nodes:
        vars_ = list(net.parents_of(node.name)) + [node.name]
        factors.append(_restrict(_Factor(vars_, net.cpts[node.name]), assignment))

    if query in assignment:
        # degenerate query: evidence pins it
        probs = {s: 0.0 for s in net.node(query).states}
        probs[net.node(query).states[assignment[query]]] = 1.0
        return Posterior(query, probs)

    to_eliminate = {
        v for f in factors for v in f.vars if v != query
    }
    for var in _min_degree_order(factors, to_eliminate):
        involved = [f for f in factors if var in f.vars]
        if not involved:
            continue
        product = _multiply(involved, var_order)
        summed = product.table.sum(axis=product.vars.index(var))
        remaining_vars = tuple(v for v in product.vars if v != var)
        factors = [f for f in factors if var not in f.vars]
        factors.append(_Factor(remaining_vars, summed))

    final = _multiply(factors, var_order)
    table = final.table
    if final.vars == ():
        raise ZeroProbabilityEvidence("all query states eliminated")
    vec = np.asarray(table, dtype=np.float64).reshape(-1)
    total = vec.sum()
    if total <= 0.0:
        raise ZeroProbabilityEvidence(
            f"evidence has probability zero under the model (query {query!r})"
        )
    states = net.node(query).states
    return Posterior(query, {s: float(p) for s, p in zip(states, vec / total)})


def rank_contributions(net: CausalNetwork, evidence, query: str) -> FactorContribution:
    """Leave-one-out total variation contribution of each evidence factor:
    0.5 * sum_s |P(y=s | e) - P(y=s | e without factor)|, ranked descending
    with name tie-break. Only evidence on network nodes is scored."""
    bins = evidence.bins if isinstance(evidence, DiscreteEvidence) else dict(evidence)
    names = set(net.node_names())
    usable = {k: v for k, v in bins.items() if k in names and k != query}
    base = infer_posterior(net, usable, query)
    scores: list[tuple[str, float]] = []
    for factor in usable:
        reduced = {k: v for k, v in usable.items() if k != factor}
        alt = infer_posterior(net, reduced, query)
        tv = 0.5 * sum(abs(base.probs[s] - alt.probs[s]) for s in base.probs)
        scores.append((factor, float(tv)))
    scores.sort(key=lambda kv: (-kv[1], kv[0]))
    return scores


def enumerate_posterior(net: CausalNetwork, evidence, query: str) -> Posterior:
    """Brute-force posterior by full joint enumeration (oracle for tests)."""
    if query not in net.node_names():
        raise UnknownNode(f"query node {query!r} not in network")
    assignment = _evidence_indices(net, evidence)
    names = net.node_names()
    cards = [net.node(n).cardinality for n in names]
    q_idx = names.index(query)
    acc = np.zeros(cards[q_idx])
    for flat in np.ndindex(*cards):
        world = dict(zip(names, flat))
        if any(world[v] != idx for v, idx in assignment.items()):
            continue
        p = 1.0
        for node in net.nodes:
            idx = tuple(world[par] for par in net.parents_of(node.name))
            p *= net.cpts[node.name][idx + (world[node.name],)]
        acc[world[query]] += p
    total = acc.sum()
    if total <= 0.0:
        raise ZeroProbabilityEvidence("evidence has probability zero under the model")
    states = net.node(query).states
    return Posterior(query, {s: float(p) for s, p in zip(states, acc / total)})
