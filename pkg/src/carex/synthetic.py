"""Seed-controlled synthetic ECG generator with a known causal model.

Cases are sampled ancestrally from a declared ground-truth network over
discretized factors, continuous factor values are drawn uniformly inside
each bin's range, and a template-beat waveform (raised-cosine P and T,
triangular QRS, flat ST offset) realizes heart rate, QRS width, QT, ST
deviation and T amplitude on a sample grid. Fiducials are exactly known,
so the encoder can be scored against ground truth.

Geometry notes baked into the default ranges:
- The T wave's 5%-of-peak decay lands exactly at QRS onset + QT, so the
  interval measurement rule is unbiased on this template.
- The heart rate is derived from the QT/QTc draw (RR = (QT/QTc)^2), which
  keeps Bazett's correction exactly consistent; its ground-truth bin is
  read off the declared heart-rate ranges.
- Range gaps keep quantile cut points away from bin boundaries, and RR is
  bounded below so a beat's P-wave search window never overlaps the
  previous T wave.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biomarker import DEFAULT_BIN_LABELS, FACTOR_SCHEMA, BiomarkerVector, DiscreteEvidence
from .causal import CausalNetwork, LabeledEvidenceSet, NodeSpec
from .errors import IoError, SpecInvalid
from .signal_io import EcgRecord, RecordStore

# T-wave support fraction at which the raised cosine decays to 5% of peak.
_T_RELEASE = 1.0 - math.acos(0.9) / (2.0 * math.pi)

OUTCOME_NODE = "outcome"
DERIVED_FACTOR = "heart_rate_bpm"


@dataclass
class BeatTemplate:
    sampling_rate_hz: float = 500.0
    num_beats: int = 17  # odd count -> even number of RR intervals
    first_r_s: float = 0.36
    tail_s: float = 0.75
    p_width_s: float = 0.080
    p_amplitude_mv: float = 0.15
    r_amplitude_mv: float = 1.0
    t_width_s: float = 0.140
    lead_names: tuple[str, ...] = ("I", "II")
    secondary_lead_scale: float = 0.55


@dataclass
class SyntheticSpec:
    """Ground-truth causal model plus per-bin physiological value ranges."""

    network: CausalNetwork
    bin_ranges: dict[str, list[tuple[float, float]]]
    free_priors: dict[str, list[float]]
    bin_labels: list[str] = field(default_factory=lambda: list(DEFAULT_BIN_LABELS))
    template: BeatTemplate = field(default_factory=BeatTemplate)

    def __post_init__(self):
        self.validate()

    @property
    def num_bins(self) -> int:
        return len(self.bin_labels)

    @property
    def outcome_states(self) -> tuple[str, ...]:
        return self.network.node(OUTCOME_NODE).states

    def net_factors(self) -> list[str]:
        return [n.name for n in self.network.nodes if n.name != OUTCOME_NODE]

    def free_factors(self) -> list[str]:
        in_net = set(self.net_factors())
        return [
            f for f in FACTOR_SCHEMA
            if f not in in_net and f != DERIVED_FACTOR
        ]

    def validate(self):
        k = self.num_bins
        names = set(self.network.node_names())
        if OUTCOME_NODE not in names:
            raise SpecInvalid(f"network must contain the {OUTCOME_NODE!r} node")
        if DERIVED_FACTOR in names:
            raise SpecInvalid(f"{DERIVED_FACTOR} is derived from QT/QTc and cannot be a network node")
        for factor in FACTOR_SCHEMA:
            if factor not in self.bin_ranges:
                raise SpecInvalid(f"missing bin ranges for {factor}")
            ranges = self.bin_ranges[factor]
            if len(ranges) != k:
                raise SpecInvalid(f"{factor}: {len(ranges)} ranges for {k} bins")
            for lo, hi in ranges:
                if not lo <= hi:
                    raise SpecInvalid(f"{factor}: range ({lo}, {hi}) not ordered")
            for (_, hi), (lo2, _) in zip(ranges, ranges[1:]):
                if lo2 < hi:
                    raise SpecInvalid(f"{factor}: overlapping bin ranges")
        for f in self.free_factors():
            prior = self.free_priors.get(f)
            if prior is None or len(prior) != k:
                raise SpecInvalid(f"free factor {f} needs a {k}-bin prior")
            if abs(sum(prior) - 1.0) > 1e-9:
                raise SpecInvalid(f"free factor {f}: prior does not sum to 1")
        for node in self.network.nodes:
            table = self.network.cpts.get(node.name)
            if table is None:
                raise SpecInvalid(f"network node {node.name} has no CPT")
            sums = np.asarray(table).sum(axis=-1)
            if not np.allclose(sums, 1.0, atol=1e-9):
                raise SpecInvalid(f"CPT rows for {node.name} do not sum to 1")

    def to_json(self) -> dict:
        return {
            "network": self.network.to_json(),
            "bin_ranges": {f: [list(r) for r in rs] for f, rs in self.bin_ranges.items()},
            "free_priors": self.free_priors,
            "bin_labels": self.bin_labels,
            "template": {
                "sampling_rate_hz": self.template.sampling_rate_hz,
                "num_beats": self.template.num_beats,
                "first_r_s": self.template.first_r_s,
                "tail_s": self.template.tail_s,
                "p_width_s": self.template.p_width_s,
                "p_amplitude_mv": self.template.p_amplitude_mv,
                "r_amplitude_mv": self.template.r_amplitude_mv,
                "t_width_s": self.template.t_width_s,
                "lead_names": list(self.template.lead_names),
                "secondary_lead_scale": self.template.secondary_lead_scale,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        tpl = obj.get("template", {})
        if "lead_names" in tpl:
            tpl = dict(tpl, lead_names=tuple(tpl["lead_names"]))
        return cls(
            network=CausalNetwork.from_json(obj["network"]),
            bin_ranges={
                f: [tuple(r) for r in rs] for f, rs in obj["bin_ranges"].items()
            },
            free_priors={f: list(p) for f, p in obj["free_priors"].items()},
            bin_labels=list(obj.get("bin_labels", DEFAULT_BIN_LABELS)),
            template=BeatTemplate(**tpl),
        )


def default_spec() -> SyntheticSpec:
    """Three-bin chain: rr_rmssd -> outcome and qtc -> outcome with a
    qt -> qtc fork; the remaining factors are independent roots."""
    labels = tuple(DEFAULT_BIN_LABELS)
    nodes = [
        NodeSpec("rr_rmssd_ms", labels),
        NodeSpec("qt_interval_ms", labels),
        NodeSpec("qtc_bazett_ms", labels),
        NodeSpec(OUTCOME_NODE, ("Normal", "MI")),
    ]
    edges = {
        ("rr_rmssd_ms", OUTCOME_NODE),
        ("qtc_bazett_ms", OUTCOME_NODE),
        ("qt_interval_ms", "qtc_bazett_ms"),
    }
    qtc_given_qt = np.array([
        [1.00, 0.00, 0.00],
        [0.10, 0.90, 0.00],
        [0.00, 0.10, 0.90],
    ])
    # P(MI | rmssd bin, qtc bin): risk rises with either driver.
    p_mi = np.array([
        [0.03, 0.06, 0.94],
        [0.06, 0.94, 0.97],
        [0.94, 0.97, 0.99],
    ])
    outcome_cpt = np.stack([1.0 - p_mi, p_mi], axis=-1)
    cpts = {
        "rr_rmssd_ms": np.array([0.34, 0.33, 0.33]),
        "qt_interval_ms": np.array([0.34, 0.33, 0.33]),
        "qtc_bazett_ms": qtc_given_qt,
        OUTCOME_NODE: outcome_cpt,
    }
    network = CausalNetwork(nodes=nodes, edges=edges, cpts=cpts)
    bin_ranges = {
        # heart rate is derived from the QT/QTc draw; these contiguous
        # ranges sit at the induced distribution's empirical tertiles so
        # quantile-fitted cut points agree with the ground-truth bins
        "heart_rate_bpm": [(36.0, 64.48), (64.48, 68.20), (68.20, 86.0)],
        "rr_rmssd_ms": [(5.0, 25.0), (40.0, 65.0), (90.0, 120.0)],
        "pr_interval_ms": [(140.0, 160.0), (168.0, 188.0), (196.0, 216.0)],
        "qrs_duration_ms": [(70.0, 78.0), (86.0, 94.0), (102.0, 110.0)],
        "qt_interval_ms": [(320.0, 340.0), (360.0, 380.0), (400.0, 420.0)],
        "qtc_bazett_ms": [(335.0, 365.0), (375.0, 405.0), (415.0, 445.0)],
        "st_deviation_mv": [(-0.15, -0.06), (-0.02, 0.02), (0.06, 0.15)],
        "t_amplitude_mv": [(0.16, 0.22), (0.26, 0.33), (0.38, 0.45)],
    }
    free_priors = {
        "pr_interval_ms": [0.34, 0.33, 0.33],
        "qrs_duration_ms": [0.34, 0.33, 0.33],
        "st_deviation_mv": [0.34, 0.33, 0.33],
        "t_amplitude_mv": [0.34, 0.33, 0.33],
    }
    return SyntheticSpec(network=network, bin_ranges=bin_ranges, free_priors=free_priors)


def _ancestral_sample(net: CausalNetwork, rng) -> dict[str, int]:
    """One joint sample (state indices) in topological order."""
    sample: dict[str, int] = {}
    order = net.topological_order()
    for name in order:
        parents = net.parents_of(name)
        row = net.cpts[name][tuple(sample[p] for p in parents)]
        sample[name] = int(rng.choice(len(row), p=row))
    return sample


def sample_labeled_evidence(spec: SyntheticSpec, n: int, seed: int) -> LabeledEvidenceSet:
    """Bin-level dataset drawn from the ground-truth network (no waveforms);
    the cheap oracle input for structure learning and CPT fitting tests."""
    rng = np.random.default_rng(seed)
    net = spec.network
    rows = []
    for i in range(n):
        joint = _ancestral_sample(net, rng)
        bins = {v: idx + 1 for v, idx in joint.items() if v != OUTCOME_NODE}
        labels = {v: spec.bin_labels[b - 1] for v, b in bins.items()}
        outcome_state = net.node(OUTCOME_NODE).states[joint[OUTCOME_NODE]]
        rows.append((DiscreteEvidence(f"ev{i:05d}", bins, labels), outcome_state))
    return LabeledEvidenceSet(nodes=list(net.nodes), outcome=OUTCOME_NODE, rows=rows)


def enumerate_bin_marginals(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Exact node marginals by full enumeration of the ground-truth joint."""
    net = spec.network
    names = net.node_names()
    cards = [net.node(n).cardinality for n in names]
    marginals = {n: np.zeros(c) for n, c in zip(names, cards)}
    for world in np.ndindex(*cards):
        assignment = dict(zip(names, world))
        p = 1.0
        for node in net.nodes:
            idx = tuple(assignment[par] for par in net.parents_of(node.name))
            p *= net.cpts[node.name][idx + (assignment[node.name],)]
        for n in names:
            marginals[n][assignment[n]] += p
    return marginals


def _bin_of(value: float, ranges: list[tuple[float, float]]) -> int:
    for i, (lo, hi) in enumerate(ranges, start=1):
        if lo <= value <= hi:
            return i
    # value between gaps: nearest range wins (only possible for derived HR)
    dists = [
        min(abs(value - lo), abs(value - hi)) for lo, hi in ranges
    ]
    return 1 + int(np.argmin(dists))


def _synthesize_lead(template: BeatTemplate, r_times, qt_s, qrs_s, pr_s, st_mv, t_amp_mv):
    fs = template.sampling_rate_hz
    total = int(round((r_times[-1] + template.tail_s) * fs))
    t = np.arange(total) / fs
    x = np.zeros(total)
    half_qrs = qrs_s / 2.0
    for r_t in r_times:
        qrs_on = r_t - half_qrs
        qrs_off = r_t + half_qrs
        # triangular QRS
        m = (t >= qrs_on) & (t <= qrs_off)
        x[m] += template.r_amplitude_mv * (1.0 - np.abs(t[m] - r_t) / half_qrs)
        # raised-cosine P
        p_on = qrs_on - pr_s
        m = (t >= p_on) & (t <= p_on + template.p_width_s)
        x[m] += 0.5 * template.p_amplitude_mv * (
            1.0 - np.cos(2.0 * np.pi * (t[m] - p_on) / template.p_width_s)
        )
        # raised-cosine T placed so its 5% decay lands at qrs_on + qt
        t_on = qrs_on + qt_s - _T_RELEASE * template.t_width_s
        m = (t >= t_on) & (t <= t_on + template.t_width_s)
        x[m] += 0.5 * t_amp_mv * (
            1.0 - np.cos(2.0 * np.pi * (t[m] - t_on) / template.t_width_s)
        )
        # flat ST offset between QRS offset and T onset
        m = (t > qrs_off) & (t < t_on)
        x[m] += st_mv
    return x


def sample_case(
    spec: SyntheticSpec,
    seed: int,
    record_id: str | None = None,
    patient_id: str | None = None,
    acquired_at: float | None = None,
):
    """One synthetic case: (EcgRecord, ground-truth DiscreteEvidence,
    ground-truth outcome state, ground-truth BiomarkerVector).

    Deterministic per (spec, seed). Draw order is fixed: network bins
    ancestrally, free-factor bins, then continuous values in schema order.
    """
    rng = np.random.default_rng(seed)
    net = spec.network

    joint = _ancestral_sample(net, rng)
    bins = {v: idx + 1 for v, idx in joint.items() if v != OUTCOME_NODE}
    outcome_state = net.node(OUTCOME_NODE).states[joint[OUTCOME_NODE]]
    for factor in spec.free_factors():
        bins[factor] = int(rng.choice(spec.num_bins, p=spec.free_priors[factor])) + 1

    values: dict[str, float] = {}
    for factor in FACTOR_SCHEMA:
        if factor == DERIVED_FACTOR:
            continue
        lo, hi = spec.bin_ranges[factor][bins[factor] - 1]
        values[factor] = float(rng.uniform(lo, hi))

    # Heart rate realizes Bazett exactly: RR = (QT / QTc)^2 seconds.
    rr_base_s = (values["qt_interval_ms"] / values["qtc_bazett_ms"]) ** 2
    values[DERIVED_FACTOR] = 60.0 / rr_base_s
    bins[DERIVED_FACTOR] = _bin_of(values[DERIVED_FACTOR], spec.bin_ranges[DERIVED_FACTOR])

    # R times: alternating +/- d/2 jitter realizes the programmed RMSSD.
    tpl = spec.template
    fs = tpl.sampling_rate_hz
    d_s = values["rr_rmssd_ms"] / 1000.0
    rr = rr_base_s + np.array(
        [(+0.5 if k % 2 == 0 else -0.5) * d_s for k in range(tpl.num_beats - 1)]
    )
    r_times = tpl.first_r_s + np.concatenate(([0.0], np.cumsum(rr)))
    r_times = np.round(r_times * fs) / fs  # snap apices to the sample grid

    x = _synthesize_lead(
        tpl,
        r_times,
        qt_s=values["qt_interval_ms"] / 1000.0,
        qrs_s=values["qrs_duration_ms"] / 1000.0,
        pr_s=values["pr_interval_ms"] / 1000.0,
        st_mv=values["st_deviation_mv"],
        t_amp_mv=values["t_amplitude_mv"],
    )
    leads = []
    for lead in tpl.lead_names:
        leads.append(x if lead == "II" else tpl.secondary_lead_scale * x)
    rid = record_id or f"syn{seed:012d}"
    record = EcgRecord(
        record_id=rid,
        sampling_rate_hz=fs,
        lead_names=list(tpl.lead_names),
        samples=np.vstack(leads),
        patient_id=patient_id,
        acquired_at=acquired_at,
    )
    labels = {f: spec.bin_labels[b - 1] for f, b in bins.items()}
    evidence = DiscreteEvidence(rid, bins, labels)
    vector = BiomarkerVector(rid, values, {f: "ok" for f in FACTOR_SCHEMA})
    return record, evidence, outcome_state, vector


DEFAULT_QUERY = "What is the most likely assessment and which factors drive it"


def generate_dataset(
    spec: SyntheticSpec,
    n: int,
    seed: int,
    store_dir,
    manifest_path,
) -> list[dict]:
    """Write ``n`` cases to a record store plus a JSON Lines manifest of
    {record_id, patient_id, query, gold_outcome, gold_bins, gold_values}."""
    rng = np.random.default_rng(seed)
    case_seeds = rng.integers(0, 2**63 - 1, size=n)
    store = RecordStore(store_dir)
    rows = []
    for i in range(n):
        rid = f"case{i:04d}"
        record, evidence, outcome_state, vector = sample_case(
            spec,
            int(case_seeds[i]),
            record_id=rid,
            patient_id=f"p{i:04d}",
            acquired_at=1_700_000_000.0 + 3600.0 * i,
        )
        store.store_record(record)
        rows.append({
            "record_id": rid,
            "patient_id": record.patient_id,
            "query": DEFAULT_QUERY,
            "gold_outcome": outcome_state,
            "gold_bins": dict(sorted(evidence.bins.items())),
            "gold_values": {f: vector.values[f] for f in sorted(vector.values)},
        })
    try:
        with Path(manifest_path).open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest {manifest_path}: {exc}") from exc
    return rows


def load_manifest(path) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    return [json.loads(line) for line in lines if line.strip()]
