"""Waveform-to-factor encoding and quantile discretization.

A deterministic clinical feature extractor maps each record to a named
continuous factor vector; a fitted quantile model then bins every factor
into K ordinal levels used as evidence by the causal network. The
extractor is a pluggable stand-in: anything producing the same factor
schema (e.g. the feature-CSV ingestion path) can feed the rest of the
pipeline.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EncodeFailure, InsufficientData, LeadNotFound, NoPeaks, SchemaMismatch
from .signal_io import EcgRecord

FACTOR_SCHEMA = (
    "heart_rate_bpm",
    "rr_rmssd_ms",
    "pr_interval_ms",
    "qrs_duration_ms",
    "qt_interval_ms",
    "qtc_bazett_ms",
    "st_deviation_mv",
    "t_amplitude_mv",
)

DEFAULT_BIN_LABELS = ["Low", "Mid", "High"]


@dataclass
class BiomarkerVector:
    """Continuous factor vector for one record.

    ``quality`` covers every factor in the schema ("ok", "low_confidence"
    or "missing"); ``values`` holds a number for every non-missing factor.
    """

    record_id: str
    values: dict[str, float]
    quality: dict[str, str]

    def __post_init__(self):
        for factor, q in self.quality.items():
            if q == "ok" and not math.isfinite(self.values.get(factor, math.nan)):
                raise SchemaMismatch(f"factor {factor} marked ok but value not finite")

    @property
    def schema(self) -> tuple[str, ...]:
        return tuple(self.quality)

    def ok_value(self, factor: str) -> float | None:
        return self.values.get(factor) if self.quality.get(factor) == "ok" else None


@dataclass
class DiscretizerModel:
    """Per-factor quantile cut points mapping values to bins 1..K.

    Degenerate factors (cut points not strictly increasing, i.e. near
    constant data) collapse to a single bin and are dropped from evidence.
    """

    num_bins: int
    cut_points: dict[str, list[float]]
    bin_labels: list[str]
    degenerate: set[str] = field(default_factory=set)

    @property
    def factors(self) -> tuple[str, ...]:
        return tuple(self.cut_points)

    def to_json(self) -> dict:
        return {
            "num_bins": self.num_bins,
            "cut_points": {f: list(c) for f, c in self.cut_points.items()},
            "bin_labels": list(self.bin_labels),
            "degenerate": sorted(self.degenerate),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscretizerModel":
        return cls(
            num_bins=obj["num_bins"],
            cut_points={f: list(c) for f, c in obj["cut_points"].items()},
            bin_labels=list(obj["bin_labels"]),
            degenerate=set(obj.get("degenerate", [])),
        )


@dataclass
class DiscreteEvidence:
    """Binned factors for one record; missing/degenerate factors are absent."""

    record_id: str
    bins: dict[str, int]
    labels: dict[str, str]


@dataclass
class BiomarkerDelta:
    """Elementwise factor change between two records (current - baseline)."""

    baseline_record_id: str
    current_record_id: str
    deltas: dict[str, float]
    surrogate: bool = False


def _trailing_max(values: np.ndarray, window: int) -> np.ndarray:
    """Sliding trailing maximum; early samples use the first full window
    (the record invariant guarantees at least one full window exists)."""
    out = np.empty_like(values)
    dq: deque[int] = deque()
    for i, v in enumerate(values):
        while dq and values[dq[-1]] <= v:
            dq.pop()
        dq.append(i)
        if dq[0] <= i - window:
            dq.popleft()
        out[i] = values[dq[0]]
    head = min(window, len(values))
    out[:head] = values[:head].max()
    return out


def detect_r_peaks(rec: EcgRecord, lead: str) -> list[int]:
    """Locate R peaks on one lead.

    Pipeline: 5-point derivative, squaring, 150 ms moving average,
    adaptive threshold at half the trailing 2 s maximum of the integrated
    signal, then local-maximum selection on the raw lead within +/-50 ms
    of each upward threshold crossing. A 200 ms refractory period keeps
    consecutive peaks apart.
    """
    if lead not in rec.lead_names:
        raise LeadNotFound(f"lead {lead!r} not in {rec.lead_names}")
    x = rec.samples[rec.lead_names.index(lead)]
    fs = rec.sampling_rate_hz

    padded = np.pad(x, (4, 0), mode="edge")
    deriv = (2 * padded[4:] + padded[3:-1] - padded[1:-3] - 2 * padded[:-4]) / 8.0
    squared = deriv * deriv
    ma_window = max(1, int(round(0.150 * fs)))
    integrated = np.convolve(squared, np.ones(ma_window) / ma_window)[: len(squared)]

    threshold = 0.5 * _trailing_max(integrated, int(round(2.0 * fs)))
    above = integrated > threshold
    rising = np.flatnonzero(above & ~np.concatenate(([False], above[:-1])))

    half_span = int(round(0.050 * fs))
    refractory = int(round(0.200 * fs))
    peaks: list[int] = []
    for n in rising:
        lo = max(1, n - half_span)
        hi = min(len(x) - 1, n + half_span + 1)
        # strict local maxima only: a monotone stretch (e.g. a rising T wave
        # entering the window) must not produce a window-edge pseudo-peak
        apex, apex_val = None, -np.inf
        for i in range(lo, hi):
            if x[i] > x[i - 1] and x[i] > x[i + 1] and x[i] > apex_val:
                apex, apex_val = i, x[i]
        if apex is None:
            continue
        if peaks and apex - peaks[-1] < refractory:
            continue
        peaks.append(apex)
    if len(peaks) < 2:
        raise NoPeaks(f"found {len(peaks)} peak(s) on lead {lead!r}")
    return peaks


def _all_missing_vector(record_id: str) -> BiomarkerVector:
    return BiomarkerVector(record_id, {}, {f: "missing" for f in FACTOR_SCHEMA})


def _onset_by_fraction(x, baseline, ref_idx, amplitude, lo_idx, threshold=0.10):
    """Last sample before ref_idx (searching back to lo_idx) where the
    excursion from baseline is below ``threshold`` of ``amplitude``."""
    for i in range(ref_idx - 1, max(lo_idx, 0) - 1, -1):
        if abs(x[i] - baseline) < threshold * abs(amplitude):
            return i
    return None


def _beat_fiducials(x, fs, r):
    """Measure one beat's fiducials around R index ``r``.

    Returns a dict of per-beat measurements; keys are absent when the
    corresponding landmark was not found.
    """
    ms = fs / 1000.0  # samples per millisecond
    out = {}
    pre_lo, pre_hi = r - int(90 * ms), r - int(60 * ms)
    if pre_lo < 0:
        return out
    baseline = float(np.mean(x[pre_lo:pre_hi]))
    r_amp = x[r] - baseline
    if r_amp == 0:
        return out

    qrs_on = _onset_by_fraction(x, baseline, r, r_amp, r - int(80 * ms))
    if qrs_on is None:
        return out
    qrs_off = None
    for i in range(r + 1, min(r + int(100 * ms) + 1, len(x))):
        if abs(x[i] - baseline) < 0.10 * abs(r_amp):
            qrs_off = i
            break
    if qrs_off is None:
        return out
    out["qrs_duration_ms"] = (qrs_off - qrs_on) / ms

    # PR-segment baseline: mean over 40 ms ending 20 ms before QRS onset.
    pr_lo, pr_hi = qrs_on - int(60 * ms), qrs_on - int(20 * ms)
    if pr_lo < 0:
        return out
    pr_baseline = float(np.mean(x[pr_lo:pr_hi]))

    st_idx = qrs_off + int(60 * ms)
    if st_idx < len(x):
        out["st_deviation_mv"] = float(x[st_idx] - pr_baseline)

    t_lo, t_hi = qrs_off + int(80 * ms), min(qrs_off + int(400 * ms), len(x))
    if t_lo < t_hi:
        t_peak = t_lo + int(np.argmax(np.abs(x[t_lo:t_hi] - baseline)))
        t_amp = x[t_peak] - baseline
        if t_amp != 0:
            out["t_amplitude_mv"] = float(t_amp)
            t_end = None
            for i in range(t_peak + 1, min(qrs_off + int(500 * ms), len(x))):
                if abs(x[i] - baseline) <= 0.05 * abs(t_amp):
                    t_end = i
                    break
            if t_end is not None:
                out["qt_interval_ms"] = (t_end - qrs_on) / ms

    p_lo, p_hi = r - int(300 * ms), r - int(80 * ms)
    if p_lo >= 0:
        p_peak = p_lo + int(np.argmax(x[p_lo:p_hi] - baseline))
        p_amp = x[p_peak] - baseline
        if p_amp > 0.02:  # below 20 uV the P search is noise
            p_on = _onset_by_fraction(x, baseline, p_peak, p_amp, p_peak - int(80 * ms))
            if p_on is not None:
                out["pr_interval_ms"] = (qrs_on - p_on) / ms
    return out


def extract_biomarkers(rec: EcgRecord, lead: str | None = None) -> BiomarkerVector:
    """Encode a record into the 8-factor schema.

    Measures on lead II when present (else the first lead). Rhythm factors
    come from the R-peak train; interval and amplitude factors are medians
    of per-beat fiducial measurements. Unmeasurable factors are flagged,
    never fabricated.
    """
    if lead is None:
        lead = "II" if "II" in rec.lead_names else rec.lead_names[0]
    try:
        peaks = detect_r_peaks(rec, lead)
    except NoPeaks as exc:
        raise EncodeFailure(
            f"record {rec.record_id}: {exc}", vector=_all_missing_vector(rec.record_id)
        ) from exc

    fs = rec.sampling_rate_hz
    x = rec.samples[rec.lead_names.index(lead)]
    values: dict[str, float] = {}
    quality = {f: "missing" for f in FACTOR_SCHEMA}

    rr_ms = np.diff(peaks) * 1000.0 / fs
    mean_rr_ms = float(np.mean(rr_ms))
    values["heart_rate_bpm"] = 60000.0 / mean_rr_ms
    quality["heart_rate_bpm"] = "ok" if len(rr_ms) >= 3 else "low_confidence"

    if len(rr_ms) >= 2:
        diffs = np.diff(rr_ms)
        values["rr_rmssd_ms"] = float(np.sqrt(np.mean(diffs * diffs)))
        quality["rr_rmssd_ms"] = "ok" if len(diffs) >= 3 else "low_confidence"

    # Per-beat fiducials need a 300 ms lead-in and ~600 ms tail.
    pre = int(0.300 * fs) + 1
    post = int(0.620 * fs) + 1
    per_beat: dict[str, list[float]] = {}
    for r in peaks:
        if r < pre or r + post >= rec.num_samples:
            continue
        for key, val in _beat_fiducials(x, fs, r).items():
            per_beat.setdefault(key, []).append(val)

    for key in ("pr_interval_ms", "qrs_duration_ms", "qt_interval_ms",
                "st_deviation_mv", "t_amplitude_mv"):
        beats = per_beat.get(key, [])
        if beats:
            values[key] = float(np.median(beats))
            quality[key] = "ok" if len(beats) >= 3 else "low_confidence"

    if "qt_interval_ms" in values:
        values["qtc_bazett_ms"] = values["qt_interval_ms"] / math.sqrt(mean_rr_ms / 1000.0)
        # qtc inherits the worse of its two ingredients' qualities
        quality["qtc_bazett_ms"] = max(
            quality["qt_interval_ms"], quality["heart_rate_bpm"],
            key=["ok", "low_confidence", "missing"].index,
        )

    return BiomarkerVector(rec.record_id, values, quality)


def fit_discretizer(
    vectors: list[BiomarkerVector],
    num_bins: int = 3,
    bin_labels: list[str] | None = None,
) -> DiscretizerModel:
    """Fit per-factor quantile cut points at j/K (j = 1..K-1) over the
    ``ok`` values, by linear interpolation on the sorted sample.

    Raises InsufficientData when a factor has fewer than K usable values;
    factors whose cut points are not strictly increasing are marked
    degenerate (single bin) and later excluded from the causal graph.
    """
    if num_bins < 2:
        raise InsufficientData(f"num_bins must be >= 2, got {num_bins}")
    if not vectors:
        raise InsufficientData("no vectors to fit on")
    if bin_labels is None:
        bin_labels = (
            list(DEFAULT_BIN_LABELS)
            if num_bins == 3
            else [f"Q{i}" for i in range(1, num_bins + 1)]
        )
    if len(bin_labels) != num_bins:
        raise SchemaMismatch(f"{len(bin_labels)} labels for {num_bins} bins")

    schema = vectors[0].schema
    for v in vectors[1:]:
        if v.schema != schema:
            raise SchemaMismatch(
                f"vector {v.record_id} schema differs from {vectors[0].record_id}"
            )

    cut_points: dict[str, list[float]] = {}
    degenerate: set[str] = set()
    quantiles = [j / num_bins for j in range(1, num_bins)]
    for factor in schema:
        vals = [v.values[factor] for v in vectors if v.quality.get(factor) == "ok"]
        if len(vals) < num_bins:
            raise InsufficientData(
                f"factor {factor}: {len(vals)} usable values, need >= {num_bins}"
            )
        cuts = [float(c) for c in np.quantile(np.sort(vals), quantiles)]
        if all(a < b for a, b in zip(cuts, cuts[1:])):
            cut_points[factor] = cuts
        else:
            warnings.warn(
                f"factor {factor} is degenerate (constant or near-constant); "
                "collapsing to a single bin",
                stacklevel=2,
            )
            cut_points[factor] = []
            degenerate.add(factor)
    return DiscretizerModel(num_bins, cut_points, bin_labels, degenerate)


def assign_bin(model: DiscretizerModel, factor: str, value: float) -> int:
    """Bin index 1..K: one plus the count of cut points strictly below the
    value, so boundary ties fall in the lower bin."""
    cuts = model.cut_points[factor]
    return 1 + sum(1 for c in cuts if c < value)


def discretize(model: DiscretizerModel, vector: BiomarkerVector) -> DiscreteEvidence:
    """Bin every non-missing, non-degenerate factor of a vector."""
    if set(vector.schema) != set(model.factors):
        raise SchemaMismatch(
            f"vector schema {sorted(vector.schema)} != model {sorted(model.factors)}"
        )
    bins: dict[str, int] = {}
    labels: dict[str, str] = {}
    for factor in model.factors:
        if vector.quality.get(factor) == "missing" or factor in model.degenerate:
            continue
        b = assign_bin(model, factor, vector.values[factor])
        bins[factor] = b
        labels[factor] = model.bin_labels[b - 1]
    return DiscreteEvidence(vector.record_id, bins, labels)


def delta(baseline: BiomarkerVector, current: BiomarkerVector) -> BiomarkerDelta:
    """current - baseline over factors that are ``ok`` on both sides."""
    if set(baseline.schema) != set(current.schema):
        raise SchemaMismatch("delta requires matching factor schemas")
    deltas = {
        f: current.values[f] - baseline.values[f]
        for f in baseline.schema
        if baseline.quality.get(f) == "ok" and current.quality.get(f) == "ok"
    }
    return BiomarkerDelta(baseline.record_id, current.record_id, deltas)
