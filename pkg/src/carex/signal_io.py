"""ECG record ingestion and persistence.

Supported inputs: plain CSV (one column per lead, millivolts), WFDB
format-16 header/signal pairs, and precomputed feature CSVs. Records are
persisted one directory per record: a little-endian float64 sample file
(lead-major) plus a JSON metadata sidecar, with a single JSON index at
the store root so round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadRate,
    DuplicateRecordId,
    HeaderMismatch,
    InvalidRecord,
    IoError,
    MalformedCsv,
    NotFound,
    TooShort,
    UnsupportedFormat,
)

MIN_RATE_HZ = 50.0
MAX_RATE_HZ = 2000.0


@dataclass
class EcgRecord:
    """Multi-lead waveform with sampling metadata and patient linkage.

    ``samples`` is a C x T float64 matrix in millivolts with one row per
    entry in ``lead_names``. At least two seconds of signal are required.
    """

    record_id: str
    sampling_rate_hz: float
    lead_names: list[str]
    samples: np.ndarray
    patient_id: str | None = None
    acquired_at: float | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not (MIN_RATE_HZ <= self.sampling_rate_hz <= MAX_RATE_HZ):
            raise BadRate(
                f"sampling_rate_hz {self.sampling_rate_hz} outside "
                f"[{MIN_RATE_HZ}, {MAX_RATE_HZ}]"
            )
        if self.samples.ndim != 2:
            raise InvalidRecord("samples must be a 2-D lead-by-time matrix")
        n_leads, n_samples = self.samples.shape
        if n_leads < 1 or n_leads != len(self.lead_names):
            raise InvalidRecord(
                f"{len(self.lead_names)} lead names for {n_leads} sample rows"
            )
        if len(set(self.lead_names)) != len(self.lead_names):
            raise InvalidRecord("lead names must be unique")
        if n_samples < 2 * self.sampling_rate_hz:
            raise TooShort(
                f"{n_samples} samples is less than 2 s at "
                f"{self.sampling_rate_hz} Hz"
            )
        if not np.all(np.isfinite(self.samples)):
            raise InvalidRecord("samples contain non-finite values")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sampling_rate_hz


def _is_numeric_row(cells: list[str]) -> bool:
    for cell in cells:
        try:
            float(cell)
        except ValueError:
            return False
    return True


def read_csv_record(
    path,
    sampling_rate_hz: float,
    lead_names: list[str],
    record_id: str | None = None,
    patient_id: str | None = None,
    acquired_at: float | None = None,
    scale: float = 1.0,
) -> EcgRecord:
    """Parse a one-column-per-lead CSV of millivolt samples.

    A non-numeric first row is treated as a header and skipped. ``scale``
    is a multiplicative factor applied at ingest for sources that are not
    already in millivolts.
    """
    path = Path(path)
    rows: list[list[float]] = []
    expected = len(lead_names)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for line_no, cells in enumerate(reader, start=1):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if line_no == 1 and not _is_numeric_row(cells):
                if len(cells) != expected:
                    raise MalformedCsv(
                        f"row 1: header has {len(cells)} columns, expected {expected}"
                    )
                continue
            if len(cells) != expected:
                raise MalformedCsv(
                    f"row {line_no}: expected {expected} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise MalformedCsv(f"row {line_no}: non-numeric cell") from None
    samples = np.asarray(rows, dtype=np.float64).T * scale
    if samples.size == 0:
        raise MalformedCsv(f"{path}: no data rows")
    return EcgRecord(
        record_id=record_id or path.stem,
        sampling_rate_hz=sampling_rate_hz,
        lead_names=list(lead_names),
        samples=samples,
        patient_id=patient_id,
        acquired_at=acquired_at,
    )


_GAIN_RE = re.compile(
    r"^(?P<gain>[-+]?[0-9.]+(?:[eE][-+]?[0-9]+)?)"
    r"(?:\((?P<baseline>[-+]?[0-9]+)\))?"
    r"(?:/(?P<units>\S+))?$"
)


def read_wfdb16_record(header_path, record_id: str | None = None) -> EcgRecord:
    """Load a WFDB record stored in format 16 (little-endian int16).

    Header line 1: ``record_name num_signals sampling_frequency num_samples``;
    one line per signal: ``file_name format gain(baseline)/units ...`` with
    trailing fields ignored except a description used as the lead name.
    Samples convert to millivolts as (raw - baseline) / gain.
    """
    header_path = Path(header_path)
    try:
        lines = [
            ln.strip()
            for ln in header_path.read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
    except OSError as exc:
        raise IoError(f"cannot read header {header_path}: {exc}") from exc
    if not lines:
        raise HeaderMismatch(f"{header_path}: empty header")
    head = lines[0].split()
    if len(head) < 4:
        raise HeaderMismatch(f"{header_path}: header line needs 4 fields, got {len(head)}")
    record_name = head[0].split("/")[0]
    try:
        num_signals = int(head[1])
        fs = float(head[2])
        num_samples = int(head[3])
    except ValueError as exc:
        raise HeaderMismatch(f"{header_path}: bad header line: {exc}") from exc
    if len(lines) < 1 + num_signals:
        raise HeaderMismatch(
            f"{header_path}: {num_signals} signal lines declared, "
            f"{len(lines) - 1} present"
        )

    gains, baselines, lead_names, file_names = [], [], [], []
    for i in range(num_signals):
        fields = lines[1 + i].split()
        if len(fields) < 3:
            raise HeaderMismatch(f"signal line {i + 1}: needs file, format, gain")
        file_names.append(fields[0])
        if fields[1] != "16":
            raise UnsupportedFormat(
                f"signal line {i + 1}: storage format {fields[1]} (only 16 supported)"
            )
        m = _GAIN_RE.match(fields[2])
        if not m:
            raise HeaderMismatch(f"signal line {i + 1}: cannot parse gain spec {fields[2]!r}")
        gain = float(m.group("gain"))
        if gain == 0:
            raise HeaderMismatch(f"signal line {i + 1}: zero gain")
        gains.append(gain)
        baselines.append(float(m.group("baseline") or 0))
        lead_names.append(" ".join(fields[8:]) if len(fields) > 8 else f"ch{i + 1}")

    if len(set(file_names)) != 1:
        raise HeaderMismatch("multi-file signal records are not supported")
    signal_path = header_path.parent / file_names[0]
    try:
        raw = signal_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read signal file {signal_path}: {exc}") from exc
    expected_bytes = 2 * num_samples * num_signals
    if len(raw) != expected_bytes:
        raise HeaderMismatch(
            f"{signal_path}: {len(raw)} bytes, header declares {expected_bytes}"
        )
    flat = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    interleaved = flat.reshape(num_samples, num_signals).T
    gains_col = np.asarray(gains)[:, None]
    baselines_col = np.asarray(baselines)[:, None]
    samples = (interleaved - baselines_col) / gains_col
    return EcgRecord(
        record_id=record_id or record_name,
        sampling_rate_hz=fs,
        lead_names=lead_names,
        samples=samples,
    )


def read_feature_csv(path):
    """Parse a precomputed feature table: header names factors, first column
    is the record id, empty cells mark missing values.

    Returns a list of (record_id, BiomarkerVector) preserving file order.
    """
    from .biomarker import BiomarkerVector

    path = Path(path)
    out = []
    seen = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: empty file") from None
        if len(header) < 2:
            raise MalformedCsv(f"{path}: need a record_id column plus factors")
        factors = [h.strip() for h in header[1:]]
        for line_no, cells in enumerate(reader, start=2):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if len(cells) != len(header):
                raise MalformedCsv(
                    f"row {line_no}: expected {len(header)} columns, got {len(cells)}"
                )
            record_id = cells[0].strip()
            if record_id in seen:
                raise DuplicateRecordId(f"row {line_no}: duplicate record_id {record_id!r}")
            seen.add(record_id)
            values: dict[str, float] = {}
            quality: dict[str, str] = {}
            for factor, cell in zip(factors, cells[1:]):
                cell = cell.strip()
                if cell == "":
                    quality[factor] = "missing"
                    continue
                try:
                    values[factor] = float(cell)
                except ValueError:
                    raise MalformedCsv(
                        f"row {line_no}: non-numeric cell for {factor}"
                    ) from None
                quality[factor] = "ok"
            out.append((record_id, BiomarkerVector(record_id, values, quality)))
    return out


_INDEX_NAME = "index.json"
_SAMPLES_NAME = "samples.bin"
_META_NAME = "meta.json"


@dataclass
class RecordStore:
    """Directory-backed record store.

    Reads are thread-safe; concurrent writers must be serialized by the
    caller (single-writer contract).
    """

    root_path: Path
    index: dict = field(default_factory=dict)

    def __init__(self, root_path, create: bool = True):
        self.root_path = Path(root_path)
        if create:
            try:
                (self.root_path / "records").mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise IoError(f"cannot create store at {self.root_path}: {exc}") from exc
        elif not self.root_path.is_dir():
            raise IoError(f"store directory {self.root_path} does not exist")
        index_path = self.root_path / _INDEX_NAME
        if index_path.exists():
            try:
                self.index = json.loads(index_path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise IoError(f"cannot read store index: {exc}") from exc
        else:
            self.index = {}

    def _write_index(self):
        index_path = self.root_path / _INDEX_NAME
        tmp = index_path.with_suffix(".json.tmp")
        try:
            tmp.write_text(json.dumps(self.index, sort_keys=True, indent=1))
            tmp.replace(index_path)
        except OSError as exc:
            raise IoError(f"cannot write store index: {exc}") from exc

    def store_record(self, rec: EcgRecord) -> str:
        rec_dir = self.root_path / "records" / rec.record_id
        meta = {
            "record_id": rec.record_id,
            "patient_id": rec.patient_id,
            "acquired_at": rec.acquired_at,
            "sampling_rate_hz": rec.sampling_rate_hz,
            "lead_names": rec.lead_names,
            "num_samples": rec.num_samples,
        }
        try:
            rec_dir.mkdir(parents=True, exist_ok=True)
            (rec_dir / _SAMPLES_NAME).write_bytes(
                np.ascontiguousarray(rec.samples, dtype="<f8").tobytes()
            )
            (rec_dir / _META_NAME).write_text(json.dumps(meta, sort_keys=True, indent=1))
        except OSError as exc:
            raise IoError(f"cannot write record {rec.record_id}: {exc}") from exc
        self.index[rec.record_id] = dict(meta, dir=f"records/{rec.record_id}")
        self._write_index()
        return rec.record_id

    def load_record(self, record_id: str) -> EcgRecord:
        entry = self.index.get(record_id)
        if entry is None:
            raise NotFound(f"record {record_id!r} not in store")
        rec_dir = self.root_path / entry["dir"]
        try:
            meta = json.loads((rec_dir / _META_NAME).read_text())
            raw = (rec_dir / _SAMPLES_NAME).read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read record {record_id}: {exc}") from exc
        n_leads = len(meta["lead_names"])
        n_samples = meta["num_samples"]
        if len(raw) != 8 * n_leads * n_samples:
            raise IoError(
                f"record {record_id}: sample file has {len(raw)} bytes, "
                f"metadata declares {8 * n_leads * n_samples}"
            )
        samples = np.frombuffer(raw, dtype="<f8").reshape(n_leads, n_samples)
        return EcgRecord(
            record_id=meta["record_id"],
            sampling_rate_hz=meta["sampling_rate_hz"],
            lead_names=meta["lead_names"],
            samples=samples.copy(),
            patient_id=meta.get("patient_id"),
            acquired_at=meta.get("acquired_at"),
        )

    def list_records(self) -> list[str]:
        return sorted(self.index)

    def list_patient_history(self, patient_id: str) -> list[str]:
        """Record ids for a patient, ascending by acquisition time.

        Records without a timestamp are excluded; ties sort by record id
        so the order is total and stable under re-indexing.
        """
        dated = [
            (entry["acquired_at"], rid)
            for rid, entry in self.index.items()
            if entry.get("patient_id") == patient_id
            and entry.get("acquired_at") is not None
        ]
        return [rid for _, rid in sorted(dated)]
