"""ECG record parsing (WFDB-like int16 and CSV), resampling, normalisation and manifests.

WFDB-like header::

    <record_id> <num_leads> <sampling_rate> <samples_per_lead>
    <filename> 16 <gain> <baseline>        # one line per lead

Signal file: int16 little-endian, frames interleaved (lead 0..L-1 of sample 0,
then sample 1, ...). Physical value in mV is ``(raw - baseline) / gain``.

CSV record::

    <record_id>,<sampling_rate>
    <lead0>,<lead1>,...                    # one line per sample
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DatasetLoadError,
    ManifestError,
    ParseError,
    TruncatedSignalError,
    UnsupportedFormatError,
)

logger = logging.getLogger(__name__)

FORMAT_TOKENS = {"16": "int16le"}
SPLITS = ("train", "test_superclass", "test_form", "test_rhythm")


@dataclass(frozen=True)
class RecordHeader:
    record_id: str
    num_leads: int
    sampling_rate: float
    samples_per_lead: int
    gains: tuple
    baselines: tuple
    storage_format: str = "int16le"
    filenames: tuple = ()

    def __post_init__(self):
        if self.num_leads < 1:
            raise ValueError("num_leads must be >= 1")
        if not self.sampling_rate > 0:
            raise ValueError("sampling_rate must be > 0")
        if self.samples_per_lead < 1:
            raise ValueError("samples_per_lead must be > 0")
        if len(self.gains) != self.num_leads or len(self.baselines) != self.num_leads:
            raise ValueError("need one gain and one baseline per lead")
        if any(g == 0 for g in self.gains):
            raise ValueError("gain must be nonzero for every lead")
        if self.storage_format not in ("int16le", "csv"):
            raise ValueError(f"unknown storage format {self.storage_format!r}")


@dataclass(frozen=True, eq=False)
class EcgRecord:
    header: RecordHeader
    signal: np.ndarray  # [num_leads, samples_per_lead], mV

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        expected = (self.header.num_leads, self.header.samples_per_lead)
        if sig.shape != expected:
            raise ValueError(f"signal shape {sig.shape} does not match header {expected}")
        if not np.all(np.isfinite(sig)):
            raise ValueError(f"record {self.header.record_id}: non-finite samples")
        object.__setattr__(self, "signal", sig)

    @property
    def record_id(self):
        return self.header.record_id

    @property
    def sampling_rate(self):
        return self.header.sampling_rate


def _fmt_number(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _parse_number(tok, line_no, what):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line=line_no) from None
    if not math.isfinite(val):
        raise ParseError(f"non-finite {what} {tok!r}", line=line_no)
    return val


def _parse_int(tok, line_no, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"bad {what} {tok!r}", line=line_no) from None


# ---------------------------------------------------------------------------
# WFDB-like header / signal
# ---------------------------------------------------------------------------

def parse_header(data):
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else str(data)
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not lines:
        raise ParseError("empty header", line=1)

    line_no, first = lines[0]
    parts = first.split()
    if len(parts) != 4:
        raise ParseError(f"expected 'record_id num_leads sampling_rate samples_per_lead', got {first!r}",
                         line=line_no)
    record_id = parts[0]
    num_leads = _parse_int(parts[1], line_no, "lead count")
    rate = _parse_number(parts[2], line_no, "sampling rate")
    samples = _parse_int(parts[3], line_no, "sample count")
    if num_leads < 1:
        raise ParseError(f"lead count must be >= 1, got {num_leads}", line=line_no)
    if rate <= 0:
        raise ParseError(f"sampling rate must be > 0, got {rate}", line=line_no)
    if samples < 1:
        raise ParseError(f"sample count must be > 0, got {samples}", line=line_no)
    if len(lines) - 1 != num_leads:
        raise ParseError(f"header declares {num_leads} leads but has {len(lines) - 1} lead lines",
                         line=lines[-1][0])

    filenames, gains, baselines, fmt = [], [], [], None
    for line_no, ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise ParseError(f"expected 'filename format gain baseline', got {ln!r}", line=line_no)
        name, token, gain_tok, base_tok = parts
        if token not in FORMAT_TOKENS:
            raise UnsupportedFormatError(f"unsupported storage format {token!r}", line=line_no)
        lead_fmt = FORMAT_TOKENS[token]
        if fmt is not None and lead_fmt != fmt:
            raise UnsupportedFormatError("mixed storage formats across leads", line=line_no)
        fmt = lead_fmt
        gain = _parse_number(gain_tok, line_no, "gain")
        if gain == 0:
            raise ParseError("gain must be nonzero", line=line_no)
        filenames.append(name)
        gains.append(gain)
        baselines.append(_parse_int(base_tok, line_no, "baseline"))

    return RecordHeader(record_id, num_leads, rate, samples, tuple(gains), tuple(baselines),
                        fmt, tuple(filenames))


def serialize_header(header):
    """Canonical header text (numbers in shortest round-trip form)."""
    lines = [f"{header.record_id} {header.num_leads} {_fmt_number(header.sampling_rate)} "
             f"{header.samples_per_lead}"]
    names = header.filenames or (f"{header.record_id}.dat",) * header.num_leads
    for name, gain, base in zip(names, header.gains, header.baselines):
        lines.append(f"{name} 16 {_fmt_number(gain)} {int(base)}")
    return "\n".join(lines) + "\n"


def parse_signal(header, data):
    expected = 2 * header.num_leads * header.samples_per_lead
    if len(data) != expected:
        raise TruncatedSignalError(
            f"record {header.record_id}: expected {expected} bytes, got {len(data)}",
            offset=min(len(data), expected))
    raw = np.frombuffer(data, dtype="<i2").reshape(header.samples_per_lead, header.num_leads).T
    gains = np.asarray(header.gains, dtype=np.float64)[:, None]
    base = np.asarray(header.baselines, dtype=np.float64)[:, None]
    return EcgRecord(header, (raw.astype(np.float64) - base) / gains)


def serialize_signal(header, signal_mv):
    """Quantise ``signal_mv`` to int16 with the header's gains; error <= 1/(2*gain)."""
    sig = np.asarray(signal_mv, dtype=np.float64)
    gains = np.asarray(header.gains, dtype=np.float64)[:, None]
    base = np.asarray(header.baselines, dtype=np.float64)[:, None]
    raw = np.rint(sig * gains + base)
    if raw.min(initial=0) < -32768 or raw.max(initial=0) > 32767:
        raise ValueError("signal exceeds int16 range at this gain")
    return raw.astype("<i2").T.tobytes()


def write_wfdb(directory, record_id, signal_mv, sampling_rate, gain=200.0, baseline=0):
    """Write ``<record_id>.hea`` and ``<record_id>.dat``; returns the header path."""
    directory = Path(directory)
    sig = np.atleast_2d(np.asarray(signal_mv, dtype=np.float64))
    n_leads, n_samples = sig.shape
    header = RecordHeader(record_id, n_leads, float(sampling_rate), n_samples,
                          (float(gain),) * n_leads, (int(baseline),) * n_leads,
                          "int16le", (f"{record_id}.dat",) * n_leads)
    (directory / f"{record_id}.dat").write_bytes(serialize_signal(header, sig))
    hea = directory / f"{record_id}.hea"
    hea.write_text(serialize_header(header), encoding="utf-8")
    return hea


def read_wfdb(header_path):
    header_path = Path(header_path)
    header = parse_header(header_path.read_bytes())
    dat = header_path.parent / (header.filenames[0] if header.filenames else f"{header.record_id}.dat")
    if not dat.exists():
        raise DatasetLoadError(f"signal file not found: {dat}")
    return parse_signal(header, dat.read_bytes())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def parse_csv_record(text):
    lines = [ln.strip() for ln in str(text).splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise ParseError("empty CSV record", line=1)
    head = lines[0].split(",")
    if len(head) != 2:
        raise ParseError(f"expected 'record_id,sampling_rate', got {lines[0]!r}", line=1)
    record_id = head[0].strip()
    rate = _parse_number(head[1].strip(), 1, "sampling rate")
    if rate <= 0:
        raise ParseError("sampling rate must be > 0", line=1)
    rows, width = [], None
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"ragged row: {len(cells)} columns, expected {width}", line=i)
        rows.append([_parse_number(c.strip(), i, "sample") for c in cells])
    if not rows:
        raise ParseError("CSV record has no samples", line=1)
    sig = np.asarray(rows, dtype=np.float64).T
    header = RecordHeader(record_id, sig.shape[0], rate, sig.shape[1],
                          (1.0,) * sig.shape[0], (0,) * sig.shape[0], "csv")
    return EcgRecord(header, sig)


def serialize_csv_record(record):
    lines = [f"{record.record_id},{_fmt_number(record.sampling_rate)}"]
    lines.extend(",".join(repr(float(v)) for v in frame) for frame in record.signal.T)
    return "\n".join(lines) + "\n"


def read_record(path):
    """Load a ``.hea`` (WFDB-like) or ``.csv`` record from disk."""
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"record not found: {path}")
    if path.suffix == ".csv":
        return parse_csv_record(path.read_text(encoding="utf-8"))
    if path.suffix == ".hea":
        return read_wfdb(path)
    raise UnsupportedFormatError(f"unknown record extension {path.suffix!r} for {path}")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _with_signal(record, signal, rate=None):
    sig = np.asarray(signal, dtype=np.float64)
    h = record.header
    changes = {"samples_per_lead": sig.shape[1]}
    if rate is not None:
        changes["sampling_rate"] = float(rate)
    if sig.shape[0] != h.num_leads:
        # derived records are in mV already; quantisation metadata no longer applies
        changes.update(num_leads=sig.shape[0], gains=(1.0,) * sig.shape[0],
                       baselines=(0,) * sig.shape[0], filenames=())
    return EcgRecord(replace(h, **changes), sig)


def resample(record, target_hz):
    """Linear interpolation onto a uniform grid at ``target_hz``."""
    if not target_hz > 0:
        raise ValueError("target_hz must be > 0")
    src_hz = record.sampling_rate
    if target_hz == src_hz:
        return record
    n_in = record.header.samples_per_lead
    n_out = max(1, int(math.floor(n_in * target_hz / src_hz + 0.5)))
    t_in = np.arange(n_in) / src_hz
    t_out = np.arange(n_out) / target_hz
    out = np.stack([np.interp(t_out, t_in, lead) for lead in record.signal])
    return _with_signal(record, out, rate=target_hz)


def zscore_normalize(record, eps=1e-8):
    """Per-lead zero mean and unit (population) std; flat leads become zeros."""
    sig = record.signal
    mu = sig.mean(axis=1, keepdims=True)
    sd = sig.std(axis=1, keepdims=True)
    flat = sd[:, 0] < eps
    out = np.where(flat[:, None], 0.0, (sig - mu) / np.where(flat[:, None], 1.0, sd))
    return _with_signal(record, out)


def fix_length(record, n_samples):
    """Crop to the first ``n_samples`` or right-pad with zeros."""
    sig = record.signal
    if sig.shape[1] >= n_samples:
        out = sig[:, :n_samples]
    else:
        out = np.pad(sig, ((0, 0), (0, n_samples - sig.shape[1])))
    return _with_signal(record, out)


def match_leads(record, in_leads, strategy="replicate"):
    """Bring a record to ``in_leads`` channels.

    ``replicate`` tiles the available leads cyclically (2-lead Holter records
    fed to a 12-lead model); surplus leads are dropped.
    """
    n = record.header.num_leads
    if n == in_leads:
        return record
    if strategy != "replicate":
        raise ValueError(f"unknown lead strategy {strategy!r}")
    idx = np.arange(in_leads) % n
    return _with_signal(record, record.signal[idx])


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    record: str
    report: str
    labels: tuple
    split: str


@dataclass(frozen=True)
class Sample:
    record: EcgRecord
    report: str
    labels: tuple
    split: str

    @property
    def signal(self):
        return self.record.signal


@dataclass(frozen=True)
class LoaderConfig:
    target_hz: float = 100.0
    window_seconds: float = 10.0
    normalize: bool = True
    in_leads: int = None
    lead_strategy: str = "replicate"

    @property
    def window_samples(self):
        return int(round(self.target_hz * self.window_seconds))


def read_manifest(path):
    """Parse a JSON-lines manifest into validated entries (no record I/O)."""
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"manifest not found: {path}")
    entries, seen = [], set()
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{i}: invalid JSON ({exc.msg})") from None
        missing = {"record", "report", "labels", "split"} - set(obj)
        if missing:
            raise ManifestError(f"{path}:{i}: missing keys {sorted(missing)}")
        labels = obj["labels"]
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ManifestError(f"{path}:{i}: labels must be an array of strings")
        split = obj["split"]
        if split != "train" and not str(split).startswith("test_"):
            raise ManifestError(f"{path}:{i}: unknown split {split!r}")
        if split != "train" and len(labels) != 1:
            raise ManifestError(f"{path}:{i}: test entries need exactly one label, got {labels}")
        if obj["record"] in seen:
            raise ManifestError(f"{path}:{i}: duplicate record path {obj['record']!r}")
        seen.add(obj["record"])
        entries.append(ManifestEntry(obj["record"], str(obj["report"]), tuple(labels), split))
    return entries


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({"record": e.record, "report": e.report,
                                 "labels": list(e.labels), "split": e.split}) + "\n")


def prepare(record, config):
    """Resample, crop, normalise, pad and lead-match one record."""
    if config is None:
        return record
    if config.target_hz:
        record = resample(record, config.target_hz)
    n = config.window_samples if config.window_seconds else None
    if n and record.header.samples_per_lead > n:
        record = fix_length(record, n)
    if config.normalize:
        record = zscore_normalize(record)
    if n and record.header.samples_per_lead < n:
        record = fix_length(record, n)
    if config.in_leads:
        record = match_leads(record, config.in_leads, config.lead_strategy)
    return record


def load_dataset(manifest_path, config=LoaderConfig(), splits=None):
    """Load every manifest entry as a :class:`Sample`, in manifest order.

    Record paths are relative to the manifest's directory. Duplicate record
    ids are rejected before any sample is yielded.
    """
    manifest_path = Path(manifest_path)
    entries = read_manifest(manifest_path)
    if splits is not None:
        splits = {splits} if isinstance(splits, str) else set(splits)
        entries = [e for e in entries if e.split in splits]
    root = manifest_path.parent
    records = []
    ids = {}
    for e in entries:
        rec = read_record(root / e.record)
        if rec.record_id in ids:
            raise ManifestError(f"duplicate record_id {rec.record_id!r} ({ids[rec.record_id]} and {e.record})")
        ids[rec.record_id] = e.record
        records.append(rec)
    return [Sample(prepare(rec, config), e.report, e.labels, e.split) for e, rec in zip(entries, records)]
