"""Synthetic ECG-report corpora for fixtures, demos and sanity runs."""

from pathlib import Path

import numpy as np

from .signal_io import (
    EcgRecord,
    ManifestEntry,
    RecordHeader,
    Sample,
    write_manifest,
    write_wfdb,
    zscore_normalize,
)

DEFAULT_CLASSES = ("Normal ECG", "Myocardial Infarction", "Conduction Disturbance", "Hypertrophy")
_FILLERS = ("", "otherwise normal", "borderline", "unconfirmed report", "possible artifact",
            "compared with previous", "moderate", "probable")
# few phrasings per class: enough variety to exercise distinct reports without
# inviting the encoder to memorise individual records
CLASS_REPORT_FILLERS = ("", "otherwise normal", "borderline")


_MORPHOLOGY = (
    # (beats per minute, complex width in seconds, shape)
    (60.0, 0.03, "spike"),
    (100.0, 0.04, "plateau"),
    (45.0, 0.09, "wide"),
    (140.0, 0.03, "biphasic"),
    (80.0, 0.05, "inverted"),
    (120.0, 0.03, "spike"),
)


def class_waveform(k, n_leads, n_samples, rate, rng):
    """One record of morphology class ``k``: a beat train whose rate and shape depend on ``k``."""
    bpm, width, shape = _MORPHOLOGY[k % len(_MORPHOLOGY)]
    t = np.arange(n_samples) / rate
    period = 60.0 / (bpm * rng.uniform(0.95, 1.05))
    # seconds from the nearest complex centre
    d = ((t + rng.uniform(0, period)) % period) - period / 2
    beat = np.exp(-0.5 * (d / width) ** 2)
    if shape == "plateau":
        beat = beat + 0.6 * ((d > 0.05) & (d < 0.05 + 0.3 * period))
    elif shape == "biphasic":
        beat = beat - np.exp(-0.5 * ((d - 2.5 * width) / width) ** 2)
    elif shape == "inverted":
        beat = -beat
    leads = []
    for lead in range(n_leads):
        gain = rng.uniform(0.8, 1.2) * (1.0 if lead % 2 == 0 else -0.6)
        leads.append(gain * beat + 0.05 * rng.standard_normal(n_samples))
    return np.stack(leads)


def make_class_samples(n_per_class, classes=DEFAULT_CLASSES, n_leads=2, n_samples=1000, rate=100.0,
                       seed=0, split="train", fillers=CLASS_REPORT_FILLERS, normalize=True):
    """Balanced samples whose morphology identifies the class and whose report names it."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_per_class):
        for k, label in enumerate(classes):
            sig = class_waveform(k, n_leads, n_samples, rate, rng)
            filler = fillers[rng.integers(len(fillers))] if fillers else ""
            report = f"{label.lower()} {filler}".strip()
            rid = f"{split}_{k}_{i:04d}"
            header = RecordHeader(rid, n_leads, rate, n_samples, (1.0,) * n_leads, (0,) * n_leads, "csv")
            rec = EcgRecord(header, sig)
            out.append(Sample(zscore_normalize(rec) if normalize else rec, report, (label,), split))
    return out


def make_pair_samples(n_pairs, n_leads=2, n_samples=64, rate=50.0, seed=0):
    """``n_pairs`` unrelated ECG-report pairs (distinct noise records, distinct reports)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        sig = rng.standard_normal((n_leads, n_samples))
        header = RecordHeader(f"pair{i}", n_leads, rate, n_samples, (1.0,) * n_leads, (0,) * n_leads, "csv")
        report = f"synthetic finding {i} {_FILLERS[i % len(_FILLERS)]}".strip()
        out.append(Sample(EcgRecord(header, sig), report, (f"finding {i}",), "train"))
    return out


def write_corpus(directory, samples, gain=200.0, manifest_name="manifest.jsonl"):
    """Write samples as WFDB-like records plus a JSON-lines manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        write_wfdb(directory / "records", s.record.record_id, s.record.signal, s.record.sampling_rate, gain=gain)
        entries.append(ManifestEntry(f"records/{s.record.record_id}.hea", s.report, tuple(s.labels), s.split))
    path = directory / manifest_name
    write_manifest(path, entries)
    return path
