"""EDF (16-bit) reading and writing, hypnogram parsing, subject splits.

Layout reminder: a 256-byte fixed header, then 256 bytes per signal
(stored field-major: all labels, then all transducers, ...), then data
records, each holding ``samples_per_record[s]`` little-endian int16
values for every signal ``s`` in turn.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InconsistentLengths, Malformed, TooFewSubjects, UnknownToken
from .signal import (
    TARGET_HZ,
    EpochSet,
    Recording,
    SleepStage,
    epoch_split,
    quantile_scale,
    resample,
)

ANNOTATION_LABEL = "EDF Annotations"

# (name, width) in on-disk order
_FIXED_FIELDS = [
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration_s", 8),
    ("n_signals", 4),
]
_SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("phys_dim", 8),
    ("phys_min", 8),
    ("phys_max", 8),
    ("dig_min", 8),
    ("dig_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]


@dataclass
class EdfSignalHeader:
    label: str
    samples_per_record: int
    phys_min: float = -250.0
    phys_max: float = 250.0
    dig_min: int = -32768
    dig_max: int = 32767
    transducer: str = ""
    phys_dim: str = "uV"
    prefilter: str = ""
    reserved: str = ""

    @property
    def gain(self) -> float:
        return (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return (np.asarray(digital, dtype=np.float64) - self.dig_min) * self.gain + self.phys_min

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        d = np.round((np.asarray(physical, dtype=np.float64) - self.phys_min) / self.gain + self.dig_min)
        return np.clip(d, self.dig_min, self.dig_max).astype(np.int16)


@dataclass
class EdfHeader:
    n_records: int
    record_duration_s: float
    signals: list = field(default_factory=list)
    version: str = "0"
    patient_id: str = "X X X X"
    recording_id: str = "Startdate X X X X"
    start_date: str = "01.01.85"
    start_time: str = "00.00.00"
    reserved: str = ""

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    @property
    def header_bytes(self) -> int:
        return 256 * (1 + self.n_signals)

    def sample_rate(self, i: int) -> float:
        return self.signals[i].samples_per_record / self.record_duration_s


def _fmt_number(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value == int(value) and abs(value) < 1e7:
        return str(int(value))
    return repr(value)


def _field(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        # numeric fields may be shortened, text fields must fit
        raise Malformed(f"field {text!r} longer than {width} bytes")
    return raw.ljust(width, b" ")


def _num_field(value, width: int) -> bytes:
    text = _fmt_number(value)
    if len(text) > width:
        text = f"{float(value):.{max(width - 6, 1)}g}"[:width]
    return _field(text, width)


def write_edf(header: EdfHeader, signals: Sequence[np.ndarray], digital: bool = False) -> bytes:
    """Serialise ``signals`` (physical values unless ``digital``) as EDF bytes."""
    if len(signals) != header.n_signals:
        raise InconsistentLengths(f"{len(signals)} signals for {header.n_signals} headers")
    for sh in header.signals:
        if not sh.dig_min < sh.dig_max:
            raise Malformed(f"signal {sh.label!r}: dig_min must be below dig_max")
        if sh.phys_min == sh.phys_max:
            raise Malformed(f"signal {sh.label!r}: degenerate physical range")
    blocks = []
    for sh, sig in zip(header.signals, signals):
        sig = np.asarray(sig)
        expected = header.n_records * sh.samples_per_record
        if sig.size != expected:
            raise InconsistentLengths(
                f"signal {sh.label!r} has {sig.size} samples, header implies {expected}"
            )
        d = sig.astype(np.int16) if digital else sh.to_digital(sig)
        blocks.append(d.astype("<i2").reshape(header.n_records, sh.samples_per_record))

    out = io.BytesIO()
    fixed = {
        "version": header.version,
        "patient_id": header.patient_id,
        "recording_id": header.recording_id,
        "start_date": header.start_date,
        "start_time": header.start_time,
        "reserved": header.reserved,
    }
    for name, width in _FIXED_FIELDS:
        if name in fixed:
            out.write(_field(fixed[name], width))
        else:
            out.write(_num_field(getattr(header, name), width))
    for name, width in _SIGNAL_FIELDS:
        for sh in header.signals:
            value = getattr(sh, name)
            if isinstance(value, str):
                out.write(_field(value, width))
            else:
                out.write(_num_field(value, width))
    if blocks:
        records = np.concatenate(blocks, axis=1)
        out.write(records.tobytes())
    return out.getvalue()


def _ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise Malformed(f"non-ASCII bytes in {what}") from exc


def _number(raw: bytes, what: str, kind=float):
    text = _ascii(raw, what)
    try:
        return kind(float(text)) if kind is int and "." in text else kind(text)
    except ValueError as exc:
        raise Malformed(f"field {what} is not numeric: {text!r}") from exc


def read_edf(data: bytes, digital: bool = False) -> tuple[EdfHeader, list]:
    """Parse EDF bytes into a header and one array per signal.

    Values are physical unless ``digital``. EDF+ annotation channels are
    skipped with a warning; their slot in the returned list is ``None``.
    """
    data = bytes(data)
    if len(data) < 256:
        raise Malformed(f"file of {len(data)} bytes is shorter than the fixed header")
    pos = 0
    fixed = {}
    for name, width in _FIXED_FIELDS:
        fixed[name] = data[pos : pos + width]
        pos += width
    ns = _number(fixed["n_signals"], "n_signals", int)
    header_bytes = _number(fixed["header_bytes"], "header_bytes", int)
    if ns < 0 or header_bytes != 256 * (1 + ns):
        raise Malformed(f"header_bytes {header_bytes} inconsistent with {ns} signals")
    if len(data) < header_bytes:
        raise Malformed("file truncated inside the signal headers")
    duration = _number(fixed["record_duration_s"], "record_duration_s")
    n_records = _number(fixed["n_records"], "n_records", int)

    per_signal: dict = {name: [] for name, _ in _SIGNAL_FIELDS}
    for name, width in _SIGNAL_FIELDS:
        for _ in range(ns):
            per_signal[name].append(data[pos : pos + width])
            pos += width
    signals = []
    for i in range(ns):
        signals.append(
            EdfSignalHeader(
                label=_ascii(per_signal["label"][i], "label"),
                transducer=_ascii(per_signal["transducer"][i], "transducer"),
                phys_dim=_ascii(per_signal["phys_dim"][i], "phys_dim"),
                phys_min=_number(per_signal["phys_min"][i], "phys_min"),
                phys_max=_number(per_signal["phys_max"][i], "phys_max"),
                dig_min=_number(per_signal["dig_min"][i], "dig_min", int),
                dig_max=_number(per_signal["dig_max"][i], "dig_max", int),
                prefilter=_ascii(per_signal["prefilter"][i], "prefilter"),
                samples_per_record=_number(per_signal["samples_per_record"][i], "samples_per_record", int),
                reserved=_ascii(per_signal["reserved"][i], "reserved"),
            )
        )
    for sh in signals:
        if sh.samples_per_record < 0:
            raise Malformed(f"signal {sh.label!r}: negative samples_per_record")
        if sh.label != ANNOTATION_LABEL and not sh.dig_min < sh.dig_max:
            raise Malformed(f"signal {sh.label!r}: dig_min >= dig_max")
        if sh.label != ANNOTATION_LABEL and sh.phys_min == sh.phys_max:
            raise Malformed(f"signal {sh.label!r}: phys_min == phys_max")

    record_samples = sum(sh.samples_per_record for sh in signals)
    body = len(data) - header_bytes
    if n_records < 0:
        # -1 means "unknown" while recording; derive from the file size
        n_records = body // (2 * record_samples) if record_samples else 0
    if body < n_records * record_samples * 2:
        raise Malformed(f"data section holds {body} bytes, header implies {n_records * record_samples * 2}")
    header = EdfHeader(
        n_records=n_records,
        record_duration_s=duration,
        signals=signals,
        version=_ascii(fixed["version"], "version"),
        patient_id=_ascii(fixed["patient_id"], "patient_id"),
        recording_id=_ascii(fixed["recording_id"], "recording_id"),
        start_date=_ascii(fixed["start_date"], "start_date"),
        start_time=_ascii(fixed["start_time"], "start_time"),
        reserved=_ascii(fixed["reserved"], "reserved"),
    )
    if record_samples == 0:
        return header, [np.zeros(0) for _ in signals]

    raw = np.frombuffer(data, dtype="<i2", count=n_records * record_samples, offset=header_bytes)
    records = raw.reshape(n_records, record_samples)
    out: list = []
    start = 0
    for sh in signals:
        stop = start + sh.samples_per_record
        if sh.label == ANNOTATION_LABEL:
            warnings.warn("skipping EDF+ annotation channel", stacklevel=2)
            out.append(None)
        else:
            digital_values = records[:, start:stop].reshape(-1).astype(np.int16)
            out.append(digital_values if digital else sh.to_physical(digital_values))
        start = stop
    return header, out


_TOKENS = {
    "W": SleepStage.W,
    "WAKE": SleepStage.W,
    "S0": SleepStage.W,
    "N1": SleepStage.N1,
    "S1": SleepStage.N1,
    "N2": SleepStage.N2,
    "S2": SleepStage.N2,
    "N3": SleepStage.N3,
    "N4": SleepStage.N3,
    "S3": SleepStage.N3,
    "S4": SleepStage.N3,
    "REM": SleepStage.REM,
    "R": SleepStage.REM,
    "MOVEMENT": None,
    "UNKNOWN": None,
}


def parse_stage(token: str) -> Optional[SleepStage]:
    """Map one hypnogram token to an AASM stage; ``None`` means excluded."""
    key = token.strip().upper()
    if key not in _TOKENS:
        raise UnknownToken(f"unknown hypnogram token {token!r}")
    return _TOKENS[key]


def load_hypnogram(text: str) -> list:
    """One label per line; R&K stages 3 and 4 merge into N3."""
    return [parse_stage(line) for line in text.splitlines() if line.strip()]


def dump_hypnogram(labels) -> str:
    return "".join(("UNKNOWN" if l is None else SleepStage(l).name) + "\n" for l in labels)


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    signal_path: str
    label_path: str
    channel: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple = ()

    @property
    def subjects(self) -> list:
        return sorted({e.subject_id for e in self.entries})

    def for_subjects(self, subjects) -> "DatasetManifest":
        keep = set(subjects)
        return DatasetManifest(tuple(e for e in self.entries if e.subject_id in keep))


MANIFEST_COLUMNS = ["subject_id", "signal_path", "label_path", "channel"]


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise Malformed(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
        entries = []
        for row in reader:
            if any(not row[c] for c in MANIFEST_COLUMNS):
                raise Malformed(f"incomplete manifest row {row}")
            entries.append(ManifestEntry(**{c: row[c] for c in MANIFEST_COLUMNS}))
    return DatasetManifest(tuple(entries))


def write_manifest(manifest: DatasetManifest, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            writer.writerow([e.subject_id, e.signal_path, e.label_path, e.channel])


def split_subjects(subjects, seed: int) -> tuple[list, list, list]:
    """Seeded subject partition: ``ceil(n / 10)`` each for validation and test."""
    subjects = list(subjects)
    n = len(subjects)
    if n < 3:
        raise TooFewSubjects(f"need at least 3 subjects, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [subjects[i] for i in order]
    n_hold = math.ceil(n / 10)
    return shuffled[2 * n_hold :], shuffled[n_hold : 2 * n_hold], shuffled[:n_hold]


def subject_split(manifest: DatasetManifest, seed: int):
    """Partition subjects into train/val/test manifests (80/10/10 by count).

    Validation and test each receive ``ceil(n / 10)`` subjects, the rest
    go to training.
    """
    train, val, test = split_subjects(manifest.subjects, seed)
    return manifest.for_subjects(train), manifest.for_subjects(val), manifest.for_subjects(test)


def load_recording(entry: ManifestEntry, base_dir=None, scale: bool = True) -> Recording:
    """Read one manifest entry, resample its channel to 100 Hz, optionally IQR-scale it."""
    base = Path(base_dir) if base_dir is not None else Path(".")
    sig_path = Path(entry.signal_path)
    lab_path = Path(entry.label_path)
    sig_path = sig_path if sig_path.is_absolute() else base / sig_path
    lab_path = lab_path if lab_path.is_absolute() else base / lab_path
    header, signals = read_edf(sig_path.read_bytes())
    labels = [sh.label for sh in header.signals]
    if entry.channel not in labels:
        raise Malformed(f"{sig_path}: channel {entry.channel!r} not in {labels}")
    idx = labels.index(entry.channel)
    x = resample(signals[idx], header.sample_rate(idx), TARGET_HZ)
    if scale:
        x = quantile_scale(x)
    stages = load_hypnogram(lab_path.read_text(encoding="utf-8"))
    return Recording(x, float(TARGET_HZ), entry.subject_id, tuple(stages))


def load_manifest_epochs(manifest: DatasetManifest, base_dir=None, scale: bool = True) -> EpochSet:
    sets = [epoch_split(load_recording(e, base_dir, scale)) for e in manifest.entries]
    sets = [s for s in sets if len(s)]
    if not sets:
        raise Malformed("manifest yielded no labelled epochs")
    return EpochSet.concat(sets)


def single_channel_header(label: str, n_records: int, fs: float, record_s: float = 30.0,
                          phys_range: tuple = (-250.0, 250.0)) -> EdfHeader:
    spr = int(round(fs * record_s))
    return EdfHeader(
        n_records=n_records,
        record_duration_s=record_s,
        signals=[EdfSignalHeader(label, spr, phys_min=phys_range[0], phys_max=phys_range[1])],
    )


__all__ = [
    "EdfHeader",
    "EdfSignalHeader",
    "DatasetManifest",
    "ManifestEntry",
    "read_edf",
    "write_edf",
    "load_hypnogram",
    "split_subjects",
    "dump_hypnogram",
    "parse_stage",
    "read_manifest",
    "write_manifest",
    "subject_split",
    "load_recording",
    "load_manifest_epochs",
    "single_channel_header",
]
