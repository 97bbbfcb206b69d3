"""Corpus layout, trace file I/O, and chronological train/test splitting.

A corpus is a directory with a ``manifest.tsv`` and one ``.ecg`` text file
per recording.  Manifest columns (tab separated, ``#`` lines ignored)::

    subject  session  recording  path  sample_rate_hz

Trace files are UTF-8 text: a header line ``# sample_rate_hz=<value>``
followed by one decimal voltage (millivolts) per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

TRACE_SUFFIX = ".ecg"
MANIFEST_NAME = "manifest.tsv"
SCHEMA_VERSION = 1


class Session(Enum):
    """Data collection session label.  S1 precedes S2."""

    S1 = "S1"
    S2 = "S2"

    @classmethod
    def parse(cls, token: str) -> "Session":
        try:
            return cls(token.strip().upper())
        except ValueError:
            raise ValueError(f"unknown session label {token!r} (expected S1 or S2)") from None

    def __str__(self) -> str:
        return self.value

    def __lt__(self, other) -> bool:
        if not isinstance(other, Session):
            return NotImplemented
        return self.value < other.value


class CorpusError(ValueError):
    """Raised for malformed corpora; carries the offending file and line."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path if line is None else f"{self.path}:{line}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class EcgTrace:
    """One uniformly sampled single-lead voltage recording.

    Samples are millivolts, stored as an immutable float64 array.
    """

    subject: str
    session: Session
    sample_rate_hz: float
    samples: np.ndarray
    recording_index: int = 0

    def __post_init__(self):
        if not self.subject:
            raise ValueError("subject id must be non-empty")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not np.isfinite(samples).all():
            raise ValueError("samples contain non-finite values")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __eq__(self, other) -> bool:
        if not isinstance(other, EcgTrace):
            return NotImplemented
        return (
            self.subject == other.subject
            and self.session == other.session
            and self.recording_index == other.recording_index
            and self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class TraceEntry:
    """One manifest row; ``path`` is relative to the corpus root."""

    subject: str
    session: Session
    recording: int
    path: str
    sample_rate_hz: float

    @property
    def key(self) -> tuple[str, Session, int]:
        return (self.subject, self.session, self.recording)


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[TraceEntry, ...]
    schema_version: int = SCHEMA_VERSION

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted({e.subject for e in self.entries}))

    @property
    def sessions(self) -> tuple[Session, ...]:
        return tuple(sorted({e.session for e in self.entries}, key=lambda s: s.value))


@dataclass(frozen=True, eq=False)
class Corpus:
    """A validated manifest plus all traces, keyed by (subject, session, recording)."""

    manifest: CorpusManifest
    traces: Mapping[tuple[str, Session, int], EcgTrace]
    root: Path | None = None

    @property
    def subjects(self) -> tuple[str, ...]:
        return self.manifest.subjects

    def recordings(self, subject: str, session: Session) -> list[EcgTrace]:
        found = [t for (s, ses, _r), t in self.traces.items() if s == subject and ses == session]
        return sorted(found, key=lambda t: t.recording_index)

    def session_trace(self, subject: str, session: Session) -> EcgTrace:
        """All recordings of one (subject, session) concatenated in recording order."""
        return concat_recordings(self.recordings(subject, session))


def concat_recordings(traces: list[EcgTrace]) -> EcgTrace:
    """Join recordings of one (subject, session) in recording-index order."""
    if not traces:
        raise ValueError("no recordings to concatenate")
    ordered = sorted(traces, key=lambda t: t.recording_index)
    first = ordered[0]
    for t in ordered[1:]:
        if (t.subject, t.session) != (first.subject, first.session):
            raise ValueError("cannot concatenate recordings of different subject/session")
        if t.sample_rate_hz != first.sample_rate_hz:
            raise ValueError("cannot concatenate recordings with different sample rates")
    samples = np.concatenate([t.samples for t in ordered])
    return EcgTrace(first.subject, first.session, first.sample_rate_hz, samples, recording_index=0)


def chronological_split(trace: EcgTrace, train_fraction: float) -> tuple[EcgTrace, EcgTrace]:
    """Split a trace into leading and trailing parts, never shuffled.

    The first part holds exactly ``floor(train_fraction * n)`` samples; the
    two parts concatenate back to the original and keep their labels.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = trace.n_samples
    n_train = math.floor(train_fraction * n)
    if n_train < 1 or n_train >= n:
        raise ValueError(
            f"degenerate split: {n} samples at fraction {train_fraction} "
            f"leaves parts of {n_train} and {n - n_train}"
        )
    head = replace(trace, samples=trace.samples[:n_train])
    tail = replace(trace, samples=trace.samples[n_train:])
    return head, tail


def split_index(n_samples: int, train_fraction: float) -> int:
    """First sample index that belongs to the test part of a chronological split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    return math.floor(train_fraction * n_samples)


# ---------------------------------------------------------------------------
# trace file codec

_HEADER_PREFIX = "# sample_rate_hz="


def write_trace_file(path: Path, trace: EcgTrace) -> None:
    lines = [_HEADER_PREFIX + repr(float(trace.sample_rate_hz))]
    lines.extend(repr(float(v)) for v in trace.samples)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_file(path: Path) -> tuple[float, np.ndarray]:
    """Parse one trace file; returns (sample_rate_hz, samples).

    Malformed or non-finite values are reported with the offending line number.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as exc:
        raise CorpusError(f"cannot read trace file: {exc}", path=path) from exc
    if not first.startswith(_HEADER_PREFIX):
        raise CorpusError(f"missing header line {_HEADER_PREFIX!r}<value>", path=path, line=1)
    try:
        rate = float(first[len(_HEADER_PREFIX):].strip())
    except ValueError:
        raise CorpusError("malformed sample rate in header", path=path, line=1) from None
    if rate <= 0 or not math.isfinite(rate):
        raise CorpusError(f"sample rate must be positive and finite, got {rate}", path=path, line=1)

    try:
        samples = np.loadtxt(path, comments="#", dtype=np.float64, ndmin=1)
    except ValueError:
        _raise_at_bad_line(path)
        raise  # unreachable
    if samples.ndim != 1:
        _raise_at_bad_line(path)
    if samples.size == 0:
        raise CorpusError("trace file contains no samples", path=path)
    if not np.isfinite(samples).all():
        _raise_at_bad_line(path)
    return rate, samples


def _raise_at_bad_line(path: Path) -> None:
    """Rescan line by line to locate the first malformed or non-finite value."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            if len(text.split()) != 1:
                raise CorpusError(f"expected one value per line, got {text!r}", path=path, line=lineno)
            try:
                value = float(text)
            except ValueError:
                raise CorpusError(f"malformed sample value {text!r}", path=path, line=lineno) from None
            if not math.isfinite(value):
                raise CorpusError(f"non-finite sample value {text!r}", path=path, line=lineno)
    raise CorpusError("trace file failed to parse", path=path)


# ---------------------------------------------------------------------------
# manifest codec and corpus load/save

def write_manifest(path: Path, manifest: CorpusManifest) -> None:
    lines = [f"# schema_version={manifest.schema_version}", "# subject\tsession\trecording\tpath\tsample_rate_hz"]
    for e in manifest.entries:
        lines.append(
            "\t".join([e.subject, e.session.value, str(e.recording), e.path, repr(float(e.sample_rate_hz))])
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> CorpusManifest:
    path = Path(path)
    if not path.is_file():
        raise CorpusError("missing manifest", path=path)
    entries: list[TraceEntry] = []
    seen: dict[tuple[str, Session, int], int] = {}
    schema = SCHEMA_VERSION
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.rstrip("\n")
            if not text.strip():
                continue
            if text.lstrip().startswith("#"):
                stripped = text.lstrip("# ").strip()
                if stripped.startswith("schema_version="):
                    try:
                        schema = int(stripped.split("=", 1)[1])
                    except ValueError:
                        raise CorpusError("malformed schema_version", path=path, line=lineno) from None
                continue
            cols = text.split("\t")
            if len(cols) != 5:
                raise CorpusError(f"expected 5 tab-separated columns, got {len(cols)}", path=path, line=lineno)
            subject, session_tok, recording_tok, rel_path, rate_tok = cols
            if not subject:
                raise CorpusError("empty subject id", path=path, line=lineno)
            try:
                session = Session.parse(session_tok)
            except ValueError as exc:
                raise CorpusError(str(exc), path=path, line=lineno) from None
            try:
                recording = int(recording_tok)
                rate = float(rate_tok)
            except ValueError:
                raise CorpusError("malformed recording index or sample rate", path=path, line=lineno) from None
            entry = TraceEntry(subject, session, recording, rel_path, rate)
            if entry.key in seen:
                raise CorpusError(
                    f"duplicate trace key {entry.key} (first seen on line {seen[entry.key]})",
                    path=path,
                    line=lineno,
                )
            seen[entry.key] = lineno
            entries.append(entry)
    return CorpusManifest(entries=tuple(entries), schema_version=schema)


def load_corpus(root: Path) -> Corpus:
    """Load and validate a corpus directory.

    Loading is pure and read-only: repeated loads yield identical values.
    """
    root = Path(root)
    manifest = read_manifest(root / MANIFEST_NAME)
    traces: dict[tuple[str, Session, int], EcgTrace] = {}
    for entry in manifest.entries:
        trace_path = root / entry.path
        if not trace_path.is_file():
            raise CorpusError(f"referenced trace file does not exist: {entry.path}", path=root / MANIFEST_NAME)
        rate, samples = read_trace_file(trace_path)
        if rate != entry.sample_rate_hz:
            raise CorpusError(
                f"sample rate {rate} disagrees with manifest value {entry.sample_rate_hz}",
                path=trace_path,
                line=1,
            )
        try:
            trace = EcgTrace(entry.subject, entry.session, rate, samples, entry.recording)
        except ValueError as exc:
            raise CorpusError(str(exc), path=trace_path) from exc
        traces[entry.key] = trace
    return Corpus(manifest=manifest, traces=traces, root=root)


def trace_filename(subject: str, session: Session, recording: int) -> str:
    return f"{subject}_{session.value}_{recording}{TRACE_SUFFIX}"


def save_corpus(root: Path, traces: list[EcgTrace]) -> Corpus:
    """Write traces and a manifest under ``root``; returns the saved corpus."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    keyed: dict[tuple[str, Session, int], EcgTrace] = {}
    ordered = sorted(traces, key=lambda t: (t.subject, t.session.value, t.recording_index))
    for trace in ordered:
        key = (trace.subject, trace.session, trace.recording_index)
        if key in keyed:
            raise CorpusError(f"duplicate trace key {key}")
        name = trace_filename(*key)
        write_trace_file(root / name, trace)
        entries.append(TraceEntry(trace.subject, trace.session, trace.recording_index, name, trace.sample_rate_hz))
        keyed[key] = trace
    manifest = CorpusManifest(entries=tuple(entries))
    write_manifest(root / MANIFEST_NAME, manifest)
    return Corpus(manifest=manifest, traces=keyed, root=root)
